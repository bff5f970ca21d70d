#include "urgr/nn/params.hpp"

#include <cmath>

#include "urgr/error.hpp"

namespace urgr::nn {

Var& ParamStore::add(const std::string& name, Tensor init, bool trainable) {
  if (contains(name)) throw InvalidArgument("duplicate parameter name " + name);
  auto [it, inserted] = entries_.emplace(name, Entry{Var(std::move(init), trainable), trainable});
  return it->second.var;
}

Var& ParamStore::get(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw InvalidArgument("unknown parameter " + name);
  return it->second.var;
}

const Var& ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw InvalidArgument("unknown parameter " + name);
  return it->second.var;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, entry] : entries_) out.push_back(name);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [name, entry] : entries_) entry.var.zero_grad();
}

std::size_t ParamStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [name, entry] : entries_) {
    if (entry.trainable) n += entry.var.value().size();
  }
  return n;
}

bool ParamStore::all_finite() const {
  for (const auto& [name, entry] : entries_) {
    if (!entry.var.value().all_finite()) return false;
  }
  return true;
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [name, entry] : entries_) out.add(name, entry.var.value(), entry.trainable);
  return out;
}

Tensor lecun_normal(const Shape& shape, int fan_in, Rng& rng) {
  Tensor t(shape);
  const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.values()) v = rng.normal(0.0, sd);
  return t;
}

Tensor xavier_normal(const Shape& shape, int fan_in, int fan_out, Rng& rng) {
  Tensor t(shape);
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.values()) v = rng.normal(0.0, sd);
  return t;
}

}  // namespace urgr::nn
