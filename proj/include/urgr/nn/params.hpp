#pragma once

#include <map>
#include <string>
#include <vector>

#include "urgr/nn/autograd.hpp"
#include "urgr/nn/random.hpp"

namespace urgr::nn {

/// Named tensors of a model. Trainable entries are optimised; the rest are
/// buffers (batch-norm running statistics) that only persist.
/// Iteration order is lexicographic by name.
class ParamStore {
 public:
  struct Entry {
    Var var;
    bool trainable = true;
  };

  Var& add(const std::string& name, Tensor init, bool trainable = true);
  Var& get(const std::string& name);
  const Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  std::vector<std::string> names() const;
  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }

  void zero_grad();
  std::size_t trainable_count() const;
  bool all_finite() const;

  // Deep copy: new nodes with the same values.
  ParamStore clone() const;

 private:
  std::map<std::string, Entry> entries_;
};

// Normal(0, 1/fan_in).
Tensor lecun_normal(const Shape& shape, int fan_in, Rng& rng);
// Normal(0, 2/(fan_in+fan_out)).
Tensor xavier_normal(const Shape& shape, int fan_in, int fan_out, Rng& rng);

}  // namespace urgr::nn
