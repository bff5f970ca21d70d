#include "urgr/nn/optim.hpp"

#include <cmath>

namespace urgr::nn {

AdamW::AdamW(ParamStore& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
  for (const auto& [name, entry] : params_.entries()) {
    if (entry.trainable) state_.emplace(name, Moments{Tensor(entry.var.shape()), Tensor(entry.var.shape())});
  }
}

void AdamW::step() {
  ++steps_;
  double clip = 1.0;
  if (cfg_.clip_norm > 0.0) {
    double sq = 0.0;
    for (auto& [name, entry] : params_.entries()) {
      if (entry.trainable && entry.var.has_grad()) {
        for (double g : entry.var.grad().values()) sq += g * g;
      }
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (auto& [name, entry] : params_.entries()) {
    if (!entry.trainable || !entry.var.has_grad()) continue;
    Moments& mom = state_.at(name);
    Tensor& value = entry.var.mutable_value();
    Tensor& grad = entry.var.grad();
    const bool decay = value.rank() >= 2 && cfg_.weight_decay > 0.0;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i] * clip;
      mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g;
      mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      if (decay) value[i] -= cfg_.lr * cfg_.weight_decay * value[i];
      value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    grad.fill(0.0);
  }
}

}  // namespace urgr::nn
