#pragma once

#include <map>
#include <string>

#include "urgr/nn/params.hpp"

namespace urgr::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Decoupled decay, applied to tensors of rank >= 2 only.
  double weight_decay = 0.0;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
};

class AdamW {
 public:
  AdamW(ParamStore& params, AdamConfig cfg);

  // Applies one update from the accumulated gradients, then zeroes them.
  void step();
  long steps() const noexcept { return steps_; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };
  ParamStore& params_;
  AdamConfig cfg_;
  std::map<std::string, Moments> state_;
  long steps_ = 0;
};

}  // namespace urgr::nn
