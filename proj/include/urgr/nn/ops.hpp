#pragma once

#include <cstdint>
#include <vector>

#include "urgr/nn/autograd.hpp"
#include "urgr/nn/random.hpp"

namespace urgr::nn {

// Elementwise, shapes must match exactly.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// a + b where b's shape is a suffix of a's (b repeats over leading axes).
Var add_broadcast(const Var& a, const Var& b);

Var sum(const Var& a);
Var mean(const Var& a);
// Scalar sum(a * w) with a constant weight tensor.
Var weighted_sum(const Var& a, const Tensor& w);

Var reshape(const Var& a, Shape shape);
Var permute(const Var& a, const std::vector<int>& perm);
Var concat(const std::vector<Var>& parts, int axis);
// Mean over one axis; the axis is removed.
Var mean_axis(const Var& a, int axis);

// x [..., K] times w [K, N] plus optional b [N].
Var linear(const Var& x, const Var& w, const Var& b = {});
// a [B, M, K] times b [B, K, N], or b [B, N, K] when transpose_b.
Var bmm(const Var& a, const Var& b, bool transpose_b = false);

// x [N, C, H, W], w [O, C, k, k], optional b [O]; zero padding.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride = 1, int pad = 0);

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};
// Per-channel normalisation of x [N, C, H, W]. Training uses batch statistics
// and updates the running buffers in place; evaluation uses the buffers.
Var batch_norm2d(const Var& x, const Var& gamma, const Var& beta, Var& running_mean, Var& running_var,
                 bool training, BatchNormOptions opts = {});

// Normalises the last axis.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

Var selu(const Var& x);

/// While alive, folds the sign of every SELU input evaluated on this thread
/// into a hash. Two evaluations with different hashes lie on opposite sides
/// of an activation kink.
class KinkTrace {
 public:
  KinkTrace();
  ~KinkTrace();
  KinkTrace(const KinkTrace&) = delete;
  KinkTrace& operator=(const KinkTrace&) = delete;

  std::uint64_t hash() const noexcept { return hash_; }
  void record(bool positive);

 private:
  KinkTrace* previous_;
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};
Var sigmoid(const Var& x);
Var gelu(const Var& x);

// Softmax over the last axis.
Var softmax(const Var& x);

// Split the last axis into value (first half) and gate (second half):
// value * sigmoid(gate).
Var glu(const Var& x);

// Inverted dropout. Identity when rate == 0.
Var dropout(const Var& x, double rate, Rng& rng);

Var avg_pool2d(const Var& x, int k);
Var upsample_nearest2d(const Var& x, int factor);
// Bicubic resampling of every plane of x [N, C, H, W] (no clamping).
Var resize_bicubic2d(const Var& x, int out_h, int out_w);

// Mean squared error over all elements.
Var mse_loss(const Var& pred, const Var& target);
// Mean over rows of -log softmax(logits)[label], labels 0-based.
Var cross_entropy_logits(const Var& logits, const std::vector<int>& labels);

}  // namespace urgr::nn
