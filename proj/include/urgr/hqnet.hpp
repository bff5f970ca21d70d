#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "urgr/image.hpp"
#include "urgr/nn/autograd.hpp"
#include "urgr/nn/params.hpp"
#include "urgr/nn/random.hpp"

namespace urgr::hqnet {

struct CannyConfig {
  double sigma = 1.4;
  double low = 0.1;
  double high = 0.3;
  bool operator==(const CannyConfig&) const = default;
};

/// Architecture of the three-pathway enhancement network. Latent and channel
/// sizes are stored as effective (already scaled) values; `latent_total` is
/// always their recomputed sum.
struct HQNetConfig {
  int input_size = 512;
  double scale_factor = 1.0;
  int latent_edge = 284;
  int latent_attn = 552;
  int latent_ae = 2048;
  int latent_total = 2884;
  CannyConfig canny;
  int attention_heads = 4;
  int attention_grid = 16;  // token grid of the attention pathway
  int hq_width1 = 32;
  int hq_width2 = 64;
  int encoder_levels = 4;
  int encoder_width = 32;  // first encoder level; doubles per level
  int latent_grid = 4;     // spatial grid flattened into each latent
  int refine_layers = 0;   // extra full-resolution convs before the output
  int refine_width = 64;
  double dropout = 0.4;    // on the fused latent, training only
  bool residual = false;

  /// Full-size defaults with every width and latent scaled by `scale`
  /// (ceil), at the given input resolution.
  static HQNetConfig scaled(double scale, int input_size);

  int encoder_width_at(int level) const { return encoder_width << level; }
  int bottleneck_size() const { return input_size >> encoder_levels; }
  // Throws InvalidArgument on inconsistent sizes.
  void validate() const;
  bool operator==(const HQNetConfig&) const = default;
};

void to_json(nlohmann::json& j, const HQNetConfig& cfg);
void from_json(const nlohmann::json& j, HQNetConfig& cfg);

struct HQNet {
  HQNetConfig config;
  nn::ParamStore params;

  static HQNet init(const HQNetConfig& cfg, std::uint64_t seed);
};

struct ForwardOptions {
  bool training = false;
  nn::Rng* rng = nullptr;  // required when training with dropout
  // When set, every attention matrix [B*heads, T, T] is appended here.
  std::vector<nn::Tensor>* attention_probe = nullptr;
};

/// Bifurcated block: conv/BN/SELU stack times a bicubically upsampled
/// strided conv, fused by a final conv. Spatial size is preserved.
nn::Var hq_layer(const nn::Var& x, const nn::ParamStore& params, const std::string& prefix, bool training);

/// softmax(QK^T / sqrt(d_k)) V per head, concatenated and projected.
/// x is [B, T, D].
nn::Var self_attention(const nn::Var& x, const nn::ParamStore& params, const std::string& prefix, int heads,
                       std::vector<nn::Tensor>* attention_probe = nullptr);

// Pathways over a batch. `edges` holds the Canny maps [N, 1, S, S].
nn::Var edge_pathway(const nn::Var& edges, const HQNet& net, const ForwardOptions& opts);
nn::Var attention_pathway(const nn::Var& x, const HQNet& net, const ForwardOptions& opts);

struct AutoencoderOutput {
  nn::Var latent;
  std::vector<nn::Var> skips;  // finest level first
};
AutoencoderOutput autoencoder_pathway(const nn::Var& x, const HQNet& net, const ForwardOptions& opts);

/// Canny edge maps of a batch as [N, 1, S, S].
nn::Tensor edge_maps(std::span<const Image> batch, const CannyConfig& canny);

struct ForwardResult {
  nn::Var output;        // [N, 3, S, S] in (0,1)
  nn::Var fused_latent;  // [N, latent_total]
};

/// x is [N, 3, S, S]; `edges` the matching Canny maps. Training mode updates
/// batch-norm running statistics in place.
ForwardResult forward(const HQNet& net, const nn::Var& x, const nn::Var& edges, const ForwardOptions& opts);
ForwardResult forward(const HQNet& net, std::span<const Image> batch, const ForwardOptions& opts);

/// Evaluation-mode enhancement of one frame.
Image enhance(const HQNet& net, const Image& img);

struct TrainConfig {
  double lr = 0.00485;
  int batch_size = 16;
  double weight_decay = 0.0787;
  int epochs = 10;
  double clip_norm = 0.0;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

struct DegradationPair {
  Image degraded;
  Image clean;
};

struct TrainResult {
  HQNet model;
  std::vector<double> epoch_loss;
};

/// Mini-batch AdamW on the mean squared error between enhanced degraded
/// frames and their clean counterparts. Batches are accumulated in sample
/// order, so a fixed seed reproduces the run exactly.
TrainResult train(std::span<const DegradationPair> pairs, const HQNetConfig& cfg, const TrainConfig& hyper,
                  std::uint64_t seed);

}  // namespace urgr::hqnet
