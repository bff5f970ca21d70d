#pragma once

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "urgr/focus.hpp"
#include "urgr/hqnet.hpp"
#include "urgr/image.hpp"
#include "urgr/nn/autograd.hpp"
#include "urgr/nn/params.hpp"
#include "urgr/nn/random.hpp"
#include "urgr/pixelgraph.hpp"

namespace urgr::gvit {

inline constexpr int kNumClasses = 6;

/// 1-based gesture index -> name: null, pointing, thumbs-up, thumbs-down,
/// beckoning, stop.
const std::string& class_name(int index);
// Inverse of class_name; throws InvalidArgument for unknown names.
int class_index(const std::string& name);

struct VitConfig {
  int token_grid = 8;
  int embed_dim = 64;
  int depth = 4;
  int heads = 4;
  int mlp_ratio = 2;
  bool operator==(const VitConfig&) const = default;
};

struct GViTConfig {
  int graph_grid = 64;
  // Output widths of the two GC layers before GLU halves them.
  std::array<int, 2> gc_dims{16, 32};
  VitConfig vit;
  double dropout_between_gc = 0.4;
  int num_classes = kNumClasses;

  void validate() const;
  int patch() const { return graph_grid / vit.token_grid; }
  bool operator==(const GViTConfig&) const = default;
};

void to_json(nlohmann::json& j, const GViTConfig& cfg);
void from_json(const nlohmann::json& j, GViTConfig& cfg);

struct GViT {
  GViTConfig config;
  nn::ParamStore params;
  std::shared_ptr<const graph::NormalizedPropagation> propagation;

  static GViT init(const GViTConfig& cfg, std::uint64_t seed);
  // Rebuilds the propagation operator for `config` around existing params.
  static GViT from_params(const GViTConfig& cfg, nn::ParamStore params);
};

struct ClassDistribution {
  std::array<double, kNumClasses> logits{};
  std::array<double, kNumClasses> probs{};

  static ClassDistribution from_logits(std::span<const double> logits);
};

/// Pre-norm transformer over tokens [B, T, E]: learned positional encoding,
/// depth x (attention + GELU MLP, both residual), final layer norm.
nn::Var vit_encode(const nn::Var& tokens, const nn::ParamStore& params, const VitConfig& cfg,
                   std::vector<nn::Tensor>* attention_probe = nullptr);

struct ForwardOptions {
  bool training = false;
  nn::Rng* rng = nullptr;
  std::vector<nn::Tensor>* attention_probe = nullptr;
};

/// Class logits [N, 6] for images resized to the graph grid.
nn::Var forward_logits(const GViT& net, std::span<const Image> batch, const ForwardOptions& opts = {});

/// Evaluation-mode distribution of one focused frame.
ClassDistribution gvit_forward(const GViT& net, const Image& img);

/// argmax, lowest index on ties; 1-based.
int classify(const ClassDistribution& dist);

/// -log probs[label] via log-sum-exp over the logits; label is 1-based.
double cross_entropy(const ClassDistribution& dist, int label);

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 16;
  int epochs = 20;
  double weight_decay = 0.0;
  double clip_norm = 0.0;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

struct LabeledImage {
  Image image;  // focused (and optionally enhanced) frame
  int label = 1;
};

struct TrainResult {
  GViT model;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;  // on the training batches, training mode
};

/// Mini-batch Adam on cross-entropy. Images are resized to the graph grid
/// once up front; batch order comes from the seeded shuffle.
TrainResult train(std::span<const LabeledImage> data, const GViTConfig& cfg, const TrainConfig& hyper,
                  std::uint64_t seed);

struct InferResult {
  bool no_user = false;
  int label = 0;
  double certainty = 0.0;
  ClassDistribution dist;
};

void to_json(nlohmann::json& j, const InferResult& r);

/// Prepares a frame for the classifier: focus, then enhancement when an
/// HQ-Net is given. The focus target must match the HQ-Net input size.
Image prepare(const Image& frame, const focus::BBox& detected, const focus::FocusConfig& focus_cfg,
              const hqnet::HQNet* enhancer);

/// detect -> focus -> enhance -> classify. A frame without a person yields
/// the no-user result.
InferResult urgr_infer(const Image& frame, focus::Detector& detector, const focus::FocusConfig& focus_cfg,
                       const hqnet::HQNet* enhancer, const GViT& classifier);

}  // namespace urgr::gvit
