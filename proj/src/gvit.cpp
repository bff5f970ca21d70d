#include "urgr/gvit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "urgr/error.hpp"
#include "urgr/imaging.hpp"
#include "urgr/nn/ops.hpp"
#include "urgr/nn/optim.hpp"

namespace urgr::gvit {

using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

const std::array<std::string, kNumClasses> kNames{"null", "pointing", "thumbs-up", "thumbs-down", "beckoning", "stop"};

void add_linear(nn::ParamStore& s, const std::string& name, int in, int out, nn::Rng& rng) {
  s.add(name + ".w", nn::xavier_normal({in, out}, in, out, rng));
  s.add(name + ".b", Tensor({out}, 0.0));
}

void add_norm(nn::ParamStore& s, const std::string& name, int dim) {
  s.add(name + ".g", Tensor({dim}, 1.0));
  s.add(name + ".b", Tensor({dim}, 0.0));
}

Var dense(const Var& x, const nn::ParamStore& s, const std::string& name) {
  return nn::linear(x, s.get(name + ".w"), s.get(name + ".b"));
}

Var norm(const Var& x, const nn::ParamStore& s, const std::string& name) {
  return nn::layer_norm(x, s.get(name + ".g"), s.get(name + ".b"));
}

Image to_grid(const Image& img, int grid) {
  if (img.channels() != 3) throw InvalidArgument("gvit: images must have 3 channels");
  if (img.height() == grid && img.width() == grid) return img;
  return imaging::bicubic_resize(img, grid, grid);
}

// Node features [N, n, 3]; HWC order already matches node order y * w + x.
Tensor node_features(std::span<const Image> grid_images, int grid) {
  const std::size_t per = static_cast<std::size_t>(grid) * grid * 3;
  Tensor t({static_cast<int>(grid_images.size()), grid * grid, 3});
  for (std::size_t i = 0; i < grid_images.size(); ++i) {
    const auto src = grid_images[i].data();
    std::copy(src.begin(), src.end(), t.data() + i * per);
  }
  return t;
}

Var logits_from_features(const GViT& net, const Var& features, const ForwardOptions& opts) {
  const auto& cfg = net.config;
  const auto& p = net.params;
  const int n = features.shape()[0], g = cfg.graph_grid;
  const std::vector<graph::GCLayerParams> layers{{p.get("gc.0.w"), cfg.dropout_between_gc},
                                                 {p.get("gc.1.w"), cfg.dropout_between_gc}};
  if (opts.training && cfg.dropout_between_gc > 0.0 && !opts.rng)
    throw InvalidArgument("gvit: training with dropout needs a random source");
  Var h = graph::gcn_stack(features, *net.propagation, layers, cfg.dropout_between_gc, opts.training, opts.rng);
  const int c = cfg.gc_dims[1] / 2;
  h = nn::permute(nn::reshape(h, {n, g, g, c}), {0, 3, 1, 2});
  // Patch convolution: kernel = stride = grid / token_grid.
  h = nn::conv2d(h, p.get("patch.w"), p.get("patch.b"), cfg.patch(), 0);
  const int t = cfg.vit.token_grid, e = cfg.vit.embed_dim;
  Var tokens = nn::reshape(nn::permute(h, {0, 2, 3, 1}), {n, t * t, e});
  tokens = vit_encode(tokens, p, cfg.vit, opts.attention_probe);
  Var pooled = nn::mean_axis(tokens, 1);
  return dense(nn::gelu(dense(pooled, p, "head.fc1")), p, "head.fc2");
}

}  // namespace

const std::string& class_name(int index) {
  if (index < 1 || index > kNumClasses) throw InvalidArgument("class index must lie in 1..6");
  return kNames[static_cast<std::size_t>(index - 1)];
}

int class_index(const std::string& name) {
  for (int i = 0; i < kNumClasses; ++i)
    if (kNames[static_cast<std::size_t>(i)] == name) return i + 1;
  throw InvalidArgument("unknown class name: " + name);
}

void GViTConfig::validate() const {
  auto fail = [](const std::string& m) { throw InvalidArgument("gvit config: " + m); };
  if (num_classes != kNumClasses) fail("num_classes must be 6");
  for (int d : gc_dims)
    if (d <= 0 || d % 2 != 0) fail("GC output widths must be positive and even for GLU");
  if (graph_grid < 2 || vit.token_grid < 1 || graph_grid % vit.token_grid != 0)
    fail("graph_grid must be a multiple of the token grid");
  if (vit.embed_dim <= 0 || vit.heads <= 0 || vit.embed_dim % vit.heads != 0)
    fail("embed_dim must be divisible by heads");
  if (vit.depth < 1 || vit.mlp_ratio < 1) fail("depth and mlp_ratio must be >= 1");
  if (!(dropout_between_gc >= 0.0 && dropout_between_gc < 1.0)) fail("dropout must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const GViTConfig& c) {
  j = nlohmann::json{{"graph_grid", c.graph_grid},
                     {"gc_dims", c.gc_dims},
                     {"vit",
                      {{"token_grid", c.vit.token_grid},
                       {"embed_dim", c.vit.embed_dim},
                       {"depth", c.vit.depth},
                       {"heads", c.vit.heads},
                       {"mlp_ratio", c.vit.mlp_ratio}}},
                     {"dropout_between_gc", c.dropout_between_gc},
                     {"num_classes", c.num_classes}};
}

void from_json(const nlohmann::json& j, GViTConfig& c) {
  c = GViTConfig{};
  c.graph_grid = j.value("graph_grid", c.graph_grid);
  if (j.contains("gc_dims")) c.gc_dims = j.at("gc_dims").get<std::array<int, 2>>();
  if (j.contains("vit")) {
    const auto& v = j.at("vit");
    c.vit.token_grid = v.value("token_grid", c.vit.token_grid);
    c.vit.embed_dim = v.value("embed_dim", c.vit.embed_dim);
    c.vit.depth = v.value("depth", c.vit.depth);
    c.vit.heads = v.value("heads", c.vit.heads);
    c.vit.mlp_ratio = v.value("mlp_ratio", c.vit.mlp_ratio);
  }
  c.dropout_between_gc = j.value("dropout_between_gc", c.dropout_between_gc);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.validate();
}

GViT GViT::init(const GViTConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  nn::ParamStore s;
  nn::Rng rng(seed);
  const int e = cfg.vit.embed_dim, t = cfg.vit.token_grid, pch = cfg.patch();
  s.add("gc.0.w", nn::xavier_normal({3, cfg.gc_dims[0]}, 3, cfg.gc_dims[0], rng));
  s.add("gc.1.w", nn::xavier_normal({cfg.gc_dims[0] / 2, cfg.gc_dims[1]}, cfg.gc_dims[0] / 2, cfg.gc_dims[1], rng));
  const int c = cfg.gc_dims[1] / 2;
  s.add("patch.w", nn::lecun_normal({e, c, pch, pch}, c * pch * pch, rng));
  s.add("patch.b", Tensor({e}, 0.0));
  Tensor pos({t * t, e});
  for (double& v : pos.values()) v = rng.normal(0.0, 0.02);
  s.add("vit.pos", std::move(pos));
  for (int b = 0; b < cfg.vit.depth; ++b) {
    const std::string p = "vit.block" + std::to_string(b);
    add_norm(s, p + ".ln1", e);
    for (const char* n : {".attn.q", ".attn.k", ".attn.v", ".attn.o"}) add_linear(s, p + n, e, e, rng);
    add_norm(s, p + ".ln2", e);
    add_linear(s, p + ".mlp.fc1", e, e * cfg.vit.mlp_ratio, rng);
    add_linear(s, p + ".mlp.fc2", e * cfg.vit.mlp_ratio, e, rng);
  }
  add_norm(s, "vit.ln_f", e);
  add_linear(s, "head.fc1", e, e, rng);
  add_linear(s, "head.fc2", e, cfg.num_classes, rng);
  return from_params(cfg, std::move(s));
}

GViT GViT::from_params(const GViTConfig& cfg, nn::ParamStore params) {
  cfg.validate();
  const auto adj = graph::build_adjacency(cfg.graph_grid, cfg.graph_grid);
  auto prop = std::make_shared<const graph::NormalizedPropagation>(graph::degree_and_normalize(adj));
  return GViT{cfg, std::move(params), std::move(prop)};
}

ClassDistribution ClassDistribution::from_logits(std::span<const double> logits) {
  if (logits.size() != kNumClasses) throw InvalidArgument("class distribution needs 6 logits");
  ClassDistribution d;
  std::copy(logits.begin(), logits.end(), d.logits.begin());
  const double m = *std::max_element(d.logits.begin(), d.logits.end());
  double z = 0.0;
  for (int i = 0; i < kNumClasses; ++i) z += (d.probs[static_cast<std::size_t>(i)] = std::exp(d.logits[static_cast<std::size_t>(i)] - m));
  for (double& p : d.probs) p /= z;
  return d;
}

Var vit_encode(const Var& tokens, const nn::ParamStore& params, const VitConfig& cfg,
               std::vector<Tensor>* attention_probe) {
  const Shape& s = tokens.shape();
  const int t = cfg.token_grid * cfg.token_grid;
  if (s.size() != 3 || s[1] != t || s[2] != cfg.embed_dim) {
    throw InvalidArgument("vit_encode: expected [B, " + std::to_string(t) + ", " + std::to_string(cfg.embed_dim) +
                          "], got " + nn::to_string(s));
  }
  Var x = nn::add_broadcast(tokens, params.get("vit.pos"));
  for (int b = 0; b < cfg.depth; ++b) {
    const std::string p = "vit.block" + std::to_string(b);
    x = nn::add(x, hqnet::self_attention(norm(x, params, p + ".ln1"), params, p + ".attn", cfg.heads, attention_probe));
    const Var hidden = nn::gelu(dense(norm(x, params, p + ".ln2"), params, p + ".mlp.fc1"));
    x = nn::add(x, dense(hidden, params, p + ".mlp.fc2"));
  }
  return norm(x, params, "vit.ln_f");
}

Var forward_logits(const GViT& net, std::span<const Image> batch, const ForwardOptions& opts) {
  if (batch.empty()) throw InvalidArgument("gvit: empty batch");
  std::vector<Image> grid;
  grid.reserve(batch.size());
  for (const Image& img : batch) grid.push_back(to_grid(img, net.config.graph_grid));
  return logits_from_features(net, Var(node_features(grid, net.config.graph_grid)), opts);
}

ClassDistribution gvit_forward(const GViT& net, const Image& img) {
  nn::NoGradGuard guard;
  const Var logits = forward_logits(net, std::span<const Image>(&img, 1));
  return ClassDistribution::from_logits(logits.value().values());
}

int classify(const ClassDistribution& dist) {
  int best = 0;
  for (int i = 1; i < kNumClasses; ++i)
    if (dist.probs[static_cast<std::size_t>(i)] > dist.probs[static_cast<std::size_t>(best)]) best = i;
  return best + 1;
}

double cross_entropy(const ClassDistribution& dist, int label) {
  if (label < 1 || label > kNumClasses) throw InvalidArgument("cross_entropy: label must lie in 1..6");
  const double m = *std::max_element(dist.logits.begin(), dist.logits.end());
  double z = 0.0;
  for (double l : dist.logits) z += std::exp(l - m);
  return m + std::log(z) - dist.logits[static_cast<std::size_t>(label - 1)];
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"weight_decay", c.weight_decay},
                     {"clip_norm", c.clip_norm}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
}

TrainResult train(std::span<const LabeledImage> data, const GViTConfig& cfg, const TrainConfig& hyper,
                  std::uint64_t seed) {
  if (data.empty()) throw InvalidArgument("train_gvit: empty dataset");
  if (hyper.batch_size <= 0 || hyper.epochs <= 0 || !(hyper.lr > 0.0))
    throw InvalidArgument("train_gvit: batch_size, epochs and lr must be positive");
  std::vector<Image> grid;
  grid.reserve(data.size());
  for (const auto& d : data) {
    if (d.label < 1 || d.label > kNumClasses) throw InvalidArgument("train_gvit: label must lie in 1..6");
    grid.push_back(to_grid(d.image, cfg.graph_grid));
  }

  TrainResult result{GViT::init(cfg, seed), {}, {}};
  nn::AdamW opt(result.model.params, nn::AdamConfig{hyper.lr, 0.9, 0.999, 1e-8, hyper.weight_decay, hyper.clip_norm});
  nn::Rng rng(seed ^ 0x5bd1e9955bd1e995ULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const ForwardOptions opts{true, &rng, nullptr};

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hyper.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hyper.batch_size));
      std::vector<Image> batch;
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(grid[order[i]]);
        labels.push_back(data[order[i]].label - 1);
      }
      const Var logits = logits_from_features(result.model, Var(node_features(batch, cfg.graph_grid)), opts);
      const Var loss = nn::cross_entropy_logits(logits, labels);
      const double l = loss.value().item();
      if (!std::isfinite(l)) throw TrainingDiverged("train_gvit: non-finite loss at epoch " + std::to_string(epoch + 1));
      for (std::size_t r = 0; r < labels.size(); ++r) {
        const auto row = std::span<const double>(logits.value().data() + r * kNumClasses, kNumClasses);
        if (classify(ClassDistribution::from_logits(row)) == labels[r] + 1) ++correct;
      }
      nn::backward(loss);
      opt.step();
      total += l * static_cast<double>(end - start);
    }
    result.epoch_loss.push_back(total / static_cast<double>(order.size()));
    result.epoch_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(order.size()));
  }
  if (!result.model.params.all_finite()) throw TrainingDiverged("train_gvit: non-finite parameters");
  return result;
}

void to_json(nlohmann::json& j, const InferResult& r) {
  if (r.no_user) {
    j = nlohmann::json{{"no_user", true}};
  } else {
    j = nlohmann::json{{"class", r.label}, {"name", class_name(r.label)}, {"certainty", r.certainty}};
  }
}

Image prepare(const Image& frame, const focus::BBox& detected, const focus::FocusConfig& focus_cfg,
              const hqnet::HQNet* enhancer) {
  Image focused = focus::focus_on(frame, detected, focus_cfg);
  if (!enhancer) return focused;
  if (enhancer->config.input_size != focus_cfg.target_size) {
    throw InvalidArgument("focus target " + std::to_string(focus_cfg.target_size) + " differs from HQ-Net input " +
                          std::to_string(enhancer->config.input_size));
  }
  return hqnet::enhance(*enhancer, focused);
}

InferResult urgr_infer(const Image& frame, focus::Detector& detector, const focus::FocusConfig& focus_cfg,
                       const hqnet::HQNet* enhancer, const GViT& classifier) {
  focus::Detection det;
  try {
    det = focus::detect_user(frame, detector);
  } catch (const NotFound&) {
    return InferResult{true, 0, 0.0, {}};
  }
  const Image prepared = prepare(frame, det.bbox, focus_cfg, enhancer);
  InferResult r;
  r.dist = gvit_forward(classifier, prepared);
  r.label = classify(r.dist);
  r.certainty = r.dist.probs[static_cast<std::size_t>(r.label - 1)];
  return r;
}

}  // namespace urgr::gvit
