#include "urgr/hqnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "urgr/error.hpp"
#include "urgr/imaging.hpp"
#include "urgr/nn/convert.hpp"
#include "urgr/nn/ops.hpp"
#include "urgr/nn/optim.hpp"

namespace urgr::hqnet {

using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

int ceil_scaled(double scale, int v) { return std::max(1, static_cast<int>(std::ceil(scale * v - 1e-9))); }

int edge_grid(const HQNetConfig& c) { return std::min(c.latent_grid, c.input_size / 4); }
int token_grid(const HQNetConfig& c) { return std::min(c.attention_grid, c.input_size); }
int attn_grid(const HQNetConfig& c) { return std::min(c.latent_grid, token_grid(c)); }
int ae_grid(const HQNetConfig& c) { return std::min(c.latent_grid, c.bottleneck_size()); }

void add_conv(nn::ParamStore& s, const std::string& name, int out, int in, int k, nn::Rng& rng, bool bias = true) {
  s.add(name + ".w", nn::lecun_normal({out, in, k, k}, in * k * k, rng));
  if (bias) s.add(name + ".b", Tensor({out}, 0.0));
}

void add_bn(nn::ParamStore& s, const std::string& name, int c) {
  s.add(name + ".gamma", Tensor({c}, 1.0));
  s.add(name + ".beta", Tensor({c}, 0.0));
  s.add(name + ".running_mean", Tensor({c}, 0.0), false);
  s.add(name + ".running_var", Tensor({c}, 1.0), false);
}

void add_linear(nn::ParamStore& s, const std::string& name, int in, int out, nn::Rng& rng) {
  s.add(name + ".w", nn::lecun_normal({in, out}, in, rng));
  s.add(name + ".b", Tensor({out}, 0.0));
}

void add_hq_layer(nn::ParamStore& s, const std::string& p, int in, int w1, int w2, nn::Rng& rng) {
  // Convs feeding batch norm carry no bias: normalisation cancels it.
  add_conv(s, p + ".b1.0.conv", w1, in, 3, rng, false);
  add_bn(s, p + ".b1.0.bn", w1);
  add_conv(s, p + ".b1.1.conv", w2, w1, 3, rng, false);
  add_bn(s, p + ".b1.1.bn", w2);
  add_conv(s, p + ".b2.conv", w2, in, 3, rng);
  add_conv(s, p + ".out", w2, w2, 3, rng);
}

void add_attention(nn::ParamStore& s, const std::string& p, int d, nn::Rng& rng) {
  for (const char* n : {".q", ".k", ".v", ".o"}) add_linear(s, p + n, d, d, rng);
}

Var conv(const Var& x, const nn::ParamStore& s, const std::string& name, int stride = 1) {
  const Var& w = s.get(name + ".w");
  const std::string b = name + ".b";
  return nn::conv2d(x, w, s.contains(b) ? s.get(b) : Var{}, stride, w.shape()[2] / 2);
}

Var dense(const Var& x, const nn::ParamStore& s, const std::string& name) {
  return nn::linear(x, s.get(name + ".w"), s.get(name + ".b"));
}

Var bn(const Var& x, const nn::ParamStore& s, const std::string& name, bool training) {
  // Handles share the stored buffers, so training updates them in place.
  Var rm = s.get(name + ".running_mean");
  Var rv = s.get(name + ".running_var");
  return nn::batch_norm2d(x, s.get(name + ".gamma"), s.get(name + ".beta"), rm, rv, training);
}

Var pool_to(const Var& x, int g) {
  const int size = x.shape()[2];
  if (size == g) return x;
  return nn::avg_pool2d(x, size / g);
}

Var flatten(const Var& x) { return nn::reshape(x, {x.shape()[0], static_cast<int>(x.value().size()) / x.shape()[0]}); }

void check_input(const HQNetConfig& cfg, const Var& x, int channels) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != channels || s[2] != cfg.input_size || s[3] != cfg.input_size) {
    throw InvalidArgument("hqnet: expected input [N, " + std::to_string(channels) + ", " +
                          std::to_string(cfg.input_size) + ", " + std::to_string(cfg.input_size) + "], got " +
                          nn::to_string(s));
  }
}

}  // namespace

HQNetConfig HQNetConfig::scaled(double scale, int input_size) {
  if (!(scale > 0.0 && scale <= 1.0)) throw InvalidArgument("hqnet: scale_factor must lie in (0, 1]");
  HQNetConfig c;
  c.input_size = input_size;
  c.scale_factor = scale;
  c.latent_edge = ceil_scaled(scale, c.latent_edge);
  c.latent_attn = ceil_scaled(scale, c.latent_attn);
  c.latent_ae = ceil_scaled(scale, c.latent_ae);
  c.latent_total = c.latent_edge + c.latent_attn + c.latent_ae;
  c.hq_width1 = ceil_scaled(scale, c.hq_width1);
  c.hq_width2 = ceil_scaled(scale, c.hq_width2);
  c.encoder_width = ceil_scaled(scale, c.encoder_width);
  c.refine_width = ceil_scaled(scale, c.refine_width);
  return c;
}

void HQNetConfig::validate() const {
  auto fail = [](const std::string& m) { throw InvalidArgument("hqnet config: " + m); };
  if (latent_edge <= 0 || latent_attn <= 0 || latent_ae <= 0) fail("latent sizes must be positive");
  if (latent_total != latent_edge + latent_attn + latent_ae) fail("latent_total must equal the pathway sum");
  if (!(scale_factor > 0.0 && scale_factor <= 1.0)) fail("scale_factor must lie in (0, 1]");
  if (encoder_levels < 1) fail("encoder_levels must be >= 1");
  if (input_size < 4 || input_size % (1 << std::max(2, encoder_levels)) != 0)
    fail("input_size must be divisible by 2^encoder_levels and by 4");
  if (refine_layers < 0) fail("refine_layers must be >= 0");
  if (hq_width1 <= 0 || hq_width2 <= 0 || encoder_width <= 0 || latent_grid <= 0 || attention_grid <= 0 ||
      refine_width <= 0)
    fail("widths and grids must be positive");
  if (attention_heads <= 0 || hq_width2 % attention_heads != 0)
    fail("hq_width2 must be divisible by attention_heads");
  if ((input_size / 4) % edge_grid(*this) != 0) fail("edge feature map not divisible by latent_grid");
  if (input_size % token_grid(*this) != 0) fail("input_size not divisible by attention_grid");
  if (token_grid(*this) % attn_grid(*this) != 0) fail("attention_grid not divisible by latent_grid");
  if (bottleneck_size() % ae_grid(*this) != 0) fail("bottleneck not divisible by latent_grid");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (!(canny.sigma > 0.0 && canny.low > 0.0 && canny.low < canny.high)) fail("invalid canny parameters");
}

void to_json(nlohmann::json& j, const HQNetConfig& c) {
  j = nlohmann::json{{"input_size", c.input_size},
                     {"scale_factor", c.scale_factor},
                     {"latent_edge", c.latent_edge},
                     {"latent_attn", c.latent_attn},
                     {"latent_ae", c.latent_ae},
                     {"latent_total", c.latent_total},
                     {"canny", {{"sigma", c.canny.sigma}, {"low", c.canny.low}, {"high", c.canny.high}}},
                     {"attention_heads", c.attention_heads},
                     {"attention_grid", c.attention_grid},
                     {"hq_width1", c.hq_width1},
                     {"hq_width2", c.hq_width2},
                     {"encoder_levels", c.encoder_levels},
                     {"encoder_width", c.encoder_width},
                     {"latent_grid", c.latent_grid},
                     {"refine_layers", c.refine_layers},
                     {"refine_width", c.refine_width},
                     {"dropout", c.dropout},
                     {"residual", c.residual}};
}

void from_json(const nlohmann::json& j, HQNetConfig& c) {
  // A bare scale/input pair expands to the scaled defaults; explicit fields override.
  c = HQNetConfig::scaled(j.value("scale_factor", 1.0), j.value("input_size", 512));
  c.latent_edge = j.value("latent_edge", c.latent_edge);
  c.latent_attn = j.value("latent_attn", c.latent_attn);
  c.latent_ae = j.value("latent_ae", c.latent_ae);
  c.latent_total = c.latent_edge + c.latent_attn + c.latent_ae;
  if (j.contains("latent_total") && j.at("latent_total").get<int>() != c.latent_total)
    throw InvalidArgument("hqnet config: latent_total must equal the pathway sum");
  if (j.contains("canny")) {
    const auto& k = j.at("canny");
    c.canny.sigma = k.value("sigma", c.canny.sigma);
    c.canny.low = k.value("low", c.canny.low);
    c.canny.high = k.value("high", c.canny.high);
  }
  c.attention_heads = j.value("attention_heads", c.attention_heads);
  c.attention_grid = j.value("attention_grid", c.attention_grid);
  c.hq_width1 = j.value("hq_width1", c.hq_width1);
  c.hq_width2 = j.value("hq_width2", c.hq_width2);
  c.encoder_levels = j.value("encoder_levels", c.encoder_levels);
  c.encoder_width = j.value("encoder_width", c.encoder_width);
  c.latent_grid = j.value("latent_grid", c.latent_grid);
  c.refine_layers = j.value("refine_layers", c.refine_layers);
  c.refine_width = j.value("refine_width", c.refine_width);
  c.dropout = j.value("dropout", c.dropout);
  c.residual = j.value("residual", c.residual);
  c.validate();
}

HQNet HQNet::init(const HQNetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  HQNet net{cfg, {}};
  nn::Rng rng(seed);
  auto& s = net.params;
  const int w1 = cfg.hq_width1, w2 = cfg.hq_width2;

  add_hq_layer(s, "edge.hq", 1, w1, w2, rng);
  add_conv(s, "edge.conv0", w2, w2, 3, rng);
  add_conv(s, "edge.conv1", w2, w2, 3, rng);
  add_linear(s, "edge.proj", w2 * edge_grid(cfg) * edge_grid(cfg), cfg.latent_edge, rng);

  add_hq_layer(s, "attn.hq", 3, w1, w2, rng);
  add_attention(s, "attn.sa", w2, rng);
  add_linear(s, "attn.proj", w2 * attn_grid(cfg) * attn_grid(cfg), cfg.latent_attn, rng);

  const int levels = cfg.encoder_levels;
  int in = 3;
  for (int l = 0; l < levels; ++l) {
    const int c = cfg.encoder_width_at(l);
    add_conv(s, "enc." + std::to_string(l) + ".conv", c, in, 3, rng);
    add_conv(s, "enc." + std::to_string(l) + ".down", c, c, 3, rng);
    in = c;
  }
  const int cb = cfg.encoder_width_at(levels - 1);
  add_linear(s, "ae.proj", cb * ae_grid(cfg) * ae_grid(cfg), cfg.latent_ae, rng);

  add_linear(s, "dec.proj", cfg.latent_total, cb * ae_grid(cfg) * ae_grid(cfg), rng);
  int up = cb;
  for (int l = levels - 1; l >= 0; --l) {
    const int c = cfg.encoder_width_at(l);
    add_conv(s, "dec." + std::to_string(l) + ".skip", c, c, 1, rng);
    add_conv(s, "dec." + std::to_string(l) + ".conv", c, up + c, 3, rng);
    up = c;
  }
  int width = cfg.encoder_width_at(0);
  for (int r = 0; r < cfg.refine_layers; ++r) {
    add_conv(s, "dec.refine." + std::to_string(r), cfg.refine_width, width, 3, rng);
    width = cfg.refine_width;
  }
  add_conv(s, "dec.out", 3, width, 3, rng);
  // With the input added back, a small output layer starts near the identity.
  if (cfg.residual)
    for (double& v : s.get("dec.out.w").mutable_value().values()) v *= 0.1;
  return net;
}

Var hq_layer(const Var& x, const nn::ParamStore& params, const std::string& prefix, bool training) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[2] < 4 || s[3] < 4) throw InvalidArgument("hq_layer: expected [N, C, H, W] with H, W >= 4");
  Var b1 = nn::selu(bn(conv(x, params, prefix + ".b1.0.conv"), params, prefix + ".b1.0.bn", training));
  b1 = nn::selu(bn(conv(b1, params, prefix + ".b1.1.conv"), params, prefix + ".b1.1.bn", training));
  Var b2 = conv(x, params, prefix + ".b2.conv", 2);
  b2 = nn::resize_bicubic2d(b2, s[2], s[3]);
  if (b1.shape() != b2.shape()) {
    throw std::logic_error("hq_layer: branch shapes differ: " + nn::to_string(b1.shape()) + " vs " +
                           nn::to_string(b2.shape()));
  }
  return conv(nn::mul(b1, b2), params, prefix + ".out");
}

Var self_attention(const Var& x, const nn::ParamStore& params, const std::string& prefix, int heads,
                   std::vector<Tensor>* attention_probe) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw InvalidArgument("self_attention: expected [B, T, D], got " + nn::to_string(s));
  const int b = s[0], t = s[1], d = s[2];
  if (heads <= 0 || d % heads != 0) {
    throw InvalidArgument("self_attention: token dim " + std::to_string(d) + " not divisible by " +
                          std::to_string(heads) + " heads");
  }
  const int dk = d / heads;
  auto split = [&](const Var& v) {
    return nn::reshape(nn::permute(nn::reshape(v, {b, t, heads, dk}), {0, 2, 1, 3}), {b * heads, t, dk});
  };
  const Var q = split(dense(x, params, prefix + ".q"));
  const Var k = split(dense(x, params, prefix + ".k"));
  const Var v = split(dense(x, params, prefix + ".v"));
  const Var attn = nn::softmax(nn::scale(nn::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dk))));
  if (attention_probe) attention_probe->push_back(attn.value());
  Var out = nn::bmm(attn, v);
  out = nn::reshape(nn::permute(nn::reshape(out, {b, heads, t, dk}), {0, 2, 1, 3}), {b, t, d});
  return dense(out, params, prefix + ".o");
}

Var edge_pathway(const Var& edges, const HQNet& net, const ForwardOptions& opts) {
  const auto& cfg = net.config;
  check_input(cfg, edges, 1);
  Var h = hq_layer(edges, net.params, "edge.hq", opts.training);
  h = nn::selu(conv(h, net.params, "edge.conv0", 2));
  h = nn::selu(conv(h, net.params, "edge.conv1", 2));
  return dense(flatten(pool_to(h, edge_grid(cfg))), net.params, "edge.proj");
}

Var attention_pathway(const Var& x, const HQNet& net, const ForwardOptions& opts) {
  const auto& cfg = net.config;
  check_input(cfg, x, 3);
  const int n = x.shape()[0], g = token_grid(cfg), d = cfg.hq_width2;
  Var h = pool_to(hq_layer(x, net.params, "attn.hq", opts.training), g);
  Var tokens = nn::reshape(nn::permute(h, {0, 2, 3, 1}), {n, g * g, d});
  tokens = nn::add(tokens, self_attention(tokens, net.params, "attn.sa", cfg.attention_heads, opts.attention_probe));
  h = nn::permute(nn::reshape(tokens, {n, g, g, d}), {0, 3, 1, 2});
  return dense(flatten(pool_to(h, attn_grid(cfg))), net.params, "attn.proj");
}

AutoencoderOutput autoencoder_pathway(const Var& x, const HQNet& net, const ForwardOptions& /*opts*/) {
  const auto& cfg = net.config;
  check_input(cfg, x, 3);
  AutoencoderOutput out;
  Var h = x;
  for (int l = 0; l < cfg.encoder_levels; ++l) {
    const std::string p = "enc." + std::to_string(l);
    h = nn::selu(conv(h, net.params, p + ".conv"));
    out.skips.push_back(h);
    h = nn::selu(conv(h, net.params, p + ".down", 2));
  }
  out.latent = dense(flatten(pool_to(h, ae_grid(cfg))), net.params, "ae.proj");
  return out;
}

Tensor edge_maps(std::span<const Image> batch, const CannyConfig& canny) {
  std::vector<Image> edges;
  edges.reserve(batch.size());
  for (const Image& img : batch) edges.push_back(imaging::canny_edges(img, canny.sigma, canny.low, canny.high));
  return nn::to_nchw(edges);
}

ForwardResult forward(const HQNet& net, const Var& x, const Var& edges, const ForwardOptions& opts) {
  const auto& cfg = net.config;
  check_input(cfg, x, 3);
  if (edges.shape()[0] != x.shape()[0]) throw InvalidArgument("hqnet: edge batch size differs from input");

  const Var le = edge_pathway(edges, net, opts);
  const Var la = attention_pathway(x, net, opts);
  const AutoencoderOutput ae = autoencoder_pathway(x, net, opts);

  ForwardResult result;
  result.fused_latent = nn::concat({le, la, ae.latent}, 1);
  Var z = result.fused_latent;
  if (opts.training && cfg.dropout > 0.0) {
    if (!opts.rng) throw InvalidArgument("hqnet: training with dropout needs a random source");
    z = nn::dropout(z, cfg.dropout, *opts.rng);
  }

  const int n = x.shape()[0], levels = cfg.encoder_levels, g = ae_grid(cfg);
  Var h = nn::reshape(dense(z, net.params, "dec.proj"), {n, cfg.encoder_width_at(levels - 1), g, g});
  if (cfg.bottleneck_size() > g) h = nn::upsample_nearest2d(h, cfg.bottleneck_size() / g);
  h = nn::selu(h);
  for (int l = levels - 1; l >= 0; --l) {
    const std::string p = "dec." + std::to_string(l);
    h = nn::upsample_nearest2d(h, 2);
    const Var skip = conv(ae.skips[static_cast<std::size_t>(l)], net.params, p + ".skip");
    h = nn::selu(conv(nn::concat({h, skip}, 1), net.params, p + ".conv"));
  }
  for (int r = 0; r < cfg.refine_layers; ++r) h = nn::selu(conv(h, net.params, "dec.refine." + std::to_string(r)));
  Var logits = conv(h, net.params, "dec.out");
  if (cfg.residual) {
    Tensor base = x.value();
    for (double& v : base.values()) {
      const double c = std::clamp(v, 1e-3, 1.0 - 1e-3);
      v = std::log(c / (1.0 - c));
    }
    logits = nn::add(logits, Var(std::move(base)));
  }
  result.output = nn::sigmoid(logits);
  return result;
}

ForwardResult forward(const HQNet& net, std::span<const Image> batch, const ForwardOptions& opts) {
  if (batch.empty()) throw InvalidArgument("hqnet: empty batch");
  for (const Image& img : batch) {
    if (img.channels() != 3 || img.height() != net.config.input_size || img.width() != net.config.input_size) {
      throw InvalidArgument("hqnet: images must be 3-channel " + std::to_string(net.config.input_size) + "x" +
                            std::to_string(net.config.input_size));
    }
  }
  return forward(net, Var(nn::to_nchw(batch)), Var(edge_maps(batch, net.config.canny)), opts);
}

Image enhance(const HQNet& net, const Image& img) {
  nn::NoGradGuard guard;
  const ForwardResult r = forward(net, std::span<const Image>(&img, 1), ForwardOptions{});
  Image out = nn::from_nchw(r.output.value(), 0);
  out.clamp01();
  return out;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"batch_size", c.batch_size},
                     {"weight_decay", c.weight_decay},
                     {"epochs", c.epochs},
                     {"clip_norm", c.clip_norm}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.epochs = j.value("epochs", c.epochs);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
}

TrainResult train(std::span<const DegradationPair> pairs, const HQNetConfig& cfg, const TrainConfig& hyper,
                  std::uint64_t seed) {
  if (pairs.empty()) throw InvalidArgument("train_hqnet: empty pair set");
  if (hyper.batch_size <= 0 || hyper.epochs <= 0 || !(hyper.lr > 0.0))
    throw InvalidArgument("train_hqnet: batch_size, epochs and lr must be positive");
  for (const auto& p : pairs) {
    if (!p.degraded.same_shape(p.clean)) throw InvalidArgument("train_hqnet: pair dimensions differ");
    if (p.clean.channels() != 3 || p.clean.height() != cfg.input_size || p.clean.width() != cfg.input_size)
      throw InvalidArgument("train_hqnet: pairs must be 3-channel at the configured input size");
  }

  TrainResult result{HQNet::init(cfg, seed), {}};
  nn::AdamW opt(result.model.params, nn::AdamConfig{hyper.lr, 0.9, 0.999, 1e-8, hyper.weight_decay, hyper.clip_norm});
  nn::Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);

  // Edge maps depend only on the degraded inputs; compute them once.
  std::vector<Image> edges;
  edges.reserve(pairs.size());
  for (const auto& p : pairs)
    edges.push_back(imaging::canny_edges(p.degraded, cfg.canny.sigma, cfg.canny.low, cfg.canny.high));

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  const ForwardOptions opts{true, &rng, nullptr};
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hyper.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hyper.batch_size));
      std::vector<Image> in, target, edge;
      for (std::size_t i = start; i < end; ++i) {
        in.push_back(pairs[order[i]].degraded);
        target.push_back(pairs[order[i]].clean);
        edge.push_back(edges[order[i]]);
      }
      const ForwardResult r = forward(result.model, Var(nn::to_nchw(in)), Var(nn::to_nchw(edge)), opts);
      const Var loss = nn::mse_loss(r.output, Var(nn::to_nchw(target)));
      const double l = loss.value().item();
      if (!std::isfinite(l)) throw TrainingDiverged("train_hqnet: non-finite loss at epoch " + std::to_string(epoch + 1));
      nn::backward(loss);
      opt.step();
      total += l * static_cast<double>(end - start);
    }
    result.epoch_loss.push_back(total / static_cast<double>(order.size()));
  }
  if (!result.model.params.all_finite()) throw TrainingDiverged("train_hqnet: non-finite parameters");
  return result;
}

}  // namespace urgr::hqnet
