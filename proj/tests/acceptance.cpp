#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "test_support.hpp"
#include "urgr/focus.hpp"
#include "urgr/gvit.hpp"
#include "urgr/harness/checkpoint.hpp"
#include "urgr/harness/dataset.hpp"
#include "urgr/harness/eval.hpp"
#include "urgr/harness/training.hpp"
#include "urgr/hqnet.hpp"
#include "urgr/imaging.hpp"
#include "urgr/nn/convert.hpp"
#include "urgr/nn/ops.hpp"
#include "urgr/pixelgraph.hpp"

using namespace urgr;
using nlohmann::json;
using nn::Tensor;
using nn::Var;
using testing::check_gradients;
using testing::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw Failure(what);
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Var probe(const Var& out, std::uint64_t seed) {
  nn::Rng rng(seed);
  return nn::weighted_sum(out, random_tensor(out.shape(), rng));
}

// ---------------------------------------------------------------- criterion 1

std::vector<double> brute_force_adjacency(int h, int w) {
  const int n = h * w;
  std::vector<double> m(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const int dx = std::abs(i % w - j % w), dy = std::abs(i / w - j / w);
      if (i != j && std::max(dx, dy) == 1) m[static_cast<std::size_t>(i) * n + j] = 1.0;
    }
  return m;
}

std::string adjacency_oracle() {
  const auto t0 = Clock::now();
  int grids = 0;
  for (int h = 1; h <= 6; ++h)
    for (int w = 1; w <= 6; ++w, ++grids)
      require(graph::build_adjacency(h, w).dense() == brute_force_adjacency(h, w),
              "adjacency differs from the oracle at " + std::to_string(h) + "x" + std::to_string(w));
  const auto a = graph::build_adjacency(3, 3);
  require(a.edges.size() == 20, "3x3 edge count " + std::to_string(a.edges.size()));
  const auto degrees = a.degrees();
  const std::multiset<int> deg(degrees.begin(), degrees.end());
  require(deg == std::multiset<int>{3, 3, 3, 3, 5, 5, 5, 5, 8}, "3x3 degree multiset");
  const double t = seconds_since(t0);
  require(t < 1.0, "runtime " + fmt("%.3f s", t));
  return std::to_string(grids) + " grids, " + fmt("%.4f s", t);
}

// ---------------------------------------------------------------- criterion 2

std::string gc_equivalence() {
  nn::Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    int h = 0, w = 0;
    while (h * w < 2) {
      h = 1 + static_cast<int>(rng.below(4));
      w = 1 + static_cast<int>(rng.below(4));
    }
    const auto adj = graph::build_adjacency(h, w);
    const auto dense = brute_force_adjacency(h, w);
    const int n = h * w, fi = 1 + static_cast<int>(rng.below(4)), fo = 1 + static_cast<int>(rng.below(5));
    const Tensor feats = random_tensor({n, fi}, rng), wt = random_tensor({fi, fo}, rng);
    const auto out =
        graph::gc_layer(Var(feats), graph::degree_and_normalize(adj), {Var(wt)}, graph::Activation::Identity).value();
    std::vector<double> deg(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) deg[i] += dense[static_cast<std::size_t>(i) * n + j];
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < fo; ++o) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) {
          if (dense[static_cast<std::size_t>(i) * n + j] == 0.0) continue;
          double hw = 0.0;
          for (int k = 0; k < fi; ++k) hw += feats[j * fi + k] * wt[k * fo + o];
          s += hw / std::sqrt(deg[i] * deg[j]);
        }
        worst = std::max(worst, std::abs(out[i * fo + o] - s));
      }
  }
  require(worst < 1e-10, "max deviation " + fmt("%.3e", worst));
  return "max deviation " + fmt("%.2e", worst);
}

// ---------------------------------------------------------------- criterion 3

gvit::GViTConfig small_gvit_config() {
  gvit::GViTConfig cfg;
  cfg.graph_grid = 16;
  cfg.gc_dims = {4, 8};
  cfg.vit = gvit::VitConfig{4, 8, 1, 2, 2};
  return cfg;
}

struct GradTally {
  double worst = 0.0;
  std::string where;
  int checked = 0;
  int skipped = 0;

  void add(const std::string& what, const testing::GradCheckResult& r) {
    checked += r.checked;
    skipped += r.skipped;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      where = what + ": " + r.worst;
    }
  }
};

void jitter_biases(nn::ParamStore& params, std::uint64_t seed) {
  nn::Rng rng(seed);
  for (auto& [name, e] : params.entries()) {
    const bool bias = name.size() > 2 && name.substr(name.size() - 2) == ".b";
    if (bias || name.find(".beta") != std::string::npos)
      for (double& v : e.var.mutable_value().values()) v = rng.normal(0.0, 0.1);
  }
}

std::string gradient_suite() {
  const auto t0 = Clock::now();
  GradTally tally;
  nn::Rng rng(3);

  Var gx(random_tensor({5, 8}, rng), true);
  tally.add("glu", check_gradients([&] { return probe(graph::glu(gx), 1); }, {{"x", gx}}, 40, 1));

  const auto prop = graph::degree_and_normalize(graph::build_adjacency(3, 3));
  Var h(random_tensor({9, 3}, rng), true);
  graph::GCLayerParams gp{Var(random_tensor({3, 4}, rng), true)};
  tally.add("gc_layer", check_gradients([&] { return probe(graph::gc_layer(h, prop, gp, graph::Activation::Glu), 2); },
                                        {{"H", h}, {"W", gp.weight}}, 100, 2));

  const auto pg = graph::image_to_graph(testing::random_image(4, 4, 3, 4));
  std::vector<graph::GCLayerParams> layers{{Var(random_tensor({3, 8}, rng, 0.5), true)},
                                           {Var(random_tensor({4, 6}, rng, 0.5), true)}};
  tally.add("gcn_stack",
            check_gradients([&] { return probe(graph::gcn_stack(pg, layers, 0.4, false, nullptr), 3); },
                            {{"W1", layers[0].weight}, {"W2", layers[1].weight}}, 100, 3));

  hqnet::HQNet hq = hqnet::HQNet::init(hqnet::HQNetConfig::scaled(0.125, 32), 9);
  jitter_biases(hq.params, 9);
  {
    Var tokens(random_tensor({1, 4, 8}, rng), true);
    std::vector<std::pair<std::string, Var>> vars{{"x", tokens}};
    for (auto& [name, e] : hq.params.entries())
      // Softmax is invariant to the key bias, so its true gradient is zero.
      if (name.rfind("attn.sa.", 0) == 0 && name.find(".k.b") == std::string::npos) vars.emplace_back(name, e.var);
    tally.add("self_attention",
              check_gradients([&] { return probe(hqnet::self_attention(tokens, hq.params, "attn.sa", 4), 4); }, vars,
                              64, 4));
  }
  for (bool training : {true, false}) {
    Var x(random_tensor({2, 3, 8, 8}, rng), true);
    std::vector<std::pair<std::string, Var>> vars{{"x", x}};
    for (auto& [name, e] : hq.params.entries())
      if (e.trainable && name.rfind("attn.hq.", 0) == 0) vars.emplace_back(name, e.var);
    tally.add("hq_layer",
              check_gradients([&] { return probe(hqnet::hq_layer(x, hq.params, "attn.hq", training), 5); }, vars, 30, 5));
  }
  {
    std::vector<Image> imgs, targets;
    for (int i = 0; i < 2; ++i) {
      imgs.push_back(testing::natural_image(32, 32, 40 + i));
      targets.push_back(testing::natural_image(32, 32, 50 + i));
    }
    const Var x(nn::to_nchw(imgs)), e(hqnet::edge_maps(imgs, hq.config.canny)), t(nn::to_nchw(targets));
    for (bool training : {false, true}) {
      auto loss = [&] {
        nn::Rng drop(21);
        return nn::mse_loss(hqnet::forward(hq, x, e, {training, &drop, nullptr}).output, t);
      };
      for (auto& [name, entry] : hq.params.entries()) {
        if (!entry.trainable) continue;
        const int k = std::max(2, static_cast<int>(std::ceil(0.01 * static_cast<double>(entry.var.value().size()))));
        tally.add("hqnet_forward " + name, check_gradients(loss, {{name, entry.var}}, k, 17));
      }
    }
  }

  {
    gvit::GViTConfig tokens_cfg = small_gvit_config();
    tokens_cfg.vit = gvit::VitConfig{2, 8, 1, 2, 2};
    tokens_cfg.graph_grid = 4;
    gvit::GViT vt = gvit::GViT::init(tokens_cfg, 1);
    nn::Rng prng(4);
    for (auto& [name, e] : vt.params.entries())
      for (double& v : e.var.mutable_value().values()) v += prng.normal(0.0, 0.1);
    Var tokens(random_tensor({2, 4, 8}, rng), true);
    std::vector<std::pair<std::string, Var>> vars{{"tokens", tokens}};
    for (auto& [name, e] : vt.params.entries())
      if (name.rfind("vit.", 0) == 0 && name.find("attn.k.b") == std::string::npos) vars.emplace_back(name, e.var);
    tally.add("vit_encode",
              check_gradients([&] { return probe(gvit::vit_encode(tokens, vt.params, tokens_cfg.vit), 6); }, vars, 40, 6));
  }
  gvit::GViT gv = gvit::GViT::init(small_gvit_config(), 11);
  {
    const std::vector<Image> batch{testing::natural_image(16, 16, 1), testing::natural_image(16, 16, 2),
                                   testing::natural_image(16, 16, 3)};
    const std::vector<int> labels{0, 4, 5};
    for (bool training : {false, true}) {
      auto loss = [&] {
        nn::Rng drop(13);
        return nn::cross_entropy_logits(gvit::forward_logits(gv, batch, {training, &drop, nullptr}), labels);
      };
      for (auto& [name, e] : gv.params.entries())
        if (name.find("attn.k.b") == std::string::npos)
          tally.add("gvit_forward+cross_entropy " + name, check_gradients(loss, {{name, e.var}}, 6, 14));
    }
  }

  const double t = seconds_since(t0);
  require(tally.checked > 1000, "too few probes: " + std::to_string(tally.checked));
  require(tally.skipped * 10 <= tally.checked, "too many kink-straddling probes: " + std::to_string(tally.skipped));
  require(tally.worst < 1e-4, "relative error " + fmt("%.3e", tally.worst) + " at " + tally.where);
  require(t < 300.0, "runtime " + fmt("%.0f s", t));
  return std::to_string(tally.checked) + " probes, max rel error " + fmt("%.2e", tally.worst) + ", " +
         fmt("%.0f s", t);
}

// ---------------------------------------------------------------- criterion 4

std::string metric_exactness() {
  nn::Rng rng(44);
  double worst_mse = 0.0, worst_psnr = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int c = trial % 2 == 0 ? 3 : 1;
    const Image a = testing::random_image(8, 8, c, 100 + trial), b = testing::random_image(8, 8, c, 200 + trial);
    double s = 0.0;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        for (int k = 0; k < c; ++k) {
          const double d = a.at(y, x, k) - b.at(y, x, k);
          s += d * d;
        }
    const double m = s / (64.0 * c);
    const double peak = trial % 3 == 0 ? 255.0 : 1.0;
    const double ref = 10.0 * std::log10(peak * peak / m);
    worst_mse = std::max(worst_mse, std::abs(imaging::mse(a, b) - m));
    const auto p = imaging::psnr(a, b, peak);
    require(!p.infinite, "finite pair reported infinite");
    worst_psnr = std::max(worst_psnr, std::abs(p.db - ref));
  }
  require(worst_mse < 1e-12 && worst_psnr < 1e-12,
          "deviation mse " + fmt("%.3e", worst_mse) + " psnr " + fmt("%.3e", worst_psnr));
  const Image a = testing::random_image(8, 8, 3, 1);
  require(imaging::psnr(a, a) == imaging::Psnr::Infinite(), "identical images not infinite");
  require(imaging::psnr_from_mse(1.0).db == 0.0 && imaging::psnr_from_mse(4.0, 2.0).db == 0.0, "mse = L^2 not 0 dB");
  require(imaging::psnr(Image(8, 8, 3, 0.0), Image(8, 8, 3, 1.0)).db == 0.0, "black vs white not 0 dB");
  return "max deviation mse " + fmt("%.1e", worst_mse) + ", psnr " + fmt("%.1e", worst_psnr);
}

// ---------------------------------------------------------------- criterion 5

std::string degradation_pipeline() {
  const imaging::DegradationConfig cfg;
  int checked = 0;
  for (auto [h, w] : {std::pair{32, 32}, std::pair{37, 53}, std::pair{64, 48}, std::pair{9, 17}}) {
    const Image img = testing::natural_image(h, w, static_cast<std::uint64_t>(h * 100 + w));
    const Image d = imaging::degrade(img, cfg);
    const Image literal = imaging::jpeg_compress(
        imaging::sharpen(imaging::gaussian_smooth(img, cfg.smooth_kernel, cfg.smooth_sigma)), cfg.jpeg_quality);
    require(std::ranges::equal(d.data(), literal.data()), "degrade differs from the literal composition");
    require(std::ranges::equal(imaging::degrade(img, cfg).data(), d.data()), "degrade is not deterministic");
    require(d.height() == h && d.width() == w && d.channels() == 3, "degrade changed the dimensions");
    for (const Image& x : {imaging::gaussian_smooth(img), imaging::sharpen(img)})
      require(x.height() == h && x.width() == w, "filter changed the dimensions");
    ++checked;
  }
  for (double v : {0.0, 0.37, 1.0}) {
    const Image flat(13, 11, 3, v);
    for (const Image& x : {imaging::gaussian_smooth(flat), imaging::sharpen(flat)})
      for (double p : x.data()) require(std::abs(p - v) < 1e-12, "constant image not preserved");
  }
  return std::to_string(checked) + " shapes bit-exact, constants preserved";
}

// ---------------------------------------------------------------- criterion 6

std::string filter_impulses() {
  double worst = 0.0;
  {
    Image img(11, 11, 1, 0.0);
    img.at(5, 5, 0) = 1.0;
    double k[5][5], sum = 0.0;
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) sum += k[i][j] = std::exp(-((i - 2) * (i - 2) + (j - 2) * (j - 2)) / 2.0);
    const Image out = imaging::gaussian_smooth(img, 5, 1.0);
    for (int y = 0; y < 11; ++y)
      for (int x = 0; x < 11; ++x) {
        const bool inside = std::abs(y - 5) <= 2 && std::abs(x - 5) <= 2;
        const double want = inside ? k[y - 3][x - 3] / sum : 0.0;
        worst = std::max(worst, std::abs(out.at(y, x, 0) - want));
      }
  }
  {
    Image img(7, 7, 1, 0.0);
    img.at(3, 3, 0) = 0.1;
    const Image raw = imaging::convolve(img, imaging::kSharpenKernel, 3);
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 7; ++x) {
        const int d = std::abs(y - 3) + std::abs(x - 3);
        const double want = d == 0 ? 0.5 : d == 1 && (y == 3 || x == 3) ? -0.1 : 0.0;
        worst = std::max(worst, std::abs(raw.at(y, x, 0) - want));
      }
  }
  require(worst < 1e-10, "impulse deviation " + fmt("%.3e", worst));
  Image step(32, 32, 3);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) step.at(y, x, c) = x < 16 ? 0.2 : 0.8;
  const Image e = imaging::canny_edges(step);
  int positives = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      if (e.at(y, x, 0) != 0.0) {
        ++positives;
        require(x >= 14 && x <= 17, "edge pixel at column " + std::to_string(x));
      }
  require(positives >= 32, "edges missing on some rows");
  return "impulse deviation " + fmt("%.1e", worst) + ", " + std::to_string(positives) + " edge pixels at the step";
}

// ---------------------------------------------------------------- criterion 7

std::string architecture_contracts() {
  const auto cfg = hqnet::HQNetConfig::scaled(1.0, 64);
  const hqnet::HQNet net = hqnet::HQNet::init(cfg, 5);
  nn::NoGradGuard guard;
  const std::vector<Image> imgs{testing::natural_image(64, 64, 9)};
  const Var x(nn::to_nchw(imgs)), e(hqnet::edge_maps(imgs, cfg.canny));
  require(hqnet::edge_pathway(e, net, {}).shape() == nn::Shape{1, 284}, "edge latent");
  require(hqnet::attention_pathway(x, net, {}).shape() == nn::Shape{1, 552}, "attention latent");
  require(hqnet::autoencoder_pathway(x, net, {}).latent.shape() == nn::Shape{1, 2048}, "autoencoder latent");
  require(hqnet::forward(net, x, e, {}).fused_latent.shape() == nn::Shape{1, 2884}, "fused latent");

  nn::Rng rng(77);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    std::array<double, 6> logits{};
    const double spread = trial % 5 == 0 ? 500.0 : 3.0;
    for (double& l : logits) l = std::round(rng.normal(0.0, spread) * (trial % 2 ? 1.0 : 4.0)) / 4.0;
    const auto d = gvit::ClassDistribution::from_logits(logits);
    double s = 0.0;
    for (double p : d.probs) s += p;
    worst = std::max(worst, std::abs(s - 1.0));
    int best = 0;
    for (int c = 1; c < 6; ++c)
      if (d.probs[static_cast<std::size_t>(c)] > d.probs[static_cast<std::size_t>(best)]) best = c;
    require(gvit::classify(d) == best + 1, "classify differs from the full scan");
  }
  require(worst < 1e-6, "probabilities sum off by " + fmt("%.3e", worst));
  std::array<double, 6> tie{0.1, 0.4, 0.2, 0.4, 0.4, 0.0};
  require(gvit::classify(gvit::ClassDistribution::from_logits(tie)) == 2, "tie not broken to the lowest index");
  return "latents 284/552/2048 fused 2884, 500 distributions";
}

// ---------------------------------------------------------------- criterion 8

// Reduced HQ-Net trained at 64x64 within the desk budget.
hqnet::HQNetConfig desk_hqnet_config() {
  hqnet::HQNetConfig cfg = hqnet::HQNetConfig::scaled(0.25, 64);
  cfg.residual = true;
  cfg.refine_layers = 3;
  cfg.dropout = 0.0;
  return cfg;
}

hqnet::TrainConfig desk_hqnet_train() {
  hqnet::TrainConfig t;
  t.lr = 1e-3;
  t.batch_size = 4;
  t.epochs = 18;
  return t;
}

std::vector<hqnet::DegradationPair> synthetic_pairs(int count, std::uint64_t seed) {
  harness::SynthConfig sc;
  sc.count = count;
  sc.seed = seed;
  sc.d_min = 2.0;
  sc.d_max = 8.0;
  harness::DatasetManifest m;
  for (const auto& item : harness::synth_plan(sc)) {
    const auto f = harness::render_item(sc, item);
    m.samples.push_back({"", f.image, item.label, item.distance_m, f.bbox});
  }
  focus::FocusConfig fc;
  fc.target_size = 64;
  return harness::build_degradation_set(m, fc, {});
}

std::string sr_regression() {
  const auto t0 = Clock::now();
  const auto train = synthetic_pairs(400, 11);
  const auto test = synthetic_pairs(60, 12);
  require(train.size() >= 200, "fewer than 200 training pairs");
  const auto r = hqnet::train(train, desk_hqnet_config(), desk_hqnet_train(), 1);
  const double t = seconds_since(t0);
  const auto report = harness::eval_sr(test, [&](const Image& x) { return hqnet::enhance(r.model, x); });
  const double gain = report.gain_db();
  const std::string detail = "baseline " + fmt("%.2f dB", report.baseline.psnr.db) + ", model " +
                             fmt("%.2f dB", report.model.psnr.db) + ", gain " + fmt("%+.2f dB", gain) + ", " +
                             fmt("%.0f s", t);
  require(t <= 900.0, "training exceeded 15 min: " + detail);
  require(gain >= 2.0, detail);
  return detail;
}

// ---------------------------------------------------------------- criterion 9

gvit::TrainConfig desk_gvit_train() {
  gvit::TrainConfig t;
  t.epochs = 40;
  t.lr = 1e-3;
  t.batch_size = 4;
  return t;
}

harness::DatasetManifest synthetic_manifest(int count, std::uint64_t seed) {
  harness::SynthConfig sc;
  sc.count = count;
  sc.seed = seed;
  harness::DatasetManifest m;
  for (const auto& item : harness::synth_plan(sc)) {
    const auto f = harness::render_item(sc, item);
    m.samples.push_back({"", f.image, item.label, item.distance_m, f.bbox});
  }
  return m;
}

std::string classifier_regression() {
  const auto t0 = Clock::now();
  const fs::path root = fs::temp_directory_path() / "urgr_acceptance_classifier";
  fs::remove_all(root);
  harness::SynthConfig sc;
  sc.count = 600;
  sc.seed = 7;
  const auto train = harness::synth_generate(sc, root / "train");
  sc.count = 300;
  sc.seed = 8;
  const auto test = harness::synth_generate(sc, root / "test");
  const gvit::GViTConfig cfg;
  require(cfg.graph_grid == 64, "default grid is not 64");
  const auto focus_cfg = harness::default_focus(cfg, nullptr);
  const auto r = harness::train_gvit(train, nullptr, focus_cfg, cfg, desk_gvit_train(), 1);
  const double t_train = seconds_since(t0);
  const auto report = harness::eval_classifier(test, harness::pipeline_predictor(focus_cfg, nullptr, r.model));
  const double t = seconds_since(t0);
  for (int c = 0; c < 6; ++c) {
    int row = report.no_user[static_cast<std::size_t>(c)];
    for (int p = 0; p < 6; ++p) row += report.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(p)];
    require(row == report.class_counts[static_cast<std::size_t>(c)], "confusion row sum differs from the class count");
  }
  const json j = report;
  require(j.at("distance_bins").size() == 26, "distance curve does not have 26 bins");
  for (const auto& b : j.at("distance_bins")) require(b.contains("accuracy"), "bin without an accuracy field");
  const std::string detail = "held-out accuracy " + fmt("%.3f", report.accuracy) + ", train " + fmt("%.0f s", t_train) +
                             ", total " + fmt("%.0f s", t);
  require(t <= 1200.0, "exceeded 20 min: " + detail);
  require(report.accuracy >= 0.90, detail);
  return detail;
}

// --------------------------------------------------------------- criterion 10

std::string pipeline_end_to_end() {
  harness::SynthConfig sc;
  sc.count = 12;
  sc.seed = 31;
  const auto plan = harness::synth_plan(sc);
  const auto frame = harness::render_item(sc, plan.front());
  require(frame.image.height() == 480 && frame.image.width() == 640, "frame is not 480x640");
  gvit::GViTConfig cfg;
  const gvit::GViT net = gvit::GViT::init(cfg, 3);
  focus::OracleDetector detector(frame.bbox);
  const auto focus_cfg = harness::default_focus(cfg, nullptr);
  const json j = gvit::urgr_infer(frame.image, detector, focus_cfg, nullptr, net);
  const json parsed = json::parse(j.dump());
  const int label = parsed.at("class").get<int>();
  require(label >= 1 && label <= 6, "class outside 1..6");
  require(parsed.at("name").get<std::string>() == gvit::class_name(label), "name does not match the class");
  const double certainty = parsed.at("certainty").get<double>();
  require(certainty > 0.0 && certainty <= 1.0, "certainty outside (0, 1]");
  focus::OracleDetector empty(std::nullopt);
  require(json(gvit::urgr_infer(frame.image, empty, focus_cfg, nullptr, net)) == json{{"no_user", true}},
          "empty frame not reported as no user");

  harness::DatasetManifest m = synthetic_manifest(12, 31);
  const auto bench = harness::bench_throughput(m, harness::pipeline_predictor(focus_cfg, nullptr, net), 1);
  require(std::isfinite(bench.hz) && bench.hz > 0.0, "throughput not finite");
  return j.dump() + ", " + fmt("%.2f Hz", bench.hz) + " (reference 11.43 Hz)";
}

// --------------------------------------------------------------- criterion 11

std::string persistence() {
  const fs::path dir = fs::temp_directory_path() / "urgr_acceptance_persist";
  fs::remove_all(dir);
  fs::create_directories(dir);
  harness::save_gvit(dir / "a.ckpt", gvit::GViT::init(small_gvit_config(), 5));
  harness::save_gvit(dir / "b.ckpt", harness::load_gvit(dir / "a.ckpt"));
  const auto a = harness::read_file(dir / "a.ckpt");
  require(a == harness::read_file(dir / "b.ckpt"), "GViT checkpoint not byte-identical");
  const auto hq = hqnet::HQNet::init(hqnet::HQNetConfig::scaled(0.125, 32), 6);
  harness::save_hqnet(dir / "h1.ckpt", hq);
  harness::save_hqnet(dir / "h2.ckpt", harness::load_hqnet(dir / "h1.ckpt"));
  require(harness::read_file(dir / "h1.ckpt") == harness::read_file(dir / "h2.ckpt"), "HQ-Net checkpoint not byte-identical");

  int detected = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto bad = a;
    bad[i] ^= 0x01;
    try {
      harness::decode_checkpoint(bad);
    } catch (const IntegrityError&) {
      ++detected;
      continue;
    }
    throw Failure("flip at byte " + std::to_string(i) + " not detected");
  }

  harness::SynthConfig sc;
  sc.count = 18;
  sc.seed = 3;
  sc.height = 120;
  sc.width = 160;
  sc.k = 600.0;
  const auto corpus = harness::synth_generate(sc, dir / "corpus");
  const auto loaded = harness::load_manifest(dir / "corpus" / "manifest.jsonl");
  harness::save_manifest(loaded, dir / "copy.jsonl");
  const auto back = harness::load_manifest(dir / "copy.jsonl");
  require(back.samples == loaded.samples && back.split == loaded.split && back.note == loaded.note,
          "manifest round trip lost information");
  require(harness::read_file(dir / "copy.jsonl") == harness::read_file(dir / "corpus" / "manifest.jsonl"),
          "manifest text changed on round trip");
  require(back.size() == corpus.size(), "manifest row count changed");
  fs::remove_all(dir);
  return std::to_string(detected) + "/" + std::to_string(a.size()) + " single-byte flips detected";
}

// --------------------------------------------------------------- criterion 12

struct Shell {
  fs::path root;

  std::string run(const std::string& args) const {
    const fs::path out = root / "stdout.txt", err = root / "stderr.txt";
    const std::string cmd =
        "'" URGR_CLI_PATH "' " + args + " > '" + out.string() + "' 2> '" + err.string() + "'";
    if (std::system(cmd.c_str()) != 0) {
      std::ifstream in(err);
      std::stringstream ss;
      ss << in.rdbuf();
      throw Failure("command failed: urgr " + args + "\n" + ss.str());
    }
    return (root / "stdout.txt").string();
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::string determinism() {
  const fs::path root = fs::temp_directory_path() / "urgr_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  Shell sh{root};
  std::ofstream(root / "synth.json") << json{{"height", 120}, {"width", 160}, {"k", 600.0}}.dump();
  std::ofstream(root / "hq.json")
      << json{{"model", {{"scale_factor", 0.125}}}, {"train", {{"epochs", 2}, {"batch_size", 4}}}}.dump();
  std::ofstream(root / "gv.json") << json{{"model",
                                           {{"graph_grid", 32},
                                            {"gc_dims", {4, 8}},
                                            {"vit",
                                             {{"token_grid", 4},
                                              {"embed_dim", 8},
                                              {"depth", 1},
                                              {"heads", 2},
                                              {"mlp_ratio", 2}}}}},
                                          {"train", {{"epochs", 2}, {"batch_size", 8}}}}
                                         .dump();
  const std::string synth = "--config " + q(root / "synth.json");
  sh.run("synth " + synth + " --count 24 --seed 5 --out " + q(root / "corpus"));
  sh.run("synth " + synth + " --count 12 --seed 6 --d-min 2 --d-max 8 --out " + q(root / "near"));
  sh.run("degrade-set --manifest " + q(root / "near" / "manifest.jsonl") + " --target 32 --out " + q(root / "pairs"));
  sh.run("train-hqnet --pairs " + q(root / "pairs") + " --config " + q(root / "hq.json") + " --out " +
         q(root / "hq.ckpt"));
  sh.run("train-gvit --manifest " + q(root / "corpus" / "manifest.jsonl") + " --config " + q(root / "gv.json") +
         " --out " + q(root / "gv.ckpt"));

  const std::vector<std::pair<std::string, std::function<std::string(int)>>> commands{
      {"synth",
       [&](int i) {
         return "synth " + synth + " --count 24 --seed 5 --out " + q(root / ("s" + std::to_string(i)));
       }},
      {"degrade-set",
       [&](int i) {
         return "degrade-set --manifest " + q(root / "near" / "manifest.jsonl") + " --target 32 --out " +
                q(root / ("p" + std::to_string(i)));
       }},
      {"train-hqnet",
       [&](int i) {
         return "train-hqnet --pairs " + q(root / "pairs") + " --config " + q(root / "hq.json") + " --seed 3 --out " +
                q(root / ("h" + std::to_string(i) + ".ckpt"));
       }},
      {"train-gvit",
       [&](int i) {
         return "train-gvit --manifest " + q(root / "corpus" / "manifest.jsonl") + " --config " + q(root / "gv.json") +
                " --seed 4 --out " + q(root / ("g" + std::to_string(i) + ".ckpt"));
       }},
      {"eval",
       [&](int) {
         return "eval --manifest " + q(root / "corpus" / "manifest.jsonl") + " --gvit " + q(root / "gv.ckpt") +
                " --hqnet " + q(root / "hq.ckpt");
       }},
      {"eval-sr", [&](int) { return "eval-sr --pairs " + q(root / "pairs") + " --hqnet " + q(root / "hq.ckpt"); }},
      {"sweep",
       [&](int) {
         return "sweep --manifest " + q(root / "corpus" / "manifest.jsonl") + " --config " + q(root / "gv.json") +
                " --fractions 0.5,1.0 --k 2 --seed 2";
       }},
  };
  for (const auto& [name, args] : commands) {
    const std::string a = slurp(sh.run(args(1)));
    const std::string b = slurp(sh.run(args(2)));
    require(!a.empty() && a == b, name + " report differs between runs");
  }
  require(slurp(root / "h1.ckpt") == slurp(root / "h2.ckpt"), "HQ-Net checkpoints differ between runs");
  require(slurp(root / "g1.ckpt") == slurp(root / "g2.ckpt"), "GViT checkpoints differ between runs");
  require(slurp(root / "s1" / "00007.png") == slurp(root / "s2" / "00007.png"), "synthetic frames differ between runs");
  fs::remove_all(root);
  return std::to_string(commands.size()) + " commands reproduced byte-for-byte";
}

struct Criterion {
  int id;
  std::string name;
  std::function<std::string()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance gate"};
  std::vector<int> only;
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "adjacency oracle", adjacency_oracle},
      {2, "graph convolution equivalence", gc_equivalence},
      {3, "gradient suite", gradient_suite},
      {4, "metric exactness", metric_exactness},
      {5, "degradation pipeline", degradation_pipeline},
      {6, "filter impulse responses", filter_impulses},
      {7, "architecture contracts", architecture_contracts},
      {8, "desk-scale SR regression", sr_regression},
      {9, "desk-scale classifier regression", classifier_regression},
      {10, "pipeline end-to-end", pipeline_end_to_end},
      {11, "persistence", persistence},
      {12, "determinism", determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    std::string status = "PASS", detail;
    try {
      detail = c.run();
    } catch (const std::exception& e) {
      status = "FAIL";
      detail = e.what();
      ++failed;
    }
    std::cout << "criterion " << c.id << ": " << status << "  " << c.name << "  (" << detail << ")" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
