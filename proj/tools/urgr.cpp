#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "urgr/error.hpp"
#include "urgr/focus.hpp"
#include "urgr/gvit.hpp"
#include "urgr/harness/checkpoint.hpp"
#include "urgr/harness/dataset.hpp"
#include "urgr/harness/eval.hpp"
#include "urgr/harness/training.hpp"
#include "urgr/hqnet.hpp"
#include "urgr/image_io.hpp"

using namespace urgr;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(1, path + ": " + e.what());
  }
}

void write_json(const std::string& path, const json& j) {
  const std::string text = j.dump(2) + "\n";
  harness::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// Writes the report when a path is given and always echoes it to stdout.
void emit(const std::string& path, const json& report) {
  if (!path.empty()) write_json(path, report);
  std::cout << report.dump() << "\n";
}

std::uint64_t effective_seed(std::uint64_t flag) {
  if (const char* env = std::getenv("URGR_SEED"); env && *env) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw InvalidArgument("URGR_SEED must be an unsigned integer");
    }
  }
  return flag;
}

std::vector<double> parse_fractions(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw InvalidArgument("bad fraction '" + item + "'");
    }
  }
  if (out.empty()) throw InvalidArgument("no fractions given");
  return out;
}

struct Options {
  std::string out, manifest, pairs, config, report, hqnet, gvit, image, detector = "oracle", detector_exe,
      bbox, fractions = "0.1,0.25,0.5,1.0", test_manifest, focus;
  int count = 600, quality = 30, target = 0, k = 5, repetitions = 3;
  std::uint64_t seed = 7;
  double d_min = 0.0, d_max = 25.0;
};

focus::FocusConfig focus_for(const Options& o, const gvit::GViTConfig& g, const hqnet::HQNet* enhancer) {
  if (!o.focus.empty()) return read_json(o.focus).get<focus::FocusConfig>();
  return harness::default_focus(g, enhancer);
}

std::optional<hqnet::HQNet> maybe_hqnet(const Options& o) {
  if (o.hqnet.empty()) return std::nullopt;
  return harness::load_hqnet(o.hqnet);
}

int cmd_synth(const Options& o) {
  harness::SynthConfig cfg;
  if (!o.config.empty()) cfg = read_json(o.config).get<harness::SynthConfig>();
  cfg.count = o.count;
  cfg.seed = effective_seed(o.seed);
  cfg.d_min = o.d_min;
  cfg.d_max = o.d_max;
  const harness::DatasetManifest m = harness::synth_generate(cfg, o.out);
  emit(o.report, {{"command", "synth"}, {"config", cfg}, {"summary", harness::manifest_summary(m)}});
  return 0;
}

int cmd_degrade_set(const Options& o) {
  const harness::DatasetManifest m = harness::load_manifest(o.manifest);
  focus::FocusConfig fcfg;
  if (o.target > 0) fcfg.target_size = o.target;
  fcfg.validate();
  imaging::DegradationConfig dcfg;
  dcfg.jpeg_quality = o.quality;
  const auto pairs = harness::build_degradation_set(m, fcfg, dcfg);
  harness::write_pairs(pairs, o.out);
  emit(o.report, {{"command", "degrade-set"}, {"n_pairs", pairs.size()}, {"focus", fcfg}, {"degradation", dcfg}});
  return 0;
}

int cmd_train_hqnet(const Options& o) {
  const auto pairs = harness::read_pairs(o.pairs);
  const json c = o.config.empty() ? json::object() : read_json(o.config);
  json model = c.value("model", json::object());
  if (!model.contains("input_size")) model["input_size"] = pairs.front().clean.height();
  const auto cfg = model.get<hqnet::HQNetConfig>();
  const auto hyper = c.value("train", json::object()).get<hqnet::TrainConfig>();
  const std::uint64_t seed = effective_seed(o.seed);
  const auto r = hqnet::train(pairs, cfg, hyper, seed);
  harness::save_hqnet(o.out, r.model);
  emit(o.report.empty() ? o.out + ".json" : o.report, {{"command", "train-hqnet"},
                                                        {"seed", seed},
                                                        {"n_pairs", pairs.size()},
                                                        {"model", cfg},
                                                        {"train", hyper},
                                                        {"epoch_loss", r.epoch_loss}});
  return 0;
}

int cmd_train_gvit(const Options& o) {
  const harness::DatasetManifest m = harness::load_manifest(o.manifest);
  const json c = o.config.empty() ? json::object() : read_json(o.config);
  const auto cfg = c.value("model", json::object()).get<gvit::GViTConfig>();
  const auto hyper = c.value("train", json::object()).get<gvit::TrainConfig>();
  const auto enhancer = maybe_hqnet(o);
  const hqnet::HQNet* e = enhancer ? &*enhancer : nullptr;
  focus::FocusConfig fcfg = c.contains("focus") ? c.at("focus").get<focus::FocusConfig>() : focus_for(o, cfg, e);
  const std::uint64_t seed = effective_seed(o.seed);
  const auto r = harness::train_gvit(m, e, fcfg, cfg, hyper, seed);
  harness::save_gvit(o.out, r.model);
  emit(o.report.empty() ? o.out + ".json" : o.report, {{"command", "train-gvit"},
                                                        {"seed", seed},
                                                        {"n", m.size()},
                                                        {"enhanced", e != nullptr},
                                                        {"model", cfg},
                                                        {"train", hyper},
                                                        {"focus", fcfg},
                                                        {"epoch_loss", r.epoch_loss},
                                                        {"epoch_accuracy", r.epoch_accuracy}});
  return 0;
}

int cmd_eval(const Options& o) {
  const harness::DatasetManifest m = harness::load_manifest(o.manifest);
  const gvit::GViT net = harness::load_gvit(o.gvit);
  const auto enhancer = maybe_hqnet(o);
  const hqnet::HQNet* e = enhancer ? &*enhancer : nullptr;
  const auto fcfg = focus_for(o, net.config, e);
  const auto report = harness::eval_classifier(m, harness::pipeline_predictor(fcfg, e, net));
  emit(o.report, {{"command", "eval"}, {"enhanced", e != nullptr}, {"focus", fcfg}, {"report", report}});
  return 0;
}

int cmd_eval_sr(const Options& o) {
  const auto pairs = harness::read_pairs(o.pairs);
  const hqnet::HQNet net = harness::load_hqnet(o.hqnet);
  const auto report = harness::eval_sr(pairs, [&](const Image& x) { return hqnet::enhance(net, x); });
  emit(o.report, {{"command", "eval-sr"}, {"report", report}});
  return 0;
}

int cmd_infer(const Options& o) {
  Image frame = io::read_png(o.image);
  if (frame.channels() != 3) throw InvalidArgument("infer: expected an RGB image");
  const gvit::GViT net = harness::load_gvit(o.gvit);
  const auto enhancer = maybe_hqnet(o);
  const hqnet::HQNet* e = enhancer ? &*enhancer : nullptr;
  const auto fcfg = focus_for(o, net.config, e);
  std::unique_ptr<focus::Detector> detector;
  if (o.detector == "oracle") {
    std::optional<focus::BBox> box;
    if (!o.bbox.empty()) box = json::parse("[" + o.bbox + "]").get<focus::BBox>();
    detector = std::make_unique<focus::OracleDetector>(box);
  } else if (o.detector == "external") {
    if (o.detector_exe.empty()) throw InvalidArgument("infer: --detector external needs --detector-exe");
    detector = std::make_unique<focus::ExternalDetector>(o.detector_exe);
  } else {
    throw InvalidArgument("infer: --detector must be oracle or external");
  }
  const gvit::InferResult r = gvit::urgr_infer(frame, *detector, fcfg, e, net);
  emit(o.out, json(r));
  return 0;
}

int cmd_sweep(const Options& o) {
  const harness::DatasetManifest m = harness::load_manifest(o.manifest);
  const harness::DatasetManifest test = o.test_manifest.empty() ? m : harness::load_manifest(o.test_manifest);
  const json c = o.config.empty() ? json::object() : read_json(o.config);
  const auto cfg = c.value("model", json::object()).get<gvit::GViTConfig>();
  const auto hyper = c.value("train", json::object()).get<gvit::TrainConfig>();
  const auto fcfg = c.contains("focus") ? c.at("focus").get<focus::FocusConfig>() : focus_for(o, cfg, nullptr);
  const std::uint64_t seed = effective_seed(o.seed);
  std::function<gvit::GViT(const harness::DatasetManifest&, std::uint64_t)> train_fn =
      [&](const harness::DatasetManifest& subset, std::uint64_t s) {
        return harness::train_gvit(subset, nullptr, fcfg, cfg, hyper, s).model;
      };
  std::function<double(const gvit::GViT&)> eval_fn = [&](const gvit::GViT& net) {
    return harness::eval_classifier(test, harness::pipeline_predictor(fcfg, nullptr, net)).accuracy;
  };
  const auto report = harness::data_sweep<gvit::GViT>(m, parse_fractions(o.fractions), o.k, seed, train_fn, eval_fn);
  emit(o.report, {{"command", "sweep"}, {"seed", seed}, {"k", o.k}, {"report", report}});
  return 0;
}

int cmd_bench(const Options& o) {
  const harness::DatasetManifest m = harness::load_manifest(o.manifest);
  const gvit::GViT net = harness::load_gvit(o.gvit);
  const auto enhancer = maybe_hqnet(o);
  const hqnet::HQNet* e = enhancer ? &*enhancer : nullptr;
  const auto fcfg = focus_for(o, net.config, e);
  const auto report = harness::bench_throughput(m, harness::pipeline_predictor(fcfg, e, net), o.repetitions);
  json j = report;
  j["reference_hz"] = 11.43;
  emit(o.report, {{"command", "bench"}, {"report", j}});
  return 0;
}

std::pair<std::string, int> classify_error(const std::exception& e) {
  if (dynamic_cast<const ParseError*>(&e)) return {"parse_error", 4};
  if (dynamic_cast<const InvalidArgument*>(&e)) return {"invalid_argument", 2};
  if (dynamic_cast<const IoError*>(&e)) return {"io_error", 3};
  if (dynamic_cast<const IntegrityError*>(&e)) return {"integrity_error", 5};
  if (dynamic_cast<const ConfigMismatch*>(&e)) return {"config_mismatch", 6};
  if (dynamic_cast<const TrainingDiverged*>(&e)) return {"training_diverged", 7};
  if (dynamic_cast<const NotFound*>(&e)) return {"not_found", 8};
  if (dynamic_cast<const json::exception*>(&e)) return {"invalid_argument", 2};
  return {"internal_error", 1};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ultra-range gesture recognition toolkit"};
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "Render a synthetic gesture corpus");
  synth->add_option("--out", o.out, "Output directory")->required();
  synth->add_option("--count", o.count, "Number of frames");
  synth->add_option("--seed", o.seed, "Random seed");
  synth->add_option("--d-min", o.d_min, "Minimum distance in meters");
  synth->add_option("--d-max", o.d_max, "Maximum distance in meters");
  synth->add_option("--config", o.config, "SynthConfig JSON for the remaining fields");
  synth->add_option("--report", o.report, "Report JSON path");

  auto* degrade = app.add_subcommand("degrade-set", "Build degradation pairs from a manifest");
  degrade->add_option("--manifest", o.manifest)->required();
  degrade->add_option("--out", o.out, "Pair directory")->required();
  degrade->add_option("--quality", o.quality, "JPEG quality");
  degrade->add_option("--target", o.target, "Focus target size (default 512)");
  degrade->add_option("--report", o.report);

  auto* thq = app.add_subcommand("train-hqnet", "Train the enhancement network");
  thq->add_option("--pairs", o.pairs)->required();
  thq->add_option("--config", o.config, "JSON {model, train}");
  thq->add_option("--out", o.out, "Checkpoint path")->required();
  thq->add_option("--seed", o.seed);
  thq->add_option("--report", o.report, "Report JSON (default <out>.json)");

  auto* tgv = app.add_subcommand("train-gvit", "Train the gesture classifier");
  tgv->add_option("--manifest", o.manifest)->required();
  tgv->add_option("--hqnet", o.hqnet, "Enhance crops with this checkpoint");
  tgv->add_option("--config", o.config, "JSON {model, train, focus}");
  tgv->add_option("--out", o.out)->required();
  tgv->add_option("--seed", o.seed);
  tgv->add_option("--report", o.report);

  auto* ev = app.add_subcommand("eval", "Evaluate the full pipeline on a manifest");
  ev->add_option("--manifest", o.manifest)->required();
  ev->add_option("--hqnet", o.hqnet);
  ev->add_option("--gvit", o.gvit)->required();
  ev->add_option("--focus", o.focus, "FocusConfig JSON");
  ev->add_option("--report", o.report);

  auto* evsr = app.add_subcommand("eval-sr", "PSNR of the enhancer against the identity baseline");
  evsr->add_option("--pairs", o.pairs)->required();
  evsr->add_option("--hqnet", o.hqnet)->required();
  evsr->add_option("--report", o.report);

  auto* inf = app.add_subcommand("infer", "Classify one frame");
  inf->add_option("--image", o.image)->required();
  inf->add_option("--hqnet", o.hqnet);
  inf->add_option("--gvit", o.gvit)->required();
  inf->add_option("--detector", o.detector, "oracle or external");
  inf->add_option("--detector-exe", o.detector_exe, "External detector executable");
  inf->add_option("--bbox", o.bbox, "Oracle box x0,y0,w,h");
  inf->add_option("--focus", o.focus);
  inf->add_option("--out", o.out);

  auto* sw = app.add_subcommand("sweep", "Accuracy against training-set size");
  sw->add_option("--manifest", o.manifest)->required();
  sw->add_option("--test-manifest", o.test_manifest, "Held-out manifest (default: the training manifest)");
  sw->add_option("--fractions", o.fractions);
  sw->add_option("--k", o.k, "Random subsets per fraction");
  sw->add_option("--config", o.config);
  sw->add_option("--seed", o.seed);
  sw->add_option("--report", o.report);

  auto* bench = app.add_subcommand("bench", "Pipeline throughput");
  bench->add_option("--manifest", o.manifest)->required();
  bench->add_option("--hqnet", o.hqnet);
  bench->add_option("--gvit", o.gvit)->required();
  bench->add_option("--repetitions", o.repetitions);
  bench->add_option("--focus", o.focus);
  bench->add_option("--report", o.report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(o);
    if (degrade->parsed()) return cmd_degrade_set(o);
    if (thq->parsed()) return cmd_train_hqnet(o);
    if (tgv->parsed()) return cmd_train_gvit(o);
    if (ev->parsed()) return cmd_eval(o);
    if (evsr->parsed()) return cmd_eval_sr(o);
    if (inf->parsed()) return cmd_infer(o);
    if (sw->parsed()) return cmd_sweep(o);
    if (bench->parsed()) return cmd_bench(o);
  } catch (const std::exception& e) {
    const auto [kind, code] = classify_error(e);
    std::cerr << json{{"error", kind}, {"message", e.what()}}.dump() << "\n";
    return code;
  }
  return 1;
}
