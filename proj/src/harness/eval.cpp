#include "urgr/harness/eval.hpp"

#include <algorithm>
#include <chrono>
#include <limits>

namespace urgr::harness {

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

Prediction from_infer(const gvit::InferResult& r) { return Prediction{r.no_user, r.label, r.certainty}; }

}  // namespace

void to_json(nlohmann::json& j, const EvalReport& r) {
  nlohmann::json bins = nlohmann::json::array();
  for (int b = 0; b < kDistanceBins; ++b) {
    const BinStat& s = r.bins[static_cast<std::size_t>(b)];
    bins.push_back({{"lo", b}, {"hi", b == kDistanceBins - 1 ? b : b + 1}, {"count", s.count},
                    {"correct", s.correct}, {"accuracy", opt(s.accuracy())}});
  }
  nlohmann::json precision = nlohmann::json::array(), recall = nlohmann::json::array();
  for (int c = 0; c < 6; ++c) {
    precision.push_back(opt(r.precision[static_cast<std::size_t>(c)]));
    recall.push_back(opt(r.recall[static_cast<std::size_t>(c)]));
  }
  j = nlohmann::json{{"n", r.n},
                     {"correct", r.correct},
                     {"accuracy", r.accuracy},
                     {"distance_bins", bins},
                     {"confusion", r.confusion},
                     {"class_counts", r.class_counts},
                     {"no_user", r.no_user},
                     {"no_user_total", r.no_user_total},
                     {"precision", precision},
                     {"recall", recall}};
}

EvalReport evaluate_predictions(const DatasetManifest& m, const std::vector<Prediction>& predictions) {
  if (predictions.size() != m.size()) throw InvalidArgument("evaluate_predictions: one prediction per row required");
  EvalReport r;
  r.n = static_cast<int>(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Sample& s = m.samples[i];
    const Prediction& p = predictions[i];
    const auto t = static_cast<std::size_t>(s.label - 1);
    BinStat& bin = r.bins[static_cast<std::size_t>(distance_bin(s.distance_m))];
    ++bin.count;
    ++r.class_counts[t];
    if (p.no_user) {
      ++r.no_user[t];
      ++r.no_user_total;
      continue;
    }
    if (p.label < 1 || p.label > 6) throw InvalidArgument("evaluate_predictions: predicted class outside 1..6");
    ++r.confusion[t][static_cast<std::size_t>(p.label - 1)];
    if (p.label == s.label) {
      ++r.correct;
      ++bin.correct;
    }
  }
  r.accuracy = r.n == 0 ? 0.0 : static_cast<double>(r.correct) / r.n;
  for (std::size_t c = 0; c < 6; ++c) {
    int predicted = 0;
    for (std::size_t t = 0; t < 6; ++t) predicted += r.confusion[t][c];
    if (predicted > 0) r.precision[c] = static_cast<double>(r.confusion[c][c]) / predicted;
    if (r.class_counts[c] > 0) r.recall[c] = static_cast<double>(r.confusion[c][c]) / r.class_counts[c];
  }
  return r;
}

EvalReport eval_classifier(const DatasetManifest& m, const Predictor& predict) {
  std::vector<Prediction> predictions;
  predictions.reserve(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) predictions.push_back(predict(m.load_image(i), m.samples[i]));
  return evaluate_predictions(m, predictions);
}

Predictor pipeline_predictor(const focus::FocusConfig& focus_cfg, const hqnet::HQNet* enhancer,
                             const gvit::GViT& classifier) {
  return [focus_cfg, enhancer, &classifier](const Image& frame, const Sample& s) {
    focus::OracleDetector oracle(s.bbox);
    return from_infer(gvit::urgr_infer(frame, oracle, focus_cfg, enhancer, classifier));
  };
}

Predictor detector_predictor(focus::Detector& detector, const focus::FocusConfig& focus_cfg,
                             const hqnet::HQNet* enhancer, const gvit::GViT& classifier) {
  return [&detector, focus_cfg, enhancer, &classifier](const Image& frame, const Sample&) {
    return from_infer(gvit::urgr_infer(frame, detector, focus_cfg, enhancer, classifier));
  };
}

double SrReport::gain_db() const {
  if (model.psnr.infinite) return baseline.psnr.infinite ? 0.0 : std::numeric_limits<double>::infinity();
  if (baseline.psnr.infinite) return -std::numeric_limits<double>::infinity();
  return model.psnr.db - baseline.psnr.db;
}

void to_json(nlohmann::json& j, const SrReport& r) {
  auto row = [](const QualityRow& q) { return nlohmann::json{{"mse", q.mse}, {"psnr", q.psnr}}; };
  const double gain = r.gain_db();
  j = nlohmann::json{{"n", r.n},
                     {"model", row(r.model)},
                     {"baseline", row(r.baseline)},
                     {"gain_db", std::isfinite(gain) ? nlohmann::json(gain) : nlohmann::json(nullptr)}};
}

SrReport eval_sr(const std::vector<hqnet::DegradationPair>& pairs, const SrFn& sr) {
  if (pairs.empty()) throw InvalidArgument("eval_sr: no pairs");
  SrReport r;
  r.n = static_cast<int>(pairs.size());
  double mse_m = 0.0, mse_b = 0.0, db_m = 0.0, db_b = 0.0;
  bool inf_m = false, inf_b = false;
  for (const auto& p : pairs) {
    const Image out = sr(p.degraded);
    if (!out.same_shape(p.clean)) throw InvalidArgument("eval_sr: SR output changes the image dimensions");
    const auto qm = imaging::quality(out, p.clean);
    const auto qb = imaging::quality(p.degraded, p.clean);
    mse_m += qm.mse;
    mse_b += qb.mse;
    inf_m = inf_m || qm.psnr.infinite;
    inf_b = inf_b || qb.psnr.infinite;
    db_m += qm.psnr.db;
    db_b += qb.psnr.db;
  }
  const double n = static_cast<double>(pairs.size());
  r.model = {mse_m / n, inf_m ? imaging::Psnr::Infinite() : imaging::Psnr{db_m / n, false}};
  r.baseline = {mse_b / n, inf_b ? imaging::Psnr::Infinite() : imaging::Psnr{db_b / n, false}};
  return r;
}

void to_json(nlohmann::json& j, const SweepReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const SweepRow& row : r.rows)
    rows.push_back({{"fraction", row.fraction},
                    {"subset_size", row.subset_size},
                    {"scores", row.scores},
                    {"mean", row.mean},
                    {"std", row.stddev}});
  j = nlohmann::json{{"rows", rows}, {"monotone", r.monotone}};
}

std::vector<std::size_t> sweep_subset(std::size_t n, double fraction, int repeat, std::uint64_t seed) {
  const auto size = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (size == 0) throw InvalidArgument("data_sweep: fraction yields an empty subset");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  nn::Rng rng(seed * 1000003ULL + static_cast<std::uint64_t>(repeat));
  rng.shuffle(idx.begin(), idx.end());
  idx.resize(size);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void to_json(nlohmann::json& j, const BenchReport& r) {
  j = nlohmann::json{{"hz", r.hz},           {"mean_ms", r.mean_ms},        {"p50_ms", r.p50_ms},
                     {"p95_ms", r.p95_ms},   {"n_frames", r.n_frames},      {"repetitions", r.repetitions}};
}

BenchReport bench_throughput(const DatasetManifest& m, const Predictor& predict, int repetitions) {
  if (m.size() < 10) throw InvalidArgument("bench_throughput: need at least 10 frames");
  if (repetitions < 1) throw InvalidArgument("bench_throughput: repetitions must be >= 1");
  std::vector<Image> frames;
  frames.reserve(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) frames.push_back(m.load_image(i));
  std::vector<double> latency(frames.size());
  std::vector<double> reps(static_cast<std::size_t>(repetitions));
  for (std::size_t i = 0; i < frames.size(); ++i) {
    for (int r = 0; r < repetitions; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      predict(frames[i], m.samples[i]);
      reps[static_cast<std::size_t>(r)] =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    std::sort(reps.begin(), reps.end());
    latency[i] = reps[reps.size() / 2];
  }
  BenchReport b;
  b.n_frames = static_cast<int>(frames.size());
  b.repetitions = repetitions;
  double sum = 0.0;
  for (double l : latency) sum += l;
  b.mean_ms = sum / static_cast<double>(latency.size());
  std::sort(latency.begin(), latency.end());
  auto rank = [&](double q) {
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(latency.size())));
    return latency[std::max<std::size_t>(k, 1) - 1];
  };
  b.p50_ms = rank(0.5);
  b.p95_ms = rank(0.95);
  b.hz = 1000.0 / b.mean_ms;
  return b;
}

}  // namespace urgr::harness
