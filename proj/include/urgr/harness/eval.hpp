#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "urgr/error.hpp"
#include "urgr/focus.hpp"
#include "urgr/gvit.hpp"
#include "urgr/harness/dataset.hpp"
#include "urgr/hqnet.hpp"
#include "urgr/imaging.hpp"
#include "urgr/nn/random.hpp"

namespace urgr::harness {

inline constexpr int kDistanceBins = 26;

struct Prediction {
  bool no_user = false;
  int label = 0;  // 1..6 unless no_user
  double certainty = 0.0;
};

/// Maps a manifest row (frame already loaded) to a prediction.
using Predictor = std::function<Prediction(const Image& frame, const Sample& sample)>;

struct BinStat {
  int count = 0;
  int correct = 0;
  std::optional<double> accuracy() const {
    return count == 0 ? std::nullopt : std::optional<double>(static_cast<double>(correct) / count);
  }
};

struct EvalReport {
  int n = 0;
  int correct = 0;
  double accuracy = 0.0;
  std::array<BinStat, kDistanceBins> bins{};
  // confusion[true - 1][predicted - 1]; no-user rows are counted in no_user.
  std::array<std::array<int, 6>, 6> confusion{};
  std::array<int, 6> class_counts{};
  std::array<int, 6> no_user{};
  std::array<std::optional<double>, 6> precision{};
  std::array<std::optional<double>, 6> recall{};
  int no_user_total = 0;
};

void to_json(nlohmann::json& j, const EvalReport& r);

/// Aggregates predictions aligned with the manifest rows.
EvalReport evaluate_predictions(const DatasetManifest& m, const std::vector<Prediction>& predictions);
/// Runs `predict` on every row, then aggregates.
EvalReport eval_classifier(const DatasetManifest& m, const Predictor& predict);

/// Focus on the row's recorded box (no box means no user), optional
/// enhancement, classification.
Predictor pipeline_predictor(const focus::FocusConfig& focus_cfg, const hqnet::HQNet* enhancer,
                             const gvit::GViT& classifier);
/// Same pipeline with a live detector instead of recorded boxes.
Predictor detector_predictor(focus::Detector& detector, const focus::FocusConfig& focus_cfg,
                             const hqnet::HQNet* enhancer, const gvit::GViT& classifier);

struct QualityRow {
  double mse = 0.0;
  imaging::Psnr psnr;
};

struct SrReport {
  int n = 0;
  QualityRow model;
  QualityRow baseline;  // identity: degraded vs clean
  double gain_db() const;
};

void to_json(nlohmann::json& j, const SrReport& r);

using SrFn = std::function<Image(const Image& degraded)>;

/// Mean MSE and mean PSNR of sr(degraded) and of the identity against clean.
/// Any infinite per-pair PSNR makes the mean infinite.
SrReport eval_sr(const std::vector<hqnet::DegradationPair>& pairs, const SrFn& sr);

struct SweepRow {
  double fraction = 0.0;
  std::size_t subset_size = 0;
  std::vector<double> scores;
  double mean = 0.0;
  double stddev = 0.0;  // population
};

struct SweepReport {
  std::vector<SweepRow> rows;
  bool monotone = false;  // means non-decreasing in fraction; reported only
};

void to_json(nlohmann::json& j, const SweepReport& r);

/// Subset for (fraction, repeat): round(fraction * n) distinct rows drawn
/// with a seeded shuffle.
std::vector<std::size_t> sweep_subset(std::size_t n, double fraction, int repeat, std::uint64_t seed);

/// For each fraction, `k` random subsets; train on each, score the model.
template <class Model>
SweepReport data_sweep(const DatasetManifest& m, const std::vector<double>& fractions, int k, std::uint64_t seed,
                       const std::function<Model(const DatasetManifest&, std::uint64_t)>& train_fn,
                       const std::function<double(const Model&)>& eval_fn) {
  if (k < 1) throw InvalidArgument("data_sweep: k must be >= 1");
  SweepReport report;
  for (double f : fractions) {
    if (!(f > 0.0) || f > 1.0) throw InvalidArgument("data_sweep: fractions must lie in (0, 1]");
    SweepRow row;
    row.fraction = f;
    for (int r = 0; r < k; ++r) {
      const auto rows = sweep_subset(m.size(), f, r, seed);
      row.subset_size = rows.size();
      const std::uint64_t run_seed = seed + static_cast<std::uint64_t>(r);
      row.scores.push_back(eval_fn(train_fn(m.subset(rows), run_seed)));
    }
    double sum = 0.0;
    for (double s : row.scores) sum += s;
    row.mean = sum / k;
    double var = 0.0;
    for (double s : row.scores) var += (s - row.mean) * (s - row.mean);
    row.stddev = std::sqrt(var / k);
    report.rows.push_back(std::move(row));
  }
  report.monotone = true;
  for (std::size_t i = 1; i < report.rows.size(); ++i)
    if (report.rows[i].fraction > report.rows[i - 1].fraction && report.rows[i].mean < report.rows[i - 1].mean)
      report.monotone = false;
  return report;
}

struct BenchReport {
  double hz = 0.0;
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  int n_frames = 0;
  int repetitions = 0;
};

void to_json(nlohmann::json& j, const BenchReport& r);

/// Times `predict` on every frame `repetitions` times. A frame's latency is
/// its median over repetitions; hz = 1000 / mean latency.
BenchReport bench_throughput(const DatasetManifest& m, const Predictor& predict, int repetitions);

}  // namespace urgr::harness
