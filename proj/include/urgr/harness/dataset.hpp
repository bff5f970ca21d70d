#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "urgr/focus.hpp"
#include "urgr/hqnet.hpp"
#include "urgr/image.hpp"
#include "urgr/imaging.hpp"

namespace urgr::harness {

inline constexpr double kMaxDistance = 25.0;

/// One labeled frame: image file (relative to the manifest) or inline image,
/// gesture class 1..6, camera distance in meters, optional person box.
struct Sample {
  std::string path;
  std::optional<Image> image;
  int label = 1;
  double distance_m = 0.0;
  std::optional<focus::BBox> bbox;

  void validate() const;
  bool operator==(const Sample&) const = default;
};

struct DatasetManifest {
  std::vector<Sample> samples;
  std::string split;  // "train", "test" or empty
  std::string note;
  std::filesystem::path base_dir;  // where relative paths resolve; not serialised

  std::size_t size() const { return samples.size(); }
  std::array<int, 6> class_histogram() const;
  // 26 one-meter bins, see distance_bin.
  std::array<int, 26> distance_histogram() const;
  // Smallest class count over largest; 1 for a perfectly balanced set.
  double class_balance() const;
  // Frame for row i: the inline image, else the file, as 3 channels.
  Image load_image(std::size_t i) const;
  DatasetManifest subset(const std::vector<std::size_t>& rows) const;
};

/// Bin k holds [k, k+1) for k < 25; bin 25 holds exactly 25.
int distance_bin(double d);

/// JSONL: an optional header {"manifest":{"split":..,"note":..}}, then one
/// {"path","class","distance_m"[,"bbox"]} object per line. Blank lines are
/// skipped. Errors carry the 1-based line number.
DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir = {});
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& m, std::ostream& out);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
nlohmann::json manifest_summary(const DatasetManifest& m);

struct SynthConfig {
  int count = 600;
  std::uint64_t seed = 7;
  int height = 480;
  int width = 640;
  double d_min = 0.0;
  double d_max = kMaxDistance;
  double k = 2400.0;               // figure height in px at 1 m
  double blur_per_m = 0.08;        // Gaussian sigma in px per meter
  double noise_per_m = 0.004;      // additive noise std per meter
  double clutter_density = 1.0;    // background shapes per 10,000 px

  void validate() const;
  bool operator==(const SynthConfig&) const = default;
};

void to_json(nlohmann::json& j, const SynthConfig& cfg);
void from_json(const nlohmann::json& j, SynthConfig& cfg);

struct SynthFrame {
  Image image;        // 8-bit quantised frame
  Image mask;         // 1-channel figure coverage before blur and noise
  focus::BBox bbox;   // analytic figure extent
  double figure_height = 0.0;
};

/// Renders one frame: cluttered background, stick figure of height
/// min(k/d, frame height) posed for `label`, blur and noise growing with d.
/// `gesture_right` selects the gesturing arm. Deterministic in `seed`.
SynthFrame render_frame(const SynthConfig& cfg, int label, double distance_m, bool gesture_right,
                        std::uint64_t seed);
/// Background only, no figure.
Image render_background(const SynthConfig& cfg, double distance_m, std::uint64_t seed);

/// One planned corpus row.
struct SynthItem {
  int label = 1;
  double distance_m = 0.0;
  bool gesture_right = true;
  std::uint64_t seed = 0;
};

/// Exact class balance (count/6 each, remainder to the lowest classes) in
/// seeded random order, uniform distances, uniform gesturing side.
std::vector<SynthItem> synth_plan(const SynthConfig& cfg);
SynthFrame render_item(const SynthConfig& cfg, const SynthItem& item);
/// Renders the plan to out_dir/NNNNN.png and writes out_dir/manifest.jsonl.
DatasetManifest synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir);

/// Focus every row with 2 <= d <= 8 (recorded box, else `detector`), quantise
/// to 8 bits and pair it with its degradation. Rows where the detector finds
/// no person are skipped.
std::vector<hqnet::DegradationPair> build_degradation_set(const DatasetManifest& m, const focus::FocusConfig& focus_cfg,
                                                          const imaging::DegradationConfig& degradation,
                                                          focus::Detector* detector = nullptr);

/// Pair directory: NNNNN_degraded.png, NNNNN_clean.png and pairs.jsonl.
void write_pairs(const std::vector<hqnet::DegradationPair>& pairs, const std::filesystem::path& dir);
std::vector<hqnet::DegradationPair> read_pairs(const std::filesystem::path& dir);

/// Round to the 8-bit grid used by image files.
Image quantize8(const Image& img);

}  // namespace urgr::harness
