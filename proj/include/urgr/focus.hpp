#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "urgr/image.hpp"

namespace urgr::focus {

/// Axis-aligned box in pixel units; (x0, y0) is the top-left corner.
struct BBox {
  double x0 = 0.0;
  double y0 = 0.0;
  double w = 0.0;
  double h = 0.0;

  double diagonal() const;
  double cx() const { return x0 + 0.5 * w; }
  double cy() const { return y0 + 0.5 * h; }
  bool valid() const;
  bool intersects(int frame_h, int frame_w) const;
  bool contains(double x, double y) const { return x >= x0 && x <= x0 + w && y >= y0 && y <= y0 + h; }
  bool operator==(const BBox&) const = default;
};

// JSON form is the array [x0, y0, w, h].
void to_json(nlohmann::json& j, const BBox& b);
void from_json(const nlohmann::json& j, BBox& b);

enum class Fill { Zero, Replicate };

struct FocusConfig {
  double a = 10.0;        // user-to-image ratio; pad = diagonal / a
  int target_size = 512;  // output side length
  Fill fill = Fill::Zero;

  void validate() const;
  bool operator==(const FocusConfig&) const = default;
};

void to_json(nlohmann::json& j, const FocusConfig& cfg);
void from_json(const nlohmann::json& j, FocusConfig& cfg);

struct Detection {
  BBox bbox;
  double confidence = 1.0;
  std::string class_tag = "person";
};

/// Person detector. Implementations report the highest-confidence person
/// and throw NotFound when there is none.
class Detector {
 public:
  virtual ~Detector() = default;
  virtual Detection detect(const Image& img) = 0;
};

/// Returns a known ground-truth box with confidence 1. An empty oracle
/// reports no person. Pure and reentrant.
class OracleDetector : public Detector {
 public:
  OracleDetector() = default;
  explicit OracleDetector(std::optional<BBox> box) : box_(box) {}
  void set(std::optional<BBox> box) { box_ = box; }
  Detection detect(const Image& img) override;

 private:
  std::optional<BBox> box_;
};

/// Runs `executable <image.png>` and parses detections from its stdout:
/// [{"bbox":[x0,y0,w,h],"conf":p,"class":"person"}, ...].
/// Uses a scratch file per call; not reentrant.
class ExternalDetector : public Detector {
 public:
  explicit ExternalDetector(std::string executable, std::string scratch_dir = {});
  Detection detect(const Image& img) override;
  // Skips the scratch copy when the frame already exists on disk.
  Detection detect_file(const std::string& path, int frame_h, int frame_w);

 private:
  std::string executable_;
  std::string scratch_dir_;
};

/// Highest-confidence person detection that intersects the frame.
/// Throws NotFound when none qualifies and ParseError on malformed JSON.
Detection select_detection(const nlohmann::json& detections, int frame_h, int frame_w);

Detection detect_user(const Image& img, Detector& detector);

/// Grows the box by diagonal/a in each dimension, split evenly on both
/// sides so the centre is preserved. The result may leave the frame.
BBox extend_bbox(const BBox& bbox, double a);

/// Crops the box (pixel-rounded edges; out-of-frame area zero-filled or
/// edge-replicated) and resizes it bicubically to target x target.
Image crop_and_resize(const Image& img, const BBox& bbox, int target, Fill fill = Fill::Zero);

Image focus_pipeline(const Image& img, Detector& detector, const FocusConfig& cfg);
// Same composition with the detection already known.
Image focus_on(const Image& img, const BBox& detected, const FocusConfig& cfg);

}  // namespace urgr::focus
