#include "urgr/focus.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <unistd.h>

#include "urgr/error.hpp"
#include "urgr/image_io.hpp"
#include "urgr/imaging.hpp"

namespace urgr::focus {

double BBox::diagonal() const { return std::sqrt(w * w + h * h); }

bool BBox::valid() const { return std::isfinite(x0) && std::isfinite(y0) && w > 0.0 && h > 0.0 && std::isfinite(w) && std::isfinite(h); }

bool BBox::intersects(int frame_h, int frame_w) const {
  return valid() && x0 < frame_w && y0 < frame_h && x0 + w > 0.0 && y0 + h > 0.0;
}

void to_json(nlohmann::json& j, const BBox& b) { j = nlohmann::json::array({b.x0, b.y0, b.w, b.h}); }

void from_json(const nlohmann::json& j, BBox& b) {
  if (!j.is_array() || j.size() != 4) throw InvalidArgument("bbox must be [x0, y0, w, h]");
  b = BBox{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!b.valid()) throw InvalidArgument("bbox must have positive width and height");
}

void FocusConfig::validate() const {
  if (!(a > 0.0) || !std::isfinite(a)) throw InvalidArgument("focus: a must be positive");
  if (target_size < 32) throw InvalidArgument("focus: target_size must be >= 32");
}

void to_json(nlohmann::json& j, const FocusConfig& c) {
  j = nlohmann::json{{"a", c.a}, {"target_size", c.target_size}, {"fill", c.fill == Fill::Zero ? "zero" : "replicate"}};
}

void from_json(const nlohmann::json& j, FocusConfig& c) {
  c = FocusConfig{};
  c.a = j.value("a", c.a);
  c.target_size = j.value("target_size", c.target_size);
  const std::string fill = j.value("fill", std::string("zero"));
  if (fill == "zero") {
    c.fill = Fill::Zero;
  } else if (fill == "replicate") {
    c.fill = Fill::Replicate;
  } else {
    throw InvalidArgument("focus: fill must be \"zero\" or \"replicate\"");
  }
  c.validate();
}

Detection OracleDetector::detect(const Image& img) {
  if (!box_) throw NotFound("no person in frame");
  if (!box_->intersects(img.height(), img.width())) throw NotFound("recorded box lies outside the frame");
  return Detection{*box_, 1.0, "person"};
}

ExternalDetector::ExternalDetector(std::string executable, std::string scratch_dir)
    : executable_(std::move(executable)), scratch_dir_(std::move(scratch_dir)) {
  if (executable_.empty()) throw InvalidArgument("external detector: empty executable");
  if (scratch_dir_.empty()) scratch_dir_ = std::filesystem::temp_directory_path().string();
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

}  // namespace

Detection ExternalDetector::detect(const Image& img) {
  const auto path = std::filesystem::path(scratch_dir_) / ("urgr_detect_" + std::to_string(::getpid()) + ".png");
  io::write_png(img, path);
  try {
    Detection d = detect_file(path.string(), img.height(), img.width());
    std::filesystem::remove(path);
    return d;
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove(path, ec);
    throw;
  }
}

Detection ExternalDetector::detect_file(const std::string& path, int frame_h, int frame_w) {
  const std::string cmd = shell_quote(executable_) + " " + shell_quote(path);
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) throw IoError("external detector: cannot start " + executable_);
  std::string out;
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
  const int status = ::pclose(pipe);
  if (status != 0) throw IoError("external detector exited with status " + std::to_string(status));
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(out);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(1, std::string("external detector output: ") + e.what());
  }
  return select_detection(doc, frame_h, frame_w);
}

Detection select_detection(const nlohmann::json& detections, int frame_h, int frame_w) {
  if (!detections.is_array()) throw ParseError(1, "detections must be a JSON array");
  std::optional<Detection> best;
  for (const auto& d : detections) {
    if (!d.is_object() || !d.contains("bbox")) throw ParseError(1, "detection without bbox");
    if (d.value("class", std::string("person")) != "person") continue;
    Detection det;
    try {
      det.bbox = d.at("bbox").get<BBox>();
      det.confidence = d.value("conf", 1.0);
    } catch (const std::exception& e) {
      throw ParseError(1, std::string("malformed detection: ") + e.what());
    }
    if (!det.bbox.intersects(frame_h, frame_w)) continue;
    if (!best || det.confidence > best->confidence) best = det;
  }
  if (!best) throw NotFound("no person detected");
  return *best;
}

Detection detect_user(const Image& img, Detector& detector) {
  if (!img.is_valid() || img.height() == 0 || img.width() == 0) throw InvalidArgument("detect_user: invalid image");
  return detector.detect(img);
}

BBox extend_bbox(const BBox& b, double a) {
  if (!(a > 0.0)) throw InvalidArgument("extend_bbox: a must be positive");
  const double pad = b.diagonal() / a;
  return BBox{b.x0 - 0.5 * pad, b.y0 - 0.5 * pad, b.w + pad, b.h + pad};
}

Image crop_and_resize(const Image& img, const BBox& bbox, int target, Fill fill) {
  if (target <= 0) throw InvalidArgument("crop_and_resize: target must be positive");
  if (!bbox.intersects(img.height(), img.width())) throw InvalidArgument("crop_and_resize: box outside the frame");
  const long x0 = std::lround(bbox.x0), y0 = std::lround(bbox.y0);
  const long x1 = std::max(x0 + 1, std::lround(bbox.x0 + bbox.w));
  const long y1 = std::max(y0 + 1, std::lround(bbox.y0 + bbox.h));
  const int cw = static_cast<int>(x1 - x0), ch = static_cast<int>(y1 - y0), c = img.channels();
  Image crop(ch, cw, c, 0.0);
  for (int y = 0; y < ch; ++y) {
    long sy = y0 + y;
    const bool in_y = sy >= 0 && sy < img.height();
    if (!in_y && fill == Fill::Zero) continue;
    sy = std::clamp<long>(sy, 0, img.height() - 1);
    for (int x = 0; x < cw; ++x) {
      long sx = x0 + x;
      const bool in_x = sx >= 0 && sx < img.width();
      if (!in_x && fill == Fill::Zero) continue;
      sx = std::clamp<long>(sx, 0, img.width() - 1);
      for (int k = 0; k < c; ++k) crop.at(y, x, k) = img.at(static_cast<int>(sy), static_cast<int>(sx), k);
    }
  }
  return imaging::bicubic_resize(crop, target, target);
}

Image focus_on(const Image& img, const BBox& detected, const FocusConfig& cfg) {
  cfg.validate();
  return crop_and_resize(img, extend_bbox(detected, cfg.a), cfg.target_size, cfg.fill);
}

Image focus_pipeline(const Image& img, Detector& detector, const FocusConfig& cfg) {
  return focus_on(img, detect_user(img, detector).bbox, cfg);
}

}  // namespace urgr::focus
