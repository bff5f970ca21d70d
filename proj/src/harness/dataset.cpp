#include "urgr/harness/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "urgr/error.hpp"
#include "urgr/gvit.hpp"
#include "urgr/image_io.hpp"
#include "urgr/nn/random.hpp"

namespace urgr::harness {

namespace fs = std::filesystem;

void Sample::validate() const {
  if (label < 1 || label > 6) throw InvalidArgument("class must be in 1..6, got " + std::to_string(label));
  if (!std::isfinite(distance_m) || distance_m < 0.0 || distance_m > kMaxDistance)
    throw InvalidArgument("distance_m must be in [0, 25]");
  if (path.empty() && !image) throw InvalidArgument("sample needs a path or an inline image");
  if (bbox && !bbox->valid()) throw InvalidArgument("bbox must have positive width and height");
}

int distance_bin(double d) {
  if (!(d >= 0.0) || d > kMaxDistance) throw InvalidArgument("distance outside [0, 25]");
  return static_cast<int>(std::floor(d));
}

std::array<int, 6> DatasetManifest::class_histogram() const {
  std::array<int, 6> h{};
  for (const Sample& s : samples) ++h[static_cast<std::size_t>(s.label - 1)];
  return h;
}

std::array<int, 26> DatasetManifest::distance_histogram() const {
  std::array<int, 26> h{};
  for (const Sample& s : samples) ++h[static_cast<std::size_t>(distance_bin(s.distance_m))];
  return h;
}

double DatasetManifest::class_balance() const {
  const auto h = class_histogram();
  const int hi = *std::max_element(h.begin(), h.end());
  return hi == 0 ? 1.0 : static_cast<double>(*std::min_element(h.begin(), h.end())) / hi;
}

Image DatasetManifest::load_image(std::size_t i) const {
  const Sample& s = samples.at(i);
  if (s.image) return *s.image;
  const fs::path p = fs::path(s.path).is_absolute() ? fs::path(s.path) : base_dir / s.path;
  Image img = io::read_png(p);
  if (img.channels() == 3) return img;
  Image rgb(img.height(), img.width(), 3);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) rgb.at(y, x, c) = img.at(y, x, 0);
  return rgb;
}

DatasetManifest DatasetManifest::subset(const std::vector<std::size_t>& rows) const {
  DatasetManifest out{{}, split, note, base_dir};
  out.samples.reserve(rows.size());
  for (std::size_t r : rows) out.samples.push_back(samples.at(r));
  return out;
}

DatasetManifest parse_manifest(std::istream& in, const fs::path& base_dir) {
  DatasetManifest m;
  m.base_dir = base_dir;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(lineno, e.what());
    }
    if (!j.is_object()) throw ParseError(lineno, "expected a JSON object");
    try {
      if (j.contains("manifest")) {
        if (!m.samples.empty()) throw InvalidArgument("manifest header must precede the samples");
        const auto& h = j.at("manifest");
        m.split = h.value("split", std::string());
        m.note = h.value("note", std::string());
        continue;
      }
      Sample s;
      s.path = j.at("path").get<std::string>();
      s.label = j.at("class").get<int>();
      s.distance_m = j.at("distance_m").get<double>();
      if (j.contains("bbox") && !j.at("bbox").is_null()) s.bbox = j.at("bbox").get<focus::BBox>();
      s.validate();
      m.samples.push_back(std::move(s));
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return m;
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path());
}

void write_manifest(const DatasetManifest& m, std::ostream& out) {
  if (!m.split.empty() || !m.note.empty())
    out << nlohmann::json{{"manifest", {{"split", m.split}, {"note", m.note}}}}.dump() << '\n';
  for (const Sample& s : m.samples) {
    if (s.path.empty()) throw InvalidArgument("write_manifest: inline-only samples have no path");
    nlohmann::json j{{"path", s.path}, {"class", s.label}, {"distance_m", s.distance_m}};
    if (s.bbox) j["bbox"] = *s.bbox;
    out << j.dump() << '\n';
  }
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ostringstream buf;
  write_manifest(m, buf);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << buf.str();
  if (!out) throw IoError("write failed for " + path.string());
}

nlohmann::json manifest_summary(const DatasetManifest& m) {
  return {{"n", m.size()},
          {"split", m.split},
          {"class_histogram", m.class_histogram()},
          {"distance_histogram", m.distance_histogram()},
          {"class_balance", m.class_balance()}};
}

void SynthConfig::validate() const {
  if (count <= 0) throw InvalidArgument("synth: count must be positive");
  if (height < 32 || width < 32) throw InvalidArgument("synth: frame must be at least 32x32");
  if (!(d_min >= 0.0) || !(d_max <= kMaxDistance) || d_min > d_max)
    throw InvalidArgument("synth: need 0 <= d_min <= d_max <= 25");
  if (!(k > 0.0)) throw InvalidArgument("synth: k must be positive");
  if (d_max > 0.0 && k / d_max < 12.0) throw InvalidArgument("synth: k/d_max must be at least 12 px");
  if (!(blur_per_m >= 0.0) || !(noise_per_m >= 0.0) || !(clutter_density >= 0.0))
    throw InvalidArgument("synth: blur, noise and clutter must be non-negative");
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"count", c.count},           {"seed", c.seed},   {"height", c.height},
                     {"width", c.width},           {"d_min", c.d_min}, {"d_max", c.d_max},
                     {"k", c.k},                   {"blur_per_m", c.blur_per_m},
                     {"noise_per_m", c.noise_per_m}, {"clutter_density", c.clutter_density}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  c = SynthConfig{};
  c.count = j.value("count", c.count);
  c.seed = j.value("seed", c.seed);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.d_min = j.value("d_min", c.d_min);
  c.d_max = j.value("d_max", c.d_max);
  c.k = j.value("k", c.k);
  c.blur_per_m = j.value("blur_per_m", c.blur_per_m);
  c.noise_per_m = j.value("noise_per_m", c.noise_per_m);
  c.clutter_density = j.value("clutter_density", c.clutter_density);
  c.validate();
}

namespace {

using Color = std::array<double, 3>;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Shape2 {
  enum Kind { Capsule, Disc, Rect } kind;
  double ax, ay, bx, by, r;  // capsule a-b radius r; disc centre a radius r; rect [ax,bx]x[ay,by]

  bool inside(double x, double y) const {
    switch (kind) {
      case Disc:
        return (x - ax) * (x - ax) + (y - ay) * (y - ay) <= r * r;
      case Rect:
        return x >= ax && x <= bx && y >= ay && y <= by;
      case Capsule: {
        const double dx = bx - ax, dy = by - ay;
        const double len2 = dx * dx + dy * dy;
        double t = len2 > 0.0 ? ((x - ax) * dx + (y - ay) * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double px = ax + t * dx - x, py = ay + t * dy - y;
        return px * px + py * py <= r * r;
      }
    }
    return false;
  }
  // Inclusive extent [x0, x1] x [y0, y1].
  std::array<double, 4> extent() const {
    switch (kind) {
      case Disc:
        return {ax - r, ay - r, ax + r, ay + r};
      case Rect:
        return {ax, ay, bx, by};
      case Capsule:
        return {std::min(ax, bx) - r, std::min(ay, by) - r, std::max(ax, bx) + r, std::max(ay, by) + r};
    }
    return {};
  }
};

Shape2 capsule(double ax, double ay, double bx, double by, double r) { return {Shape2::Capsule, ax, ay, bx, by, r}; }
Shape2 disc(double x, double y, double r) { return {Shape2::Disc, x, y, 0, 0, r}; }
Shape2 rect(double x0, double y0, double x1, double y1) { return {Shape2::Rect, x0, y0, x1, y1, 0}; }

// 2x2 supersampled coverage of `s`, composited with `color` (alpha = coverage).
// Coverage is also accumulated (max) into `mask` when given.
void paint(Image& img, Image* mask, const Shape2& s, const Color& color) {
  const auto e = s.extent();
  const int x0 = std::max(0, static_cast<int>(std::floor(e[0])));
  const int y0 = std::max(0, static_cast<int>(std::floor(e[1])));
  const int x1 = std::min(img.width() - 1, static_cast<int>(std::floor(e[2])));
  const int y1 = std::min(img.height() - 1, static_cast<int>(std::floor(e[3])));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      int hits = 0;
      for (double oy : {0.25, 0.75})
        for (double ox : {0.25, 0.75}) hits += s.inside(x + ox, y + oy);
      if (hits == 0) continue;
      const double a = hits / 4.0;
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = a * color[static_cast<std::size_t>(c)] + (1.0 - a) * img.at(y, x, c);
      if (mask) mask->at(y, x, 0) = std::max(mask->at(y, x, 0), a);
    }
  }
}

Image background(const SynthConfig& cfg, nn::Rng& rng) {
  Color base;
  for (double& v : base) v = rng.uniform(0.35, 0.8);
  Image img(cfg.height, cfg.width, 3);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = base[static_cast<std::size_t>(c)];
  const int shapes = static_cast<int>(std::lround(cfg.clutter_density * cfg.height * cfg.width / 10000.0));
  for (int i = 0; i < shapes; ++i) {
    Color col;
    for (double& v : col) v = rng.uniform(0.3, 0.95);
    const double x = rng.uniform(0.0, cfg.width), y = rng.uniform(0.0, cfg.height);
    const double size = rng.uniform(0.02, 0.12) * cfg.height;
    if (rng.uniform() < 0.5) {
      paint(img, nullptr, disc(x, y, size / 2), col);
    } else {
      paint(img, nullptr, rect(x, y, x + size * rng.uniform(0.5, 2.0), y + size * rng.uniform(0.5, 2.0)), col);
    }
  }
  return img;
}

void finish(Image& img, const SynthConfig& cfg, double d, nn::Rng& rng) {
  const double sigma = cfg.blur_per_m * d;
  if (sigma > 0.0) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    img = imaging::gaussian_blur(img, 2 * radius + 1, sigma);
  }
  const double noise = cfg.noise_per_m * d;
  if (noise > 0.0)
    for (double& v : img.data()) v += rng.normal(0.0, noise);
  img = quantize8(img);
}

struct Pose {
  double upper, fore;  // degrees from the outward horizontal, counter-clockwise
};

Pose pose_for(int label) {
  switch (label) {
    case 2: return {0, 0};      // pointing
    case 3: return {-30, 60};   // thumbs-up
    case 4: return {-30, -60};  // thumbs-down
    case 5: return {-20, 150};  // beckoning
    case 6: return {-10, 90};   // stop
    default: return {-75, -85};  // null: arm down
  }
}

}  // namespace

Image quantize8(const Image& img) {
  Image out = img;
  for (double& v : out.data()) v = io::to_byte(v) / 255.0;
  return out;
}

Image render_background(const SynthConfig& cfg, double distance_m, std::uint64_t seed) {
  cfg.validate();
  nn::Rng rng(seed);
  Image img = background(cfg, rng);
  finish(img, cfg, distance_m, rng);
  return img;
}

SynthFrame render_frame(const SynthConfig& cfg, int label, double distance_m, bool gesture_right, std::uint64_t seed) {
  cfg.validate();
  if (label < 1 || label > 6) throw InvalidArgument("synth: class must be in 1..6");
  if (!(distance_m >= 0.0) || distance_m > kMaxDistance) throw InvalidArgument("synth: distance outside [0, 25]");
  nn::Rng rng(seed);
  Image img = background(cfg, rng);

  const double h = distance_m > 0.0 ? std::min(cfg.k / distance_m, static_cast<double>(cfg.height))
                                    : static_cast<double>(cfg.height);
  Color body, skin{rng.uniform(0.75, 0.95), rng.uniform(0.55, 0.75), rng.uniform(0.4, 0.6)};
  for (double& v : body) v = rng.uniform(0.0, 0.25);
  const double jitter = 6.0;
  const double thick = h * rng.uniform(0.04, 0.05);

  // Figure geometry relative to (0, 0) = top centre.
  std::vector<std::pair<Shape2, const Color*>> parts;
  const double head_r = 0.07 * h;
  parts.push_back({disc(0, head_r, head_r), &skin});
  parts.push_back({rect(-0.11 * h, 2 * head_r + 0.01 * h, 0.11 * h, 0.56 * h), &body});
  for (double side : {-1.0, 1.0}) {
    const double leg_r = 0.025 * h;
    parts.push_back({capsule(side * 0.06 * h, 0.55 * h, side * 0.12 * h, h - leg_r, leg_r), &body});
  }
  const double shoulder_y = 0.2 * h, l1 = 0.2 * h, l2 = 0.18 * h;
  for (double side : {-1.0, 1.0}) {
    const bool gesturing = (side > 0) == gesture_right;
    const Pose p = pose_for(gesturing ? label : 1);
    const double a1 = (p.upper + rng.uniform(-jitter, jitter)) * std::numbers::pi / 180.0;
    const double a2 = (p.fore + rng.uniform(-jitter, jitter)) * std::numbers::pi / 180.0;
    const double sx = side * 0.1 * h, sy = shoulder_y;
    const double ex = sx + side * l1 * std::cos(a1), ey = sy - l1 * std::sin(a1);
    const double hx = ex + side * l2 * std::cos(a2), hy = ey - l2 * std::sin(a2);
    parts.push_back({capsule(sx, sy, ex, ey, thick / 2), &body});
    parts.push_back({capsule(ex, ey, hx, hy, thick / 2), &body});
    parts.push_back({disc(hx, hy, 0.03 * h), &skin});
    if (!gesturing) continue;
    if (label == 3) parts.push_back({disc(hx, hy - 0.065 * h, 0.03 * h), &skin});
    if (label == 4) parts.push_back({disc(hx, hy + 0.065 * h, 0.03 * h), &skin});
    if (label == 6) parts.push_back({rect(hx - 0.06 * h, hy - 0.02 * h, hx + 0.06 * h, hy + 0.015 * h), &skin});
  }

  double ex0 = 1e300, ey0 = 1e300, ex1 = -1e300, ey1 = -1e300;
  for (const auto& [s, c] : parts) {
    const auto e = s.extent();
    ex0 = std::min(ex0, e[0]);
    ey0 = std::min(ey0, e[1]);
    ex1 = std::max(ex1, e[2]);
    ey1 = std::max(ey1, e[3]);
  }
  // Place the whole figure inside the frame.
  const double ox = rng.uniform(-ex0, std::max(-ex0, cfg.width - ex1));
  const double oy = rng.uniform(-ey0, std::max(-ey0, cfg.height - ey1));

  SynthFrame out;
  out.mask = Image(cfg.height, cfg.width, 1);
  for (auto [s, c] : parts) {
    s.ax += ox;
    s.bx += ox;
    s.ay += oy;
    s.by += oy;
    paint(img, &out.mask, s, *c);
  }
  out.bbox = focus::BBox{ex0 + ox, ey0 + oy, ex1 - ex0, ey1 - ey0};
  out.figure_height = h;
  finish(img, cfg, distance_m, rng);
  out.image = std::move(img);
  return out;
}

std::vector<SynthItem> synth_plan(const SynthConfig& cfg) {
  cfg.validate();
  nn::Rng rng(cfg.seed);
  std::vector<int> labels(static_cast<std::size_t>(cfg.count));
  for (int i = 0; i < cfg.count; ++i) labels[static_cast<std::size_t>(i)] = i % 6 + 1;
  rng.shuffle(labels.begin(), labels.end());
  std::vector<SynthItem> plan;
  plan.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    SynthItem item;
    item.label = labels[i];
    item.distance_m = rng.uniform(cfg.d_min, cfg.d_max);
    item.gesture_right = rng.uniform() < 0.5;
    item.seed = splitmix(cfg.seed ^ splitmix(i));
    plan.push_back(item);
  }
  return plan;
}

SynthFrame render_item(const SynthConfig& cfg, const SynthItem& item) {
  return render_frame(cfg, item.label, item.distance_m, item.gesture_right, item.seed);
}

DatasetManifest synth_generate(const SynthConfig& cfg, const fs::path& out_dir) {
  const auto plan = synth_plan(cfg);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir.string());
  DatasetManifest m;
  m.base_dir = out_dir;
  m.split = "train";
  m.note = "synthetic stick-figure corpus, seed " + std::to_string(cfg.seed);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const SynthFrame f = render_item(cfg, plan[i]);
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.png", i);
    io::write_png(f.image, out_dir / name);
    m.samples.push_back(Sample{name, std::nullopt, plan[i].label, plan[i].distance_m, f.bbox});
  }
  save_manifest(m, out_dir / "manifest.jsonl");
  return m;
}

std::vector<hqnet::DegradationPair> build_degradation_set(const DatasetManifest& m, const focus::FocusConfig& focus_cfg,
                                                          const imaging::DegradationConfig& degradation,
                                                          focus::Detector* detector) {
  std::vector<hqnet::DegradationPair> pairs;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Sample& s = m.samples[i];
    if (s.distance_m < 2.0 || s.distance_m > 8.0) continue;
    const Image frame = m.load_image(i);
    focus::BBox box;
    if (s.bbox) {
      box = *s.bbox;
    } else if (detector) {
      try {
        box = focus::detect_user(frame, *detector).bbox;
      } catch (const NotFound&) {
        continue;
      }
    } else {
      throw InvalidArgument("build_degradation_set: row " + std::to_string(i) + " has no bbox and no detector");
    }
    Image clean = quantize8(focus::focus_on(frame, box, focus_cfg));
    Image degraded = imaging::degrade(clean, degradation);
    pairs.push_back({std::move(degraded), std::move(clean)});
  }
  if (pairs.empty()) throw InvalidArgument("build_degradation_set: no rows with 2 <= d <= 8");
  return pairs;
}

void write_pairs(const std::vector<hqnet::DegradationPair>& pairs, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  std::ostringstream index;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    char d[32], c[32];
    std::snprintf(d, sizeof d, "%05zu_degraded.png", i);
    std::snprintf(c, sizeof c, "%05zu_clean.png", i);
    io::write_png(pairs[i].degraded, dir / d);
    io::write_png(pairs[i].clean, dir / c);
    index << nlohmann::json{{"degraded", d}, {"clean", c}}.dump() << '\n';
  }
  std::ofstream out(dir / "pairs.jsonl", std::ios::binary);
  out << index.str();
  if (!out) throw IoError("cannot write " + (dir / "pairs.jsonl").string());
}

std::vector<hqnet::DegradationPair> read_pairs(const fs::path& dir) {
  std::ifstream in(dir / "pairs.jsonl");
  if (!in) throw IoError("cannot open " + (dir / "pairs.jsonl").string());
  std::vector<hqnet::DegradationPair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      pairs.push_back({io::read_png(dir / j.at("degraded").get<std::string>()),
                       io::read_png(dir / j.at("clean").get<std::string>())});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    }
    if (!pairs.back().degraded.same_shape(pairs.back().clean))
      throw ParseError(lineno, "pair images differ in shape");
  }
  if (pairs.empty()) throw InvalidArgument("no pairs in " + dir.string());
  return pairs;
}

}  // namespace urgr::harness
