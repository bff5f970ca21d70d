#include "urgr/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <string>

#include "urgr/error.hpp"
#include "urgr/image_io.hpp"

namespace urgr::imaging {

void to_json(nlohmann::json& j, const DegradationConfig& cfg) {
  j = nlohmann::json{{"smooth_kernel", cfg.smooth_kernel},
                     {"smooth_sigma", cfg.smooth_sigma},
                     {"jpeg_quality", cfg.jpeg_quality}};
}

void from_json(const nlohmann::json& j, DegradationConfig& cfg) {
  cfg = DegradationConfig{};
  if (j.contains("smooth_kernel")) j.at("smooth_kernel").get_to(cfg.smooth_kernel);
  if (j.contains("smooth_sigma")) j.at("smooth_sigma").get_to(cfg.smooth_sigma);
  if (j.contains("jpeg_quality")) j.at("jpeg_quality").get_to(cfg.jpeg_quality);
}

bool operator<(const Psnr& a, const Psnr& b) {
  if (a.infinite) return false;
  if (b.infinite) return true;
  return a.db < b.db;
}

void to_json(nlohmann::json& j, const Psnr& p) {
  if (p.infinite) {
    j = "inf";
  } else {
    j = p.db;
  }
}

std::vector<double> gaussian_kernel_1d(int size, double sigma) {
  if (size < 3 || size % 2 == 0) throw InvalidArgument("Gaussian kernel size must be odd and >= 3");
  if (!(sigma > 0.0)) throw InvalidArgument("Gaussian sigma must be positive");
  const int r = size / 2;
  std::vector<double> k(size);
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - r;
    k[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

int reflect_index(int i, int n) noexcept {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

Image convolve(const Image& img, std::span<const double> kernel, int ksize) {
  if (ksize < 1 || ksize % 2 == 0 || kernel.size() != static_cast<std::size_t>(ksize) * ksize) {
    throw InvalidArgument("convolution kernel must be odd-sized and square");
  }
  const int r = ksize / 2;
  const int h = img.height(), w = img.width(), ch = img.channels();
  Image out(h, w, ch);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int ky = 0; ky < ksize; ++ky) {
          const int sy = reflect_index(y + ky - r, h);
          for (int kx = 0; kx < ksize; ++kx) {
            acc += kernel[ky * ksize + kx] * img.at(sy, reflect_index(x + kx - r, w), c);
          }
        }
        out.at(y, x, c) = acc;
      }
    }
  }
  return out;
}

namespace {

// Separable pass along one axis (0 = rows/vertical, 1 = columns/horizontal).
Image separable_pass(const Image& img, const std::vector<double>& taps, int axis) {
  const int r = static_cast<int>(taps.size()) / 2;
  const int k_n = static_cast<int>(taps.size());
  const int h = img.height(), w = img.width(), ch = img.channels();
  const int n = axis == 0 ? h : w;
  std::vector<int> src(static_cast<std::size_t>(n + 2 * r));
  for (int i = 0; i < n + 2 * r; ++i) src[static_cast<std::size_t>(i)] = reflect_index(i - r, n);
  Image out(h, w, ch);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int pos = axis == 0 ? y : x;
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int k = 0; k < k_n; ++k) {
          const int s = src[static_cast<std::size_t>(pos + k)];
          acc += taps[static_cast<std::size_t>(k)] * (axis == 0 ? img.at(s, x, c) : img.at(y, s, c));
        }
        out.at(y, x, c) = acc;
      }
    }
  }
  return out;
}


double keys_cubic(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

}  // namespace

Image gaussian_smooth(const Image& img, int kernel, double sigma) {
  const auto taps = gaussian_kernel_1d(kernel, sigma);
  std::vector<double> k2(static_cast<std::size_t>(kernel) * kernel);
  for (int i = 0; i < kernel; ++i) {
    for (int j = 0; j < kernel; ++j) k2[i * kernel + j] = taps[i] * taps[j];
  }
  return convolve(img, k2, kernel);
}

Image gaussian_blur(const Image& img, int ksize, double sigma) {
  const auto taps = gaussian_kernel_1d(ksize, sigma);
  return separable_pass(separable_pass(img, taps, 1), taps, 0);
}

Image sharpen(const Image& img) {
  Image out = convolve(img, kSharpenKernel, 3);
  out.clamp01();
  return out;
}

Image jpeg_compress(const Image& img, int quality) {
  if (quality < 1 || quality > 100) {
    throw InvalidArgument("JPEG quality must lie in [1,100], got " + std::to_string(quality));
  }
  if (img.channels() != 3) throw InvalidArgument("JPEG compression expects a 3-channel image");
  return io::decode_jpeg(io::encode_jpeg(img, quality));
}

Image degrade(const Image& img, const DegradationConfig& cfg) {
  return jpeg_compress(sharpen(gaussian_smooth(img, cfg.smooth_kernel, cfg.smooth_sigma)), cfg.jpeg_quality);
}

double mse(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw InvalidArgument("mse: image dimensions differ");
  if (a.empty()) throw InvalidArgument("mse: empty images");
  const auto da = a.data();
  const auto db = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = da[i] - db[i];
    acc += d * d;
  }
  return acc / static_cast<double>(da.size());
}

Psnr psnr_from_mse(double mse_value, double peak) {
  if (!(peak > 0.0)) throw InvalidArgument("psnr: peak value must be positive");
  if (mse_value < 0.0 || !std::isfinite(mse_value)) throw InvalidArgument("psnr: mse must be finite and >= 0");
  if (mse_value == 0.0) return Psnr::Infinite();
  return Psnr{10.0 * std::log10(peak * peak / mse_value), false};
}

Psnr psnr(const Image& a, const Image& b, double peak) {
  if (!(peak > 0.0)) throw InvalidArgument("psnr: peak value must be positive");
  return psnr_from_mse(mse(a, b), peak);
}

QualityScore quality(const Image& a, const Image& b, double peak) {
  const double m = mse(a, b);
  return QualityScore{m, psnr_from_mse(m, peak), peak};
}

Image to_grayscale(const Image& img) {
  if (img.channels() == 1) return img;
  if (img.channels() != 3) throw InvalidArgument("grayscale conversion expects 1 or 3 channels");
  Image out(img.height(), img.width(), 1);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      out.at(y, x, 0) = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
    }
  }
  return out;
}

Image canny_edges(const Image& img, double sigma, double low, double high) {
  if (!(low >= 0.0 && low < high && high <= 1.0)) {
    throw InvalidArgument("canny: thresholds must satisfy 0 <= low < high <= 1");
  }
  if (!(sigma > 0.0)) throw InvalidArgument("canny: sigma must be positive");
  const int h = img.height(), w = img.width();
  Image edges(h, w, 1);
  if (h == 0 || w == 0) return edges;

  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  const Image smooth = gaussian_blur(to_grayscale(img), 2 * radius + 1, sigma);

  std::vector<double> mag(static_cast<std::size_t>(h) * w);
  std::vector<double> gx(mag.size()), gy(mag.size());
  double max_mag = 0.0;
  for (int y = 0; y < h; ++y) {
    const int ym = reflect_index(y - 1, h), yp = reflect_index(y + 1, h);
    for (int x = 0; x < w; ++x) {
      const int xm = reflect_index(x - 1, w), xp = reflect_index(x + 1, w);
      auto s = [&](int yy, int xx) { return smooth.at(yy, xx, 0); };
      const double dx = (s(ym, xp) + 2.0 * s(y, xp) + s(yp, xp)) - (s(ym, xm) + 2.0 * s(y, xm) + s(yp, xm));
      const double dy = (s(yp, xm) + 2.0 * s(yp, x) + s(yp, xp)) - (s(ym, xm) + 2.0 * s(ym, x) + s(ym, xp));
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      gx[i] = dx;
      gy[i] = dy;
      mag[i] = std::hypot(dx, dy);
      max_mag = std::max(max_mag, mag[i]);
    }
  }
  // Flat input (up to rounding noise of the blur).
  if (max_mag < 1e-9) return edges;

  // Ties within this band count as equal so rounding noise cannot break them.
  const double tie = 1e-9 * max_mag;
  auto mag_at = [&](int y, int x) {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
    return mag[static_cast<std::size_t>(y) * w + x];
  };

  std::vector<double> thin(mag.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double m = mag[i];
      if (m <= tie) continue;
      double angle = std::atan2(gy[i], gx[i]) * 180.0 / std::numbers::pi;
      if (angle < 0.0) angle += 180.0;
      int oy = 0, ox = 0;
      if (angle < 22.5 || angle >= 157.5) {
        ox = 1;
      } else if (angle < 67.5) {
        oy = 1;
        ox = 1;
      } else if (angle < 112.5) {
        oy = 1;
      } else {
        oy = 1;
        ox = -1;
      }
      if (m + tie >= mag_at(y + oy, x + ox) && m + tie >= mag_at(y - oy, x - ox)) thin[i] = m;
    }
  }

  const double hi = high * max_mag;
  const double lo = low * max_mag;
  std::deque<std::size_t> frontier;
  auto data = edges.data();
  for (std::size_t i = 0; i < thin.size(); ++i) {
    if (thin[i] > 0.0 && thin[i] >= hi) {
      data[i] = 1.0;
      frontier.push_back(i);
    }
  }
  while (!frontier.empty()) {
    const std::size_t i = frontier.front();
    frontier.pop_front();
    const int y = static_cast<int>(i / w), x = static_cast<int>(i % w);
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        const std::size_t j = static_cast<std::size_t>(ny) * w + nx;
        if (data[j] == 0.0 && thin[j] > 0.0 && thin[j] >= lo) {
          data[j] = 1.0;
          frontier.push_back(j);
        }
      }
    }
  }
  return edges;
}

std::vector<ResampleRow> bicubic_weights(int in_size, int out_size) {
  if (in_size < 1 || out_size < 1) throw InvalidArgument("resample sizes must be >= 1");
  const double scale = static_cast<double>(in_size) / out_size;
  const double filter_scale = std::max(scale, 1.0);
  const double support = 2.0 * filter_scale;
  std::vector<ResampleRow> rows(out_size);
  for (int o = 0; o < out_size; ++o) {
    const double center = (o + 0.5) * scale;
    const int first = static_cast<int>(std::floor(center - support));
    const int last = static_cast<int>(std::ceil(center + support));
    std::vector<double> dense(in_size, 0.0);
    double sum = 0.0;
    for (int j = first; j <= last; ++j) {
      const double wgt = keys_cubic((j + 0.5 - center) / filter_scale);
      if (wgt == 0.0) continue;
      dense[std::clamp(j, 0, in_size - 1)] += wgt;
      sum += wgt;
    }
    ResampleRow& row = rows[o];
    for (int j = 0; j < in_size; ++j) {
      if (dense[j] != 0.0) {
        row.index.push_back(j);
        row.weight.push_back(dense[j] / sum);
      }
    }
  }
  return rows;
}

Image bicubic_resize(const Image& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw InvalidArgument("bicubic_resize: target dimensions must be >= 1");
  if (img.empty()) throw InvalidArgument("bicubic_resize: empty input");
  const int h = img.height(), w = img.width(), ch = img.channels();
  const auto wx = bicubic_weights(w, out_w);
  const auto wy = bicubic_weights(h, out_h);

  Image horiz(h, out_w, ch);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const ResampleRow& row = wx[x];
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < row.index.size(); ++k) acc += row.weight[k] * img.at(y, row.index[k], c);
        horiz.at(y, x, c) = acc;
      }
    }
  }
  Image out(out_h, out_w, ch);
  for (int y = 0; y < out_h; ++y) {
    const ResampleRow& row = wy[y];
    for (int x = 0; x < out_w; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < row.index.size(); ++k) acc += row.weight[k] * horiz.at(row.index[k], x, c);
        out.at(y, x, c) = acc;
      }
    }
  }
  out.clamp01();
  return out;
}

}  // namespace urgr::imaging
