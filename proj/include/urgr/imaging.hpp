#pragma once

#include <array>
#include <span>
#include <vector>

#include "json.hpp"

#include "urgr/image.hpp"

namespace urgr::imaging {

/// Parameters of the smooth -> sharpen -> JPEG degradation chain.
struct DegradationConfig {
  int smooth_kernel = 5;
  double smooth_sigma = 1.0;
  int jpeg_quality = 30;
};

void to_json(nlohmann::json& j, const DegradationConfig& cfg);
void from_json(const nlohmann::json& j, DegradationConfig& cfg);

/// Peak signal-to-noise ratio. Identical inputs produce the infinite
/// sentinel instead of a floating overflow.
struct Psnr {
  double db = 0.0;
  bool infinite = false;

  static Psnr Infinite() { return Psnr{0.0, true}; }
  bool operator==(const Psnr&) const = default;
};

bool operator<(const Psnr& a, const Psnr& b);
void to_json(nlohmann::json& j, const Psnr& p);

struct QualityScore {
  double mse = 0.0;
  Psnr psnr;
  double peak = 1.0;
};

inline constexpr std::array<double, 9> kSharpenKernel = {0, -1, 0, -1, 5, -1, 0, -1, 0};

/// Normalised 1-D Gaussian taps; the 2-D kernel is their outer product.
std::vector<double> gaussian_kernel_1d(int size, double sigma);

/// Mirror index into [0, n) without repeating the edge sample (dcb|abcd|cba).
int reflect_index(int i, int n) noexcept;

/// Square-kernel correlation with reflect padding, per channel. No clamping.
Image convolve(const Image& img, std::span<const double> kernel, int ksize);

Image gaussian_smooth(const Image& img, int kernel = 5, double sigma = 1.0);
/// Same kernel as gaussian_smooth applied as two 1-D passes; faster for
/// large kernels, equal up to rounding.
Image gaussian_blur(const Image& img, int kernel, double sigma);
Image sharpen(const Image& img);
Image jpeg_compress(const Image& img, int quality);

/// jpeg_compress(sharpen(gaussian_smooth(img))).
Image degrade(const Image& img, const DegradationConfig& cfg = {});

double mse(const Image& a, const Image& b);
Psnr psnr(const Image& a, const Image& b, double peak = 1.0);
Psnr psnr_from_mse(double mse, double peak = 1.0);
QualityScore quality(const Image& a, const Image& b, double peak = 1.0);

/// Rec.601 luma; single-channel input is returned unchanged.
Image to_grayscale(const Image& img);

/// Binary edge map (values 0/1). Thresholds are fractions of the largest
/// gradient magnitude in the frame.
Image canny_edges(const Image& img, double sigma = 1.4, double low = 0.1, double high = 0.3);

/// One output sample's contributing input taps (edge-clamped, merged).
struct ResampleRow {
  std::vector<int> index;
  std::vector<double> weight;
};

/// Bicubic (a = -0.5) resampling taps along one axis, half-pixel centres.
/// When shrinking, the kernel is stretched by the scale factor so every input
/// sample contributes (antialiased).
std::vector<ResampleRow> bicubic_weights(int in_size, int out_size);

Image bicubic_resize(const Image& img, int out_h, int out_w);

}  // namespace urgr::imaging
