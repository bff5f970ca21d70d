#include "urgr/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "urgr/error.hpp"

namespace urgr {

Image::Image(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 0 || width < 0 || channels < 0) throw InvalidArgument("negative image dimension");
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Image::Image(int height, int width, int channels, std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  if (height < 0 || width < 0 || channels < 0) throw InvalidArgument("negative image dimension");
  if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw InvalidArgument("image buffer holds " + std::to_string(data_.size()) + " values, expected " +
                          std::to_string(static_cast<std::size_t>(height) * width * channels));
  }
}

bool Image::is_valid() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; });
}

void Image::clamp01() noexcept {
  for (double& v : data_) v = std::clamp(v, 0.0, 1.0);
}

}  // namespace urgr
