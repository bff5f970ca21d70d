#include "urgr/nn/convert.hpp"

#include "urgr/error.hpp"

namespace urgr::nn {

Tensor to_nchw(std::span<const Image> images) {
  if (images.empty()) throw InvalidArgument("to_nchw: empty batch");
  const Image& first = images.front();
  const int h = first.height(), w = first.width(), c = first.channels();
  Tensor out(Shape{static_cast<int>(images.size()), c, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (!images[n].same_shape(first)) throw InvalidArgument("to_nchw: images differ in shape");
    double* dst = out.data() + n * c * h * w;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int ch = 0; ch < c; ++ch) dst[(static_cast<std::size_t>(ch) * h + y) * w + x] = images[n].at(y, x, ch);
      }
    }
  }
  return out;
}

Tensor to_nchw(const Image& image) { return to_nchw(std::span<const Image>(&image, 1)); }

Image from_nchw(const Tensor& t, int n) {
  if (t.rank() != 4) throw InvalidArgument("from_nchw: expected rank-4 tensor");
  const int c = t.shape()[1], h = t.shape()[2], w = t.shape()[3];
  if (n < 0 || n >= t.shape()[0]) throw InvalidArgument("from_nchw: sample index out of range");
  Image out(h, w, c);
  const double* src = t.data() + static_cast<std::size_t>(n) * c * h * w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) out.at(y, x, ch) = src[(static_cast<std::size_t>(ch) * h + y) * w + x];
    }
  }
  return out;
}

}  // namespace urgr::nn
