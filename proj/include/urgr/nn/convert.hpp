#pragma once

#include <span>

#include "urgr/image.hpp"
#include "urgr/nn/tensor.hpp"

namespace urgr::nn {

// Stack same-shaped HWC images into an [N, C, H, W] tensor.
Tensor to_nchw(std::span<const Image> images);
Tensor to_nchw(const Image& image);
// Extract sample n of an [N, C, H, W] tensor as an HWC image (no clamping).
Image from_nchw(const Tensor& t, int n = 0);

}  // namespace urgr::nn
