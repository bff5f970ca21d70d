#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "urgr/image.hpp"

namespace urgr::io {

// 8-bit PNG. Grayscale files load as 1 channel, RGB/RGBA as 3 (alpha dropped).
Image read_png(const std::filesystem::path& path);
void write_png(const Image& img, const std::filesystem::path& path);

// Baseline JPEG through libjpeg, in memory. Input must be 1 or 3 channels.
std::vector<std::uint8_t> encode_jpeg(const Image& img, int quality);
Image decode_jpeg(const std::vector<std::uint8_t>& bytes);

// Quantise [0,1] to 8 bits with round-half-up.
std::uint8_t to_byte(double v) noexcept;

}  // namespace urgr::io
