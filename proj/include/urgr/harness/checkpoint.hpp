#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "urgr/gvit.hpp"
#include "urgr/hqnet.hpp"
#include "urgr/nn/params.hpp"

namespace urgr::harness {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Archive layout, all integers little-endian:
///   "URGRCKPT" | u32 version | u64 header length | header JSON | u32 crc32(header)
///   | f32 payload
/// The header holds {"kind", "config", "tensors": [{name, shape, offset,
/// count, crc32, trainable}]}; offsets are in bytes from the payload start and
/// each record's crc32 covers its payload bytes.
struct Checkpoint {
  std::string kind;
  nlohmann::json config;
  nn::ParamStore params;
};

std::vector<std::uint8_t> encode_checkpoint(const std::string& kind, const nlohmann::json& config,
                                            const nn::ParamStore& params);
/// Throws IntegrityError on bad magic, version, truncation, trailing bytes
/// or a checksum mismatch.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& config,
                     const nn::ParamStore& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

void save_hqnet(const std::filesystem::path& path, const hqnet::HQNet& net);
/// ConfigMismatch when the archive is not an HQ-Net, its config differs from
/// `expected` (when given) or its tensors do not fit the config.
hqnet::HQNet load_hqnet(const std::filesystem::path& path, const hqnet::HQNetConfig* expected = nullptr);
hqnet::HQNet hqnet_from_checkpoint(const Checkpoint& ckpt, const hqnet::HQNetConfig* expected = nullptr);

void save_gvit(const std::filesystem::path& path, const gvit::GViT& net);
gvit::GViT load_gvit(const std::filesystem::path& path, const gvit::GViTConfig* expected = nullptr);
gvit::GViT gvit_from_checkpoint(const Checkpoint& ckpt, const gvit::GViTConfig* expected = nullptr);

}  // namespace urgr::harness
