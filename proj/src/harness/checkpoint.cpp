#include "urgr/harness/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "urgr/error.hpp"

namespace urgr::harness {

namespace {

constexpr char kMagic[8] = {'U', 'R', 'G', 'R', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <class T>
T get(std::span<const std::uint8_t> in, std::size_t pos) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(in[pos + i]) << (8 * i));
  return v;
}

std::uint32_t crc(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

void check_fits(const nn::ParamStore& expected, const nn::ParamStore& got, const std::string& kind) {
  if (expected.entries().size() != got.entries().size())
    throw ConfigMismatch(kind + " checkpoint: tensor count does not match the config");
  for (const auto& [name, e] : expected.entries()) {
    if (!got.contains(name)) throw ConfigMismatch(kind + " checkpoint: missing tensor " + name);
    const auto& g = got.entries().at(name);
    if (g.var.shape() != e.var.shape())
      throw ConfigMismatch(kind + " checkpoint: tensor " + name + " has shape " + nn::to_string(g.var.shape()) +
                           ", config needs " + nn::to_string(e.var.shape()));
    if (g.trainable != e.trainable) throw ConfigMismatch(kind + " checkpoint: trainable flag differs for " + name);
  }
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::string& kind, const nlohmann::json& config,
                                            const nn::ParamStore& params) {
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<std::uint8_t> payload;
  for (const auto& [name, e] : params.entries()) {
    const auto& values = e.var.value().values();
    const std::size_t offset = payload.size();
    for (double v : values) put(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    tensors.push_back({{"name", name},
                       {"shape", e.var.shape()},
                       {"offset", offset},
                       {"count", values.size()},
                       {"crc32", crc(payload.data() + offset, payload.size() - offset)},
                       {"trainable", e.trainable}});
  }
  const std::string header = nlohmann::json{{"kind", kind}, {"config", config}, {"tensors", tensors}}.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put(out, kCheckpointVersion);
  put(out, static_cast<std::uint64_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  put(out, crc(reinterpret_cast<const std::uint8_t*>(header.data()), header.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 20) throw IntegrityError("checkpoint truncated");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw IntegrityError("not a checkpoint (bad magic)");
  const auto version = get<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion)
    throw IntegrityError("checkpoint version " + std::to_string(version) + " is not supported");
  const auto header_len = get<std::uint64_t>(bytes, 12);
  if (header_len > bytes.size() - 24)
    throw IntegrityError("checkpoint truncated in header");
  const std::uint8_t* header = bytes.data() + 20;
  if (crc(header, header_len) != get<std::uint32_t>(bytes, 20 + header_len))
    throw IntegrityError("checkpoint header checksum mismatch");
  nlohmann::json h;
  Checkpoint ckpt;
  const std::size_t payload_start = 20 + header_len + 4;
  const std::size_t payload_len = bytes.size() - payload_start;
  try {
    h = nlohmann::json::parse(header, header + header_len);
    ckpt.kind = h.at("kind").get<std::string>();
    ckpt.config = h.at("config");
    std::size_t expected_offset = 0;
    for (const auto& t : h.at("tensors")) {
      const auto shape = t.at("shape").get<nn::Shape>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto count = t.at("count").get<std::size_t>();
      if (offset != expected_offset || count != nn::numel(shape)) throw IntegrityError("inconsistent tensor record");
      if (offset + 4 * count > payload_len) throw IntegrityError("checkpoint payload truncated");
      const std::uint8_t* p = bytes.data() + payload_start + offset;
      if (crc(p, 4 * count) != t.at("crc32").get<std::uint32_t>())
        throw IntegrityError("checksum mismatch in tensor " + t.at("name").get<std::string>());
      std::vector<double> values(count);
      for (std::size_t i = 0; i < count; ++i)
        values[i] = std::bit_cast<float>(get<std::uint32_t>(bytes, payload_start + offset + 4 * i));
      ckpt.params.add(t.at("name").get<std::string>(), nn::Tensor(shape, std::move(values)),
                      t.at("trainable").get<bool>());
      expected_offset = offset + 4 * count;
    }
    if (expected_offset != payload_len) throw IntegrityError("checkpoint has trailing bytes");
  } catch (const IntegrityError&) {
    throw;
  } catch (const std::exception& e) {
    throw IntegrityError(std::string("malformed checkpoint header: ") + e.what());
  }
  return ckpt;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& config,
                     const nn::ParamStore& params) {
  write_file(path, encode_checkpoint(kind, config, params));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

void save_hqnet(const std::filesystem::path& path, const hqnet::HQNet& net) {
  save_checkpoint(path, "hqnet", net.config, net.params);
}

hqnet::HQNet hqnet_from_checkpoint(const Checkpoint& ckpt, const hqnet::HQNetConfig* expected) {
  if (ckpt.kind != "hqnet") throw ConfigMismatch("expected an hqnet checkpoint, found " + ckpt.kind);
  hqnet::HQNetConfig cfg;
  try {
    cfg = ckpt.config.get<hqnet::HQNetConfig>();
  } catch (const std::exception& e) {
    throw ConfigMismatch(std::string("hqnet checkpoint config: ") + e.what());
  }
  if (expected && !(cfg == *expected)) throw ConfigMismatch("hqnet checkpoint config differs from the requested one");
  check_fits(hqnet::HQNet::init(cfg, 0).params, ckpt.params, "hqnet");
  return hqnet::HQNet{cfg, ckpt.params.clone()};
}

hqnet::HQNet load_hqnet(const std::filesystem::path& path, const hqnet::HQNetConfig* expected) {
  return hqnet_from_checkpoint(load_checkpoint(path), expected);
}

void save_gvit(const std::filesystem::path& path, const gvit::GViT& net) {
  save_checkpoint(path, "gvit", net.config, net.params);
}

gvit::GViT gvit_from_checkpoint(const Checkpoint& ckpt, const gvit::GViTConfig* expected) {
  if (ckpt.kind != "gvit") throw ConfigMismatch("expected a gvit checkpoint, found " + ckpt.kind);
  gvit::GViTConfig cfg;
  try {
    cfg = ckpt.config.get<gvit::GViTConfig>();
  } catch (const std::exception& e) {
    throw ConfigMismatch(std::string("gvit checkpoint config: ") + e.what());
  }
  if (expected && !(cfg == *expected)) throw ConfigMismatch("gvit checkpoint config differs from the requested one");
  check_fits(gvit::GViT::init(cfg, 0).params, ckpt.params, "gvit");
  return gvit::GViT::from_params(cfg, ckpt.params.clone());
}

gvit::GViT load_gvit(const std::filesystem::path& path, const gvit::GViTConfig* expected) {
  return gvit_from_checkpoint(load_checkpoint(path), expected);
}

}  // namespace urgr::harness
