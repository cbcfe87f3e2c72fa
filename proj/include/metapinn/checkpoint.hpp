#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "metapinn/errors.hpp"
#include "metapinn/parameters.hpp"
#include "metapinn/tensor.hpp"

namespace metapinn {

struct Checkpoint {
  int version = 1;
  nlohmann::json config;  // run config snapshot, stored verbatim
  std::uint64_t seed = 0;
  std::int64_t iteration = 0;
  ParameterSet params;
};

namespace detail {

inline constexpr int kCheckpointVersion = 1;

inline std::uint64_t fnv1a64(const unsigned char* data, std::size_t n) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x00000100000001B3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

inline void store_le_u64(std::uint64_t v, unsigned char* out) {
  for (int i = 0; i < 8; ++i) out[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
}

inline std::uint64_t load_le_u64(const unsigned char* in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[i]) << (8 * i);
  return v;
}

// memcpy between double and uint64 moves the bit pattern as a value, and
// the byte stores above are value-based shifts, so these are correct on any
// host endianness.
inline void store_le_f64(double x, unsigned char* out) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &x, sizeof bits);
  store_le_u64(bits, out);
}

inline double load_le_f64(const unsigned char* in) {
  const std::uint64_t bits = load_le_u64(in);
  double x = 0.0;
  std::memcpy(&x, &bits, sizeof x);
  return x;
}

}  // namespace detail

/// Single-file container: an 8-byte little-endian header length, a JSON
/// header (version, config snapshot, seed, iteration, tensor directory with
/// byte offsets, payload checksum), then every tensor as little-endian f64.
/// The file appears atomically: it is written to a sibling temp path and
/// renamed into place.
inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::size_t total = 0;
  for (std::size_t i = 0; i < ckpt.params.count(); ++i) total += ckpt.params.tensor(i).data.size();
  std::vector<unsigned char> payload(total * 8);
  nlohmann::json directory = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < ckpt.params.count(); ++i) {
    const Tensor& t = ckpt.params.tensor(i);
    directory.push_back({{"name", ckpt.params.names()[i]},
                         {"shape", t.shape},
                         {"offset", offset},
                         {"count", t.data.size()}});
    for (double v : t.data) {
      detail::store_le_f64(v, payload.data() + offset);
      offset += 8;
    }
  }

  nlohmann::json header;
  header["version"] = detail::kCheckpointVersion;
  header["config"] = ckpt.config;
  header["seed"] = ckpt.seed;
  header["iteration"] = ckpt.iteration;
  header["tensors"] = std::move(directory);
  header["payload_bytes"] = payload.size();
  header["checksum"] = detail::hex64(detail::fnv1a64(payload.data(), payload.size()));
  const std::string header_text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    unsigned char len[8];
    detail::store_le_u64(header_text.size(), len);
    out.write(reinterpret_cast<const char*>(len), 8);
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError("failed while writing " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp + " to " + path + ": " + ec.message());
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  unsigned char len_bytes[8];
  if (!in.read(reinterpret_cast<char*>(len_bytes), 8))
    throw ParseError(path + ": too short for a header length");
  const std::uint64_t header_len = detail::load_le_u64(len_bytes);
  if (header_len > (1ull << 30)) throw ParseError(path + ": implausible header length");
  std::string header_text(header_len, '\0');
  if (!in.read(header_text.data(), static_cast<std::streamsize>(header_len)))
    throw ParseError(path + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad header: " + e.what());
  }
  const int version = header.at("version").get<int>();
  if (version != detail::kCheckpointVersion)
    throw CapabilityError(path + ": format version " + std::to_string(version) +
                          " is not supported");

  Checkpoint ckpt;
  ckpt.version = version;
  ckpt.config = header.value("config", nlohmann::json::object());
  ckpt.seed = header.at("seed").get<std::uint64_t>();
  ckpt.iteration = header.at("iteration").get<std::int64_t>();

  const std::uint64_t payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
  std::vector<unsigned char> payload(payload_bytes);
  if (!in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload_bytes)))
    throw ParseError(path + ": truncated payload");
  const std::string checksum = detail::hex64(detail::fnv1a64(payload.data(), payload.size()));
  if (checksum != header.at("checksum").get<std::string>())
    throw ParseError(path + ": checksum mismatch; the payload is corrupted or truncated");

  for (const nlohmann::json& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t count = entry.at("count").get<std::size_t>();
    std::size_t expect = 1;
    for (int d : shape) expect *= static_cast<std::size_t>(d);
    if (expect != count)
      throw ParseError(path + ": tensor '" + name + "' declares " + std::to_string(count) +
                       " values for a shape holding " + std::to_string(expect));
    if (offset + count * 8 > payload_bytes)
      throw ParseError(path + ": tensor '" + name + "' runs past the payload");
    Tensor t = Tensor::zeros(shape);
    for (std::size_t i = 0; i < count; ++i)
      t.data[i] = detail::load_le_f64(payload.data() + offset + i * 8);
    ckpt.params.add(name, std::move(t));
  }
  return ckpt;
}

}  // namespace metapinn
