#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "d2nn/params.hpp"

namespace d2nn {

inline constexpr char kCheckpointMagic[] = "D2NNCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<CheckpointEntry> entries;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline std::uint32_t crc32_of(const std::string& bytes, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(n)));
}

inline std::string header_line(std::uint32_t version) {
  return std::string(kCheckpointMagic) + " v" + std::to_string(version) + "\n";
}

}  // namespace detail

/// Serialises every parameter as float32, in store order.
inline std::string encode_checkpoint(const ParamStore& params) {
  std::string out = detail::header_line(kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::put_u32(out, static_cast<std::uint32_t>(p->name.size()));
    out += p->name;
    detail::put_u32(out, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (const auto& p : params)
    for (double v : p->value.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  detail::put_u32(out, detail::crc32_of(out, out.size()));
  return out;
}

/// Writes to `path` via a temporary file and rename, so an interrupted save
/// never replaces an existing checkpoint with a partial one.
inline void save_checkpoint(const ParamStore& params, const std::string& path) {
  const std::string bytes = encode_checkpoint(params);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "checkpoint") {
  const auto* base = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t nl = bytes.find('\n');
  if (nl == std::string::npos || bytes.compare(0, std::strlen(kCheckpointMagic), kCheckpointMagic) != 0)
    throw IntegrityError(source + ": not a checkpoint (bad header)");
  const std::string header = bytes.substr(0, nl + 1);
  if (header != detail::header_line(kCheckpointVersion))
    throw ConfigError(source + ": unsupported checkpoint format '" + header.substr(0, nl) + "'");

  std::size_t pos = nl + 1;
  auto need = [&](std::size_t n, const std::string& where) {
    if (bytes.size() < pos + n) throw IntegrityError(source + ": truncated in " + where);
  };
  auto u32 = [&](const std::string& where) {
    need(4, where);
    const std::uint32_t v = detail::get_u32(base + pos);
    pos += 4;
    return v;
  };

  Checkpoint ck;
  const std::uint32_t count = u32("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = "manifest entry " + std::to_string(i);
    CheckpointEntry e;
    const std::uint32_t len = u32(where);
    need(len, where);
    e.name = bytes.substr(pos, len);
    pos += len;
    const std::uint32_t rank = u32(where + " (" + e.name + ")");
    for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(u32(where + " (" + e.name + ")"));
    ck.entries.push_back(std::move(e));
  }
  for (auto& e : ck.entries) {
    const std::size_t n = shape_size(e.shape);
    need(4 * n, "values of " + e.name);
    e.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) e.values[k] = std::bit_cast<float>(detail::get_u32(base + pos + 4 * k));
    pos += 4 * n;
  }
  const std::size_t body = pos;
  const std::uint32_t stored = u32("checksum");
  if (pos != bytes.size()) throw IntegrityError(source + ": " + std::to_string(bytes.size() - pos) + " trailing bytes");
  if (stored != detail::crc32_of(bytes, body)) throw IntegrityError(source + ": checksum mismatch");
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path);
}

/// Copies checkpoint values into `params`. Every parameter must appear with
/// the same shape; nothing is written unless all entries match.
inline void apply_checkpoint(const Checkpoint& ck, ParamStore& params) {
  if (ck.entries.size() != params.size())
    throw ConfigError("checkpoint has " + std::to_string(ck.entries.size()) + " entries, model has " +
                      std::to_string(params.size()) + " parameters");
  for (const auto& e : ck.entries) {
    if (!params.contains(e.name)) throw ConfigError("checkpoint entry " + e.name + " is not a model parameter");
    const Parameter& p = params.get(e.name);
    if (p.value.shape != e.shape)
      throw ConfigError("shape mismatch for " + e.name + ": checkpoint " + shape_str(e.shape) + ", model " +
                        shape_str(p.value.shape));
  }
  for (const auto& e : ck.entries) {
    Parameter& p = params.get(e.name);
    for (std::size_t k = 0; k < e.values.size(); ++k) p.value.data[k] = e.values[k];
  }
}

}  // namespace d2nn
