// Binary checkpoint container.
//
// Layout (all integers little-endian, doubles stored as their IEEE-754 bit
// pattern in a little-endian u64):
//
//   magic      8 bytes  "COPECKPT"
//   version    u32      kCheckpointVersion
//   config     u64 length + UTF-8 `key = value` text
//   metadata   u64 length + UTF-8 `key = value` text
//   blobs      u64 count, then per blob:
//                u64 name length + name, u64 rows, u64 cols, rows*cols f64
//
// Blobs are written in the order given and read back in that order, so a
// save/load cycle is bit-exact.

#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cope/kv.hpp"
#include "cope/matrix.hpp"

namespace cope {

inline constexpr char kCheckpointMagic[8] = {'C', 'O', 'P', 'E', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  KeyValues config;
  KeyValues metadata;
  std::vector<std::pair<std::string, RealMatrix>> blobs;

  const RealMatrix* find(const std::string& name) const {
    for (const auto& [n, m] : blobs)
      if (n == name) return &m;
    return nullptr;
  }
};

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw CheckpointError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, std::uint64_t limit = 1ull << 30) {
  const std::uint64_t n = get_u64(is);
  if (n > limit) throw CheckpointError("checkpoint string length out of range");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw CheckpointError("checkpoint truncated");
  return s;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write checkpoint " + tmp);
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put_u32(os, kCheckpointVersion);
    detail::put_string(os, ck.config.dump());
    detail::put_string(os, ck.metadata.dump());
    detail::put_u64(os, ck.blobs.size());
    for (const auto& [name, m] : ck.blobs) {
      detail::put_string(os, name);
      detail::put_u64(os, m.rows());
      detail::put_u64(os, m.cols());
      for (double v : m.data()) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
    }
    if (!os) throw CheckpointError("error writing checkpoint " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot move checkpoint into " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw CheckpointError(path + ": not a checkpoint (bad magic)");
  const std::uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion)
    throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.config = KeyValues::parse(detail::get_string(is), path + "[config]");
  ck.metadata = KeyValues::parse(detail::get_string(is), path + "[metadata]");
  const std::uint64_t count = detail::get_u64(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = detail::get_string(is, 4096);
    const std::uint64_t rows = detail::get_u64(is);
    const std::uint64_t cols = detail::get_u64(is);
    if (rows > (1ull << 32) || cols > (1ull << 32) || rows * cols > (1ull << 34))
      throw CheckpointError(path + ": blob '" + name + "' has implausible shape");
    RealMatrix m(rows, cols);
    for (double& v : m.data()) v = std::bit_cast<double>(detail::get_u64(is));
    ck.blobs.emplace_back(std::move(name), std::move(m));
  }
  return ck;
}

}  // namespace cope
