#pragma once

// Versioned binary checkpoint container.
//
//   "SAILCKPT" u32 version
//   str config_hash, u64 iteration, str rng_state
//   u64 count, then per parameter: str name, u32 rank(=2), u64 dims[rank],
//   f64 payload[prod(dims)]
//
// Integers and doubles are little-endian; str is u32 length + bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "sail/nn.hpp"

namespace sail {

struct CheckpointMeta {
  std::string config_hash;
  std::uint64_t iteration = 0;
  std::string rng_state;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  CheckpointMeta meta;
  ParamSet params;
};

inline constexpr char kCheckpointMagic[8] = {'S', 'A', 'I', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  std::uint64_t u64() { return uint(8); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void expect(const char* magic, std::size_t n) {
    need(n);
    if (std::memcmp(bytes_.data() + pos_, magic, n) != 0) throw ConfigError("not a checkpoint (bad magic)");
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::uint64_t uint(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ConfigError("truncated checkpoint");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_str(out, ck.meta.config_hash);
  detail::put_u64(out, ck.meta.iteration);
  detail::put_str(out, ck.meta.rng_state);
  detail::put_u64(out, ck.params.size());
  for (const auto& [name, t] : ck.params) {
    detail::put_str(out, name);
    detail::put_u32(out, 2);
    detail::put_u64(out, t.rows());
    detail::put_u64(out, t.cols());
    for (double v : t.values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  detail::Reader in(bytes);
  in.expect(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.meta.config_hash = in.str();
  ck.meta.iteration = in.u64();
  ck.meta.rng_state = in.str();
  const std::uint64_t count = in.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = in.str();
    const std::uint32_t rank = in.u32();
    if (rank != 2) throw ConfigError("parameter '" + name + "' has unsupported rank " + std::to_string(rank));
    const std::uint64_t rows = in.u64();
    const std::uint64_t cols = in.u64();
    std::vector<double> data(rows * cols);
    for (double& v : data) v = std::bit_cast<double>(in.u64());
    ck.params.insert(name, Tensor(rows, cols, std::move(data)));
  }
  if (!in.done()) throw ConfigError("trailing bytes after checkpoint payload");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open '" + path + "' for writing");
  const std::string bytes = serialize_checkpoint(ck);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

inline std::string checkpoint_hash(const Checkpoint& ck) { return hex64(fnv1a64(serialize_checkpoint(ck))); }

}  // namespace sail
