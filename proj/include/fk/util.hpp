#pragma once

#include <cstdint>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fk {

// Little-endian codecs. All multi-byte values in the store, snapshots and
// I/O spaces are serialized through these so state is host-independent.
inline void store_le(std::span<std::uint8_t> dst, std::uint64_t value, std::size_t width) {
  for (std::size_t i = 0; i < width; ++i) {
    dst[i] = static_cast<std::uint8_t>(value >> (8 * i));
  }
}

inline std::uint64_t load_le(std::span<const std::uint8_t> src, std::size_t width) {
  std::uint64_t value = 0;
  for (std::size_t i = 0; i < width; ++i) {
    value |= static_cast<std::uint64_t>(src[i]) << (8 * i);
  }
  return value;
}

inline std::string format_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (std::uint8_t b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xf]);
  }
  return out;
}

inline int hex_nibble(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

// Returns empty on malformed input (odd length or non-hex digit) with ok=false.
inline bool parse_hex(std::string_view text, std::vector<std::uint8_t>& out) {
  if (text.size() % 2 != 0) return false;
  out.clear();
  out.reserve(text.size() / 2);
  for (std::size_t i = 0; i < text.size(); i += 2) {
    int hi = hex_nibble(text[i]);
    int lo = hex_nibble(text[i + 1]);
    if (hi < 0 || lo < 0) return false;
    out.push_back(static_cast<std::uint8_t>((hi << 4) | lo));
  }
  return true;
}

// SplitMix64. Used instead of <random> distributions so that seeded runs
// produce identical sequences on every host and standard library.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, bound). bound must be nonzero.
  std::uint64_t bounded(std::uint64_t bound) {
    // Multiply-shift reduction; bias is negligible for simulation workloads.
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * bound) >> 64);
  }

 private:
  std::uint64_t state_;
};

inline bool is_pow2(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

inline std::uint32_t log2_floor(std::uint64_t v) {
  std::uint32_t r = 0;
  while (v >>= 1) ++r;
  return r;
}

inline std::uint32_t log2_ceil(std::uint64_t v) {
  if (v <= 1) return 0;
  return log2_floor(v - 1) + 1;
}

// Benchmark helpers: keep a value alive without letting the optimizer
// collapse the measured loop.
template <class T>
inline void do_not_optimize(T const& value) {
  asm volatile("" : : "g"(value) : "memory");
}

inline void clobber_memory() { asm volatile("" ::: "memory"); }

}  // namespace fk
