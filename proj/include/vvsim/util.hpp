#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace vvsim {

// Raised when a model, config, or setpoint violates a documented invariant.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when an input file cannot be parsed.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

inline std::string to_hex(const std::vector<uint8_t>& bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (uint8_t b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0x0f]);
  }
  return out;
}

inline int hex_nibble(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

inline std::vector<uint8_t> from_hex(const std::string& s) {
  std::vector<uint8_t> out;
  out.reserve(s.size() / 2);
  int hi = -1;
  for (char c : s) {
    if (c == ' ' || c == ':') continue;
    int n = hex_nibble(c);
    if (n < 0) throw ParseError("invalid hex character in '" + s + "'");
    if (hi < 0) {
      hi = n;
    } else {
      out.push_back(static_cast<uint8_t>((hi << 4) | n));
      hi = -1;
    }
  }
  if (hi >= 0) throw ParseError("odd number of hex digits");
  return out;
}

// Fixed-width deterministic double formatting (locale independent).
inline std::string fmt_g(double v, int precision = 9) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  return buf;
}

inline std::string fmt_f(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

// splitmix64, used to derive independent RNG streams from (seed, salt) pairs.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Portable uniform [0,1) from a raw 64-bit draw; avoids stdlib-specific
// distribution implementations so seeded runs agree across toolchains.
inline double u64_to_unit(uint64_t x) {
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

constexpr int64_t kUsPerSecond = 1000000;

inline double us_to_s(int64_t us) { return static_cast<double>(us) / kUsPerSecond; }
inline int64_t s_to_us(double s) { return static_cast<int64_t>(s * kUsPerSecond + 0.5); }
inline double us_to_hours(int64_t us) { return static_cast<double>(us) / (3600.0 * kUsPerSecond); }

}  // namespace vvsim
