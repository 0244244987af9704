#pragma once

/**
 * Shared primitives for the routing engine.
 *
 * - Error hierarchy: every failure the engine reports derives from
 *   turnroute::Error and carries a category used by the CLI exit codes.
 * - Deterministic RNG: splitmix64 seed derivation plus a mt19937_64 stream
 *   with hand-rolled conversions (std:: distributions are not portable).
 * - FNV-1a 64-bit hashing, used for feature hashing and content digests.
 * - Shortest round-trip decimal rendering for doubles.
 */

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

namespace turnroute {

// ============================================================================
// Errors
// ============================================================================

enum class ErrorKind {
  config,      // unparseable or inconsistent configuration
  validation,  // input violates a documented invariant
  invariant,   // internal contract violated by a caller
  range,       // argument outside its domain
  numeric,     // non-finite values during computation
  transport,   // embedding provider unreachable or failing
  contract,    // dimension or schema mismatch across a boundary
  data,        // training/eval data unusable
  io,          // filesystem failure
  protocol,    // environment misuse (step after done, ...)
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return "config";
    case ErrorKind::validation: return "validation";
    case ErrorKind::invariant: return "invariant";
    case ErrorKind::range: return "range";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::transport: return "transport";
    case ErrorKind::contract: return "contract";
    case ErrorKind::data: return "data";
    case ErrorKind::io: return "io";
    case ErrorKind::protocol: return "protocol";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define TURNROUTE_DEFINE_ERROR(Name, Kind)                          \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& what) : Error(Kind, what) {}  \
  };

TURNROUTE_DEFINE_ERROR(ConfigError, ErrorKind::config)
TURNROUTE_DEFINE_ERROR(ValidationError, ErrorKind::validation)
TURNROUTE_DEFINE_ERROR(InvariantError, ErrorKind::invariant)
TURNROUTE_DEFINE_ERROR(RangeError, ErrorKind::range)
TURNROUTE_DEFINE_ERROR(NumericError, ErrorKind::numeric)
TURNROUTE_DEFINE_ERROR(TransportError, ErrorKind::transport)
TURNROUTE_DEFINE_ERROR(ContractError, ErrorKind::contract)
TURNROUTE_DEFINE_ERROR(DataError, ErrorKind::data)
TURNROUTE_DEFINE_ERROR(IoError, ErrorKind::io)
TURNROUTE_DEFINE_ERROR(ProtocolError, ErrorKind::protocol)

#undef TURNROUTE_DEFINE_ERROR

// ============================================================================
// Hashing
// ============================================================================

inline constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr uint64_t kFnvPrime = 0x100000001b3ULL;

/// FNV-1a over raw bytes. `state` allows incremental hashing.
constexpr uint64_t fnv1a64(std::string_view bytes, uint64_t state = kFnvOffset) {
  for (char c : bytes) {
    state ^= static_cast<uint8_t>(c);
    state *= kFnvPrime;
  }
  return state;
}

inline std::string hex64(uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

// ============================================================================
// Deterministic randomness
// ============================================================================

constexpr uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derive an independent child seed from (seed, index). Used for per-episode
/// and per-run seeds so that streams never overlap in practice.
constexpr uint64_t derive_seed(uint64_t seed, uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// Stream-tagged derivation ("env", "policy", ...).
constexpr uint64_t derive_seed(uint64_t seed, std::string_view tag) {
  return derive_seed(seed, fnv1a64(tag));
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  uint64_t below(uint64_t n) {
    if (n == 0) throw RangeError("Rng::below: n must be positive");
    const uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Uniform integer in [lo, hi] inclusive.
  int64_t between(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo) + 1));
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

// ============================================================================
// Number formatting
// ============================================================================

/// Shortest decimal string that parses back to exactly `v`.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) throw NumericError("format_double: conversion failed");
  return std::string(buf.data(), end);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ValidationError("not a number: '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace turnroute
