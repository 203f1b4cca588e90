// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace emobev {

/// Thrown when a forward/backward pass produces NaN/Inf or an optimizer
/// receives non-finite gradients. Maps to CLI exit code 3.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown on malformed manifests, feature files, checkpoints and other
/// input-data problems. Maps to CLI exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Deterministic random source. All sampling helpers are implemented on top
/// of the raw 64-bit stream so that identical seeds give bitwise-identical
/// sequences on every platform (std::distributions do not guarantee that).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  std::uint64_t next_u64() {
    // xorshift* — small state, good enough statistics for data synthesis,
    // dropout masks and weight init.
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dull;
  }

  /// Uniform double in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::uniform_int: n must be > 0");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return r % n;
  }

  /// Standard normal via Box-Muller (cached spare).
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Derive an independent stream, e.g. one per CV fold, so results do not
  /// depend on scheduling order.
  Rng fork(std::uint64_t stream_id) const {
    std::uint64_t s = state_;
    s ^= 0x94d049bb133111ebull * (stream_id + 1);
    s ^= s >> 31;
    return Rng(s);
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// FNV-1a over raw bytes; used for checkpoint integrity and the
/// frozen-parameter checksum contract.
inline std::uint64_t fnv1a(const void* bytes, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::vector<double>& v,
                           std::uint64_t h = 0xcbf29ce484222325ull) {
  return v.empty() ? h : fnv1a(v.data(), v.size() * sizeof(double), h);
}

// Little-endian scalar IO for the binary file formats (feature files and
// checkpoints are specified byte-exactly).
namespace le {

template <typename T>
void append(std::string& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  // Host is assumed little-endian; make it explicit for integral types.
  if constexpr (sizeof(T) > 1) {
    std::uint64_t raw = 0;
    std::memcpy(&raw, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((raw >> (8 * i)) & 0xff);
  }
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T read(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw DataError("truncated binary block");
  std::uint64_t raw = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    raw |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  T v;
  std::memcpy(&v, &raw, sizeof(T));
  return v;
}

}  // namespace le

}  // namespace emobev
