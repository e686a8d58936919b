#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace tcal {

// Identifies an independent, reproducible random sequence. Identical
// (seed, stream_id) pairs always yield identical draws.
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a over the label, mixed into the base seed. Used to carve named
// substreams out of a root seed.
inline std::uint64_t derive_stream(std::uint64_t base, std::string_view label) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return splitmix64(base ^ h);
}

inline std::uint64_t derive_stream(std::uint64_t base, std::uint64_t index) {
  return splitmix64(base ^ splitmix64(index + 0x6a09e667f3bcc909ULL));
}

// xoshiro256++ with explicit uniform/normal mappings. The standard library
// distributions are implementation-defined, so draws are produced here to
// keep outputs bit-reproducible.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream_id) {
    std::uint64_t s = splitmix64(seed ^ splitmix64(stream_id));
    for (auto& w : state_) {
      s = splitmix64(s);
      w = s;
    }
  }
  explicit Rng(RngStream stream) : Rng(stream.seed, stream.stream_id) {}

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Lemire multiply-shift; requires n >= 1.
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool coin(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; the paired draw is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace tcal
