#ifndef CFDLAB_RNG_HPP_
#define CFDLAB_RNG_HPP_

#include <cmath>
#include <cstdint>

namespace cfdlab {

// Counter-based deterministic random stream. Each (seed, stream_id) pair
// yields an independent, platform-stable sequence; substreams are derived by
// hashing so parallel workers can draw without coordination.
class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed), stream_id_(stream_id), counter_(0), has_spare_(false),
        spare_(0.0) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  RngStream substream(std::uint64_t id) const {
    return RngStream(mix(seed_ ^ 0x9e3779b97f4a7c15ULL, stream_id_),
                     mix(stream_id_ + 0x100000001b3ULL, id));
  }

  std::uint64_t next_u64() {
    return mix(mix(seed_, stream_id_), counter_++);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). n must be >= 1.
  std::uint64_t next_below(std::uint64_t n) {
    // Rejection sampling keeps the draw unbiased and platform-stable.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller (hand-rolled: std::normal_distribution is
  // not bit-stable across standard libraries).
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Gamma(shape) with unit scale, Marsaglia-Tsang. Used for Dirichlet rows.
  double next_gamma(double shape) {
    if (shape < 1.0) {
      const double u = next_double();
      return next_gamma(shape + 1.0) * std::pow(u > 0 ? u : 1e-300, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = next_gaussian();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = next_double();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
        return d * v;
    }
  }

 private:
  // splitmix64-style finalizer over (state, counter).
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t counter_;
  bool has_spare_;
  double spare_;
};

}  // namespace cfdlab

#endif  // CFDLAB_RNG_HPP_
