#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "circus/rotation.hpp"

namespace circus {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based key derivation: the same key path always yields the same
/// seed regardless of which thread asks or in what order.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = 0x5ca1ab1e0ddba11ULL;
  for (const auto k : path) {
    h = splitmix64(h ^ splitmix64(k));
  }
  return h;
}

// Tags separating independent streams inside one episode.
enum class Stream : std::uint64_t {
  kDomain = 1,
  kObservationNoise = 2,
  kDisturbance = 3,
  kAction = 4,
  kCommand = 5,
  kInit = 6,
  kShuffle = 7,
};

/// A seeded engine with the handful of draws the simulator needs.
class SeedStream {
 public:
  explicit SeedStream(std::uint64_t seed = 0) : engine_(seed) {}

  // Always consumes a draw, so the stream layout does not depend on stddev.
  double normal(double stddev = 1.0) { return stddev * std_normal_(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }
  Vec3 unit_vector() {
    Vec3 v;
    do {
      v = {normal(), normal(), normal()};
    } while (v.norm() < 1e-12);
    return v.normalized();
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> std_normal_{0.0, 1.0};
};

}  // namespace circus
