#pragma once

// Seeded random streams.
//
// Every random entity (a landmark position, one measurement, one pose
// perturbation) draws from its own stream, derived from the run seed and a
// path of integer tags:
//
//   state = splitmix64(seed)
//   for tag in path: state = splitmix64(state ^ tag)
//   engine = std::mt19937_64(state)
//
// Adding entities therefore never shifts the draws of existing ones.
// Uniforms take the top 53 bits of the engine output; normals use the
// Box-Muller transform. Both are spelled out here so streams do not depend
// on the standard library's distribution implementations.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

#include "dynba/geometry.hpp"

namespace dynba {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Top-level stream tags.
enum class Stream : std::uint64_t {
  kStaticLayout = 1,
  kPartShape = 2,
  kMeasurement = 3,
  kInitPose = 4,
  kBootstrap = 5,
  kCorruption = 6,
};

class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::initializer_list<std::uint64_t> path)
      : engine_(derive(seed, path)) {}

  RandomStream(std::uint64_t seed, Stream tag,
               std::initializer_list<std::uint64_t> path = {})
      : engine_(derive(derive(seed, {static_cast<std::uint64_t>(tag)}), path)) {}

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
  }

  Vector3 normal3(double sigma) {
    const double x = normal(), y = normal(), z = normal();
    return Vector3(x, y, z) * sigma;
  }

 private:
  static std::uint64_t derive(std::uint64_t seed,
                              std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = splitmix64(seed);
    for (auto tag : path) s = splitmix64(s ^ tag);
    return s;
  }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace dynba
