#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace csam {

/// Seeded random source. Every consumer derives its own named stream from the
/// run seed so that adding draws in one place never shifts another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Independent stream keyed by (seed, name).
  static Rng stream(std::uint64_t seed, std::string_view name);

  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }
  std::uint64_t next_u64() { return engine_(); }
  std::vector<double> normal_vector(std::size_t n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace csam
