#include "csam/rng.hpp"

namespace csam {

Rng Rng::stream(std::uint64_t seed, std::string_view name) {
  // FNV-1a over the stream name, mixed with the seed through seed_seq.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::mt19937_64 engine(seq);
  Rng rng;
  rng.engine_ = engine;
  return rng;
}

std::vector<double> Rng::normal_vector(std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = normal();
  return v;
}

}  // namespace csam
