#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace fedcopl {

// Seedable generator whose output is identical on every platform.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the
// standard. The standard distributions are not (their algorithms are
// implementation-defined), so every distribution used by the simulator is
// implemented here on top of raw 64-bit draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform();

  // Uniform integer in [0, bound). Unbiased (rejection sampling).
  std::uint64_t below(std::uint64_t bound);

  // Standard normal via the Marsaglia polar method.
  double normal();

  // Gamma(shape, 1) via Marsaglia-Tsang; shape < 1 uses the boost
  // transform Gamma(shape + 1) * U^(1/shape).
  double gamma(double shape);

  // Symmetric Dirichlet(alpha * 1_k) as k normalized gamma draws.
  std::vector<double> dirichlet(double alpha, std::size_t k);

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

// Mixes a base seed with stream identifiers (splitmix64 finalizer) so that
// e.g. (seed, round, client) tuples get independent, reproducible streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

}  // namespace fedcopl
