#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

#include <Eigen/Core>

namespace powerlab {

/// Advances a splitmix64 state and returns the next output.
std::uint64_t splitmix64(std::uint64_t& state);

/// Seed for the `stream`-th independent replicate derived from `base`.
/// Replicates seeded this way give the same results whatever the thread count.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// xoshiro256** seeded through splitmix64.
///
/// Every stochastic routine takes one of these explicitly. Distribution
/// helpers are implemented here rather than via <random> so that draws are
/// bit-identical across standard library implementations.
class SeededRng {
 public:
  using result_type = std::uint64_t;

  explicit SeededRng(std::uint64_t seed = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()();

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n). Requires n > 0.
  std::size_t below(std::size_t n);
  /// Standard normal via Box-Muller (one output per call, nothing cached).
  double normal();
  /// Unit-rate exponential.
  double exponential();
  /// Index drawn from an (approximately) normalized probability vector by
  /// inverse CDF. Never returns a zero-probability index.
  std::size_t categorical(const Eigen::Ref<const Eigen::ArrayXd>& probs);

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace powerlab
