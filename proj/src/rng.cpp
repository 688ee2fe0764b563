#include "powerlab/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace powerlab {

namespace {

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t state = base;
  std::uint64_t a = splitmix64(state);
  state = a ^ (stream * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
  splitmix64(state);
  return splitmix64(state);
}

SeededRng::SeededRng(std::uint64_t seed) {
  std::uint64_t state = seed;
  for (auto& word : s_) word = splitmix64(state);
}

SeededRng::result_type SeededRng::operator()() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double SeededRng::uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

std::size_t SeededRng::below(std::size_t n) {
  if (n == 0) throw std::invalid_argument("SeededRng::below: n must be positive");
  const auto wide = static_cast<unsigned __int128>((*this)()) * n;
  return static_cast<std::size_t>(wide >> 64);
}

double SeededRng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double SeededRng::exponential() { return -std::log(1.0 - uniform()); }

std::size_t SeededRng::categorical(const Eigen::Ref<const Eigen::ArrayXd>& probs) {
  const Eigen::Index n = probs.size();
  if (n == 0) throw std::invalid_argument("SeededRng::categorical: empty row");
  const double u = uniform();
  double cumulative = 0.0;
  Eigen::Index last_positive = -1;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (probs[i] <= 0.0) continue;
    last_positive = i;
    cumulative += probs[i];
    if (u < cumulative) return static_cast<std::size_t>(i);
  }
  if (last_positive < 0) throw std::invalid_argument("SeededRng::categorical: row has no mass");
  // u landed in the rounding gap above the accumulated total.
  return static_cast<std::size_t>(last_positive);
}

}  // namespace powerlab
