#include "powerlab/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace powerlab {

double logsumexp(const Eigen::Ref<const Eigen::ArrayXd>& x) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (x.size() == 0) return kNegInf;
  const double peak = x.maxCoeff();
  if (peak == kNegInf) return kNegInf;
  if (std::isinf(peak)) return peak;
  return peak + std::log((x - peak).exp().sum());
}

Eigen::ArrayXd log_normalize(const Eigen::Ref<const Eigen::ArrayXd>& log_weights) {
  const double total = logsumexp(log_weights);
  if (!std::isfinite(total)) throw std::invalid_argument("log_normalize: no finite mass");
  return log_weights - total;
}

double total_variation(const Eigen::Ref<const Eigen::ArrayXd>& p,
                       const Eigen::Ref<const Eigen::ArrayXd>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("total_variation: size mismatch");
  return 0.5 * (p - q).abs().sum();
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("spearman: need two equal-length samples of size >= 2");
  }
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const Eigen::Map<const Eigen::ArrayXd> a(rx.data(), static_cast<Eigen::Index>(rx.size()));
  const Eigen::Map<const Eigen::ArrayXd> b(ry.data(), static_cast<Eigen::Index>(ry.size()));
  const Eigen::ArrayXd da = a - a.mean();
  const Eigen::ArrayXd db = b - b.mean();
  const double denom = std::sqrt((da * da).sum() * (db * db).sum());
  if (denom == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (da * db).sum() / denom;
}

std::size_t count_increases(std::span<const double> values) {
  std::size_t n = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[i - 1]) ++n;
  }
  return n;
}

}  // namespace powerlab
