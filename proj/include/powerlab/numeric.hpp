#pragma once

#include <span>

#include <Eigen/Core>

namespace powerlab {

/// log(sum(exp(x))). Entries equal to -inf contribute nothing; an all -inf
/// (or empty) input returns -inf.
double logsumexp(const Eigen::Ref<const Eigen::ArrayXd>& x);

/// Normalizes log-weights into log-probabilities.
Eigen::ArrayXd log_normalize(const Eigen::Ref<const Eigen::ArrayXd>& log_weights);

/// Total variation distance 0.5 * sum |p - q|.
double total_variation(const Eigen::Ref<const Eigen::ArrayXd>& p,
                       const Eigen::Ref<const Eigen::ArrayXd>& q);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

/// Number of adjacent increases in a sequence that should be non-increasing.
std::size_t count_increases(std::span<const double> values);

}  // namespace powerlab
