#pragma once

#include <functional>

#include <Eigen/Core>

#include "powerlab/ar_model.hpp"

namespace powerlab {

/// r(x, y); the prompt travels inside the Sequence.
using RewardFn = std::function<double(const Sequence&)>;

/// r_self(x, y) = log pi(y|x), the total log-likelihood. Holds a reference to
/// `model`, which must outlive the returned callable.
RewardFn self_reward(const ARModel& model);

/// Per-token average log-likelihood under `model` (same lifetime rule).
RewardFn self_reward_per_token(const ARModel& model);

/// Reward evaluated at every sequence of `prompt`, in leaf order.
Eigen::ArrayXd tabulate_reward(const ARModel& model, std::size_t prompt, const RewardFn& reward);

}  // namespace powerlab
