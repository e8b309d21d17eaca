#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fdpg/divergence.hpp"
#include "fdpg/policy.hpp"
#include "fdpg/targets.hpp"

namespace fdpg {

// Running mean of importance weights P(x) / pi(x); each weight is an unbiased
// estimate of Z when x ~ pi.
struct ZEstimator {
  std::uint64_t n = 0;
  double z_mean = 0.0;
};

// n <- n + 1; z_mean <- ((n - 1) z_mean + weight) / n.
ZEstimator update_z(ZEstimator z, double weight);

// P(x) / pi(x) for x under the target's context.
double importance_weight(const SequencePolicy& policy, const TargetModel& target,
                         std::span<const Token> x);

enum class BaselineMode { None, AnalyticOne, Ema, Constant };

// Scalar B subtracted from pseudo-rewards.
//  - AnalyticOne: B = 1, the expected forward-KL pseudo-reward E_pi[p / pi].
//  - Ema(alpha): value <- alpha value + (1 - alpha) batch mean; the first batch
//    initializes value to its own mean.
class BaselineState {
 public:
  static BaselineState none() { return BaselineState(BaselineMode::None, 0.0, 0.0); }
  static BaselineState analytic_one() { return BaselineState(BaselineMode::AnalyticOne, 0.0, 1.0); }
  static BaselineState ema(double alpha);
  static BaselineState constant(double b) { return BaselineState(BaselineMode::Constant, 0.0, b); }

  BaselineMode mode() const { return mode_; }
  double alpha() const { return alpha_; }
  double value() const { return value_; }
  bool initialized() const { return initialized_; }

  // B to use for a batch whose pseudo-rewards average batch_mean.
  double value_for_batch(double batch_mean) const;
  // Folds a batch mean into the state (no-op except for Ema).
  void update(double batch_mean);

 private:
  BaselineState(BaselineMode mode, double alpha, double value)
      : mode_(mode), alpha_(alpha), value_(value), initialized_(mode != BaselineMode::Ema) {}

  BaselineMode mode_;
  double alpha_;
  double value_;
  bool initialized_;
};

struct GradientEstimate {
  // Estimate of the gradient of D_f(pi || p) w.r.t. the policy parameters;
  // descending it maximizes the baselined pseudo-reward.
  std::vector<double> grad;
  // Statistics of the pseudo-rewards before baseline subtraction.
  double reward_mean = 0.0;
  double reward_std = 0.0;
  double baseline = 0.0;
  std::size_t batch_size = 0;
};

// sum_x pi(x) f'(pi(x) / p(x)) grad log pi(x), with f'(inf) where p(x) = 0.
// Uses the target's exact log Z (computed on the fly when absent). Throws
// InfinitePseudoRewardError if p has zeros and f'(inf) = +inf.
std::vector<double> fdpg_gradient_exact(const Generator& g, const SequencePolicy& policy,
                                        const TargetModel& target);

// Distributional policy gradient form -sum_x p(x) grad log pi(x).
std::vector<double> dpg_gradient_exact(const SequencePolicy& policy, const TargetModel& target);

// Monte Carlo estimate over a batch drawn from pi:
//   grad = -sum_i w_i (r_i - B) grad log pi(x_i),  r_i = -f'(pi(x_i) Z_hat / P(x_i)),
// with w_i = 1/N unless explicit weights are given (weights summing to one
// turn the batch into an exact expectation, e.g. the whole space weighted by pi).
GradientEstimate fdpg_gradient_sampled(const Generator& g, const SequencePolicy& policy,
                                       const TargetModel& target, std::span<const Sequence> batch,
                                       const BaselineState& baseline, double z_hat,
                                       std::span<const double> weights = {});

// Exact gradient of J(theta) = E_pi[r(x) - beta log(pi(x) / a(x))].
std::vector<double> rlkl_policy_gradient(const SequencePolicy& policy, const SequencePolicy& a,
                                         const FeatureFn& r, double beta);
// Exact J(theta).
double rlkl_objective(const SequencePolicy& policy, const SequencePolicy& a, const FeatureFn& r,
                      double beta);

// One target per context of a conditional task, in task.contexts order.
std::vector<TargetModel> conditional_targets(std::shared_ptr<const SequencePolicy> a,
                                             const ConditionalTask& task);

// sum_c tau(c) grad D_f(pi(.|c) || p_c).
std::vector<double> conditional_fdpg_gradient_exact(const Generator& g, const SequencePolicy& policy,
                                                    const ConditionalTask& task,
                                                    std::span<const TargetModel> targets);

// Mean over sampled contexts of the per-context sampled estimate.
// context_batch[j] indexes task.contexts; batches[j] was drawn from pi(.|c_j);
// baselines and z_hats are indexed by context.
GradientEstimate conditional_fdpg_gradient(const Generator& g, const SequencePolicy& policy,
                                           std::span<const TargetModel> targets,
                                           std::span<const std::size_t> context_batch,
                                           std::span<const std::vector<Sequence>> batches,
                                           std::span<const BaselineState> baselines,
                                           std::span<const double> z_hats);

// g(t) = f(t) - b (t - 1): same divergence, pseudo-reward shifted by +b.
Generator change_of_generator(const Generator& g, double b);

}  // namespace fdpg
