#include "fdpg/estimator.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "fdpg/errors.hpp"
#include "fdpg/numeric.hpp"

namespace fdpg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double target_log_z(const TargetModel& target) {
  if (auto lz = target.exact_log_z()) return *lz;
  return log_sum_exp(target.log_score_table());
}

// log pi(x) - log p(x); +inf when p(x) = 0.
double log_ratio(double log_pi, double log_score, double log_z) {
  if (log_score == -kInf) return kInf;
  return log_pi - log_score + log_z;
}

}  // namespace

ZEstimator update_z(ZEstimator z, double weight) {
  if (!(weight >= 0.0) || !std::isfinite(weight)) {
    throw ValidationError("update_z: importance weight must be finite and non-negative");
  }
  z.n += 1;
  // Mean update in the incremental form keeps the rounding of (n - 1) z_mean out.
  z.z_mean += (weight - z.z_mean) / static_cast<double>(z.n);
  return z;
}

double importance_weight(const SequencePolicy& policy, const TargetModel& target,
                         std::span<const Token> x) {
  const double ls = target.log_score(x);
  if (ls == -kInf) return 0.0;
  return std::exp(ls - policy.log_prob(x, target.prefix()));
}

BaselineState BaselineState::ema(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("EMA baseline needs alpha in (0, 1)");
  return BaselineState(BaselineMode::Ema, alpha, 0.0);
}

double BaselineState::value_for_batch(double batch_mean) const {
  if (mode_ == BaselineMode::Ema && !initialized_) return batch_mean;
  return value_;
}

void BaselineState::update(double batch_mean) {
  if (mode_ != BaselineMode::Ema) return;
  if (!initialized_) {
    value_ = batch_mean;
    initialized_ = true;
    return;
  }
  value_ = alpha_ * value_ + (1.0 - alpha_) * batch_mean;
}

std::vector<double> fdpg_gradient_exact(const Generator& g, const SequencePolicy& policy,
                                        const TargetModel& target) {
  if (!(policy.space() == target.space())) {
    throw StructuralError("policy and target live on different sequence spaces");
  }
  const double log_z = target_log_z(target);
  const auto log_pi = policy.log_prob_table(target.prefix());
  const auto log_score = target.log_score_table();
  std::vector<double> coeffs(log_pi.size());
  for (std::size_t i = 0; i < log_pi.size(); ++i) {
    const double r = pseudo_reward_from_log_ratio(g, log_ratio(log_pi[i], log_score[i], log_z));
    coeffs[i] = std::exp(log_pi[i]) * -r;
  }
  std::vector<double> grad(policy.num_params(), 0.0);
  policy.add_scores_all(coeffs, target.prefix(), grad);
  return grad;
}

std::vector<double> dpg_gradient_exact(const SequencePolicy& policy, const TargetModel& target) {
  const double log_z = target_log_z(target);
  const auto log_score = target.log_score_table();
  std::vector<double> coeffs(log_score.size());
  for (std::size_t i = 0; i < log_score.size(); ++i) coeffs[i] = -std::exp(log_score[i] - log_z);
  std::vector<double> grad(policy.num_params(), 0.0);
  policy.add_scores_all(coeffs, target.prefix(), grad);
  return grad;
}

GradientEstimate fdpg_gradient_sampled(const Generator& g, const SequencePolicy& policy,
                                       const TargetModel& target, std::span<const Sequence> batch,
                                       const BaselineState& baseline, double z_hat,
                                       std::span<const double> weights) {
  if (!(z_hat > 0.0) || !std::isfinite(z_hat)) {
    throw EstimatorStateError("partition function estimate must be positive and finite, got " +
                              ExtendedReal(z_hat).to_string());
  }
  if (batch.empty()) throw ValidationError("fdpg_gradient_sampled: empty batch");
  if (!weights.empty() && weights.size() != batch.size()) {
    throw ValidationError("fdpg_gradient_sampled: one weight per sample required");
  }
  const double log_z = std::log(z_hat);
  const double uniform_w = 1.0 / static_cast<double>(batch.size());

  std::vector<double> rewards(batch.size());
  CompensatedSum mean_acc;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double lr =
        log_ratio(policy.log_prob(batch[i], target.prefix()), target.log_score(batch[i]), log_z);
    try {
      rewards[i] = pseudo_reward_from_log_ratio(g, lr);
    } catch (const InfinitePseudoRewardError& e) {
      throw InfinitePseudoRewardError(std::string(e.what()) + " [sample " + std::to_string(i) + "]");
    }
    mean_acc.add((weights.empty() ? uniform_w : weights[i]) * rewards[i]);
  }
  GradientEstimate est;
  est.batch_size = batch.size();
  est.reward_mean = mean_acc.value();
  CompensatedSum var_acc;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double d = rewards[i] - est.reward_mean;
    var_acc.add((weights.empty() ? uniform_w : weights[i]) * d * d);
  }
  est.reward_std = std::sqrt(std::max(0.0, var_acc.value()));
  est.baseline = baseline.value_for_batch(est.reward_mean);

  std::vector<double> coeffs(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    coeffs[i] = -(weights.empty() ? uniform_w : weights[i]) * (rewards[i] - est.baseline);
  }
  est.grad.assign(policy.num_params(), 0.0);
  policy.add_scores(batch, coeffs, target.prefix(), est.grad);
  return est;
}

std::vector<double> rlkl_policy_gradient(const SequencePolicy& policy, const SequencePolicy& a,
                                         const FeatureFn& r, double beta) {
  const auto log_pi = policy.log_prob_table();
  const auto log_a = a.log_prob_table();
  std::vector<double> coeffs(log_pi.size());
  for (auto it = enumerate_space(policy.space()).begin(); it.index() < coeffs.size(); ++it) {
    const std::size_t i = it.index();
    coeffs[i] = std::exp(log_pi[i]) * (r(*it) - beta * (log_pi[i] - log_a[i]));
  }
  std::vector<double> grad(policy.num_params(), 0.0);
  policy.add_scores_all(coeffs, {}, grad);
  return grad;
}

double rlkl_objective(const SequencePolicy& policy, const SequencePolicy& a, const FeatureFn& r,
                      double beta) {
  const auto log_pi = policy.log_prob_table();
  const auto log_a = a.log_prob_table();
  CompensatedSum s;
  for (auto it = enumerate_space(policy.space()).begin(); it.index() < log_pi.size(); ++it) {
    const std::size_t i = it.index();
    s.add(std::exp(log_pi[i]) * (r(*it) - beta * (log_pi[i] - log_a[i])));
  }
  return s.value();
}

std::vector<TargetModel> conditional_targets(std::shared_ptr<const SequencePolicy> a,
                                             const ConditionalTask& task) {
  std::vector<TargetModel> out;
  out.reserve(task.contexts.size());
  for (const auto& c : task.contexts) {
    out.push_back(conditional_target(a, task, c));
    exact_log_partition(out.back());
  }
  return out;
}

std::vector<double> conditional_fdpg_gradient_exact(const Generator& g, const SequencePolicy& policy,
                                                    const ConditionalTask& task,
                                                    std::span<const TargetModel> targets) {
  if (targets.size() != task.contexts.size() || task.context_dist.size() != targets.size()) {
    throw StructuralError("conditional gradient: one target and one tau mass per context required");
  }
  std::vector<double> grad(policy.num_params(), 0.0);
  for (std::size_t c = 0; c < targets.size(); ++c) {
    const double tau = task.context_dist[c];
    if (tau == 0.0) continue;
    std::vector<double> gc;
    try {
      gc = fdpg_gradient_exact(g, policy, targets[c]);
    } catch (const InfinitePseudoRewardError& e) {
      throw InfinitePseudoRewardError(std::string(e.what()) + " [context " + std::to_string(c) + "]");
    }
    for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += tau * gc[j];
  }
  return grad;
}

GradientEstimate conditional_fdpg_gradient(const Generator& g, const SequencePolicy& policy,
                                           std::span<const TargetModel> targets,
                                           std::span<const std::size_t> context_batch,
                                           std::span<const std::vector<Sequence>> batches,
                                           std::span<const BaselineState> baselines,
                                           std::span<const double> z_hats) {
  if (context_batch.empty() || batches.size() != context_batch.size()) {
    throw ValidationError("conditional gradient: one batch per sampled context required");
  }
  GradientEstimate total;
  total.grad.assign(policy.num_params(), 0.0);
  CompensatedSum mean_acc;
  CompensatedSum sq_acc;
  std::size_t n = 0;
  const double inv_contexts = 1.0 / static_cast<double>(context_batch.size());
  for (std::size_t j = 0; j < context_batch.size(); ++j) {
    const std::size_t c = context_batch[j];
    if (c >= targets.size()) throw LookupError("sampled context index out of range");
    GradientEstimate est;
    try {
      est = fdpg_gradient_sampled(g, policy, targets[c], batches[j], baselines[c], z_hats[c]);
    } catch (const InfinitePseudoRewardError& e) {
      throw InfinitePseudoRewardError(std::string(e.what()) + " [context " + std::to_string(c) + "]");
    } catch (const EstimatorStateError& e) {
      throw EstimatorStateError(std::string(e.what()) + " [context " + std::to_string(c) + "]");
    }
    for (std::size_t k = 0; k < total.grad.size(); ++k) total.grad[k] += inv_contexts * est.grad[k];
    const auto m = static_cast<double>(est.batch_size);
    mean_acc.add(m * est.reward_mean);
    sq_acc.add(m * (est.reward_std * est.reward_std + est.reward_mean * est.reward_mean));
    n += est.batch_size;
  }
  total.batch_size = n;
  total.reward_mean = mean_acc.value() / static_cast<double>(n);
  total.reward_std = std::sqrt(
      std::max(0.0, sq_acc.value() / static_cast<double>(n) - total.reward_mean * total.reward_mean));
  return total;
}

Generator change_of_generator(const Generator& g, double b) { return g.shifted(b); }

}  // namespace fdpg
