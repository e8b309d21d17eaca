#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fdpg/divergence.hpp"
#include "fdpg/estimator.hpp"
#include "fdpg/policy.hpp"
#include "fdpg/targets.hpp"

namespace fdpg {

enum class OptimizerKind { Sgd, Adam };
enum class ZMode { Exact, Estimated };
// PostBatch: fold the whole batch into Z_hat, then compute the gradient with it.
// PreBatch: use Z_hat from earlier batches (the first batch falls back to PostBatch).
enum class ZUpdateOrder { PostBatch, PreBatch };
enum class EvalMode { Exact, Sampled };

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  DivergenceKind divergence = DivergenceKind::JensenShannon;
  double learning_rate = 0.05;
  std::size_t batch_size = 256;
  std::size_t steps = 2000;
  // Unset: AnalyticOne for forward KL, Ema(ema_alpha) otherwise.
  std::optional<BaselineMode> baseline;
  double ema_alpha = 0.99;
  // Value of B when baseline is Constant.
  double baseline_constant = 0.0;
  ZMode z_mode = ZMode::Exact;
  ZUpdateOrder z_order = ZUpdateOrder::PostBatch;
  OptimizerKind optimizer = OptimizerKind::Adam;
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::size_t eval_interval = 100;
  // Linear warmup of the learning rate over this many steps (0 disables).
  std::size_t warmup_steps = 0;
  // After warmup the rate decays linearly to learning_rate * final_lr_fraction at the last step.
  double final_lr_fraction = 1.0;
  std::size_t eval_budget = 16384;
  // Unset: exact on enumerable spaces, sampled otherwise.
  std::optional<EvalMode> eval_mode;
  int threads = 1;
  // Conditional tasks: contexts drawn per step; each gets batch_size / contexts_per_step samples.
  std::size_t contexts_per_step = 4;

  // Throws ValidationError on non-positive learning rate, batch, steps or eval interval.
  void validate() const;
  BaselineState initial_baseline() const;
};

// Learning rate applied at a 0-based step under warmup and linear decay.
double scheduled_lr(const TrainConfig& config, std::size_t step);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
};

// Bias-corrected Adam descent step: params -= lr * m_hat / (sqrt(v_hat) + eps).
// Throws ValidationError on a non-finite gradient.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grad, double lr,
               const AdamConfig& config = {});
// params -= lr * grad, i.e. params += lr * (ascent direction of the pseudo-reward objective).
void sgd_step(std::span<double> params, std::span<const double> grad, double lr);

struct MetricsRow {
  std::size_t step = 0;
  ExtendedReal forward_kl;
  ExtendedReal reverse_kl;
  ExtendedReal total_variation;
  ExtendedReal jensen_shannon;
  bool divergences_exact = true;
  ExtendedReal kl_from_base;
  std::optional<double> alignment;
  double entropy = 0.0;
  std::optional<double> reward_mean;
  std::optional<double> reward_std;
  std::optional<double> z_hat;
  std::optional<double> z_exact;
  double wall_clock_s = 0.0;
};

struct AbortInfo {
  std::size_t step = 0;
  std::string message;
};

struct RunRecord {
  std::vector<MetricsRow> rows;
  // "exact" or "estimated"
  std::string z_source = "exact";
  std::optional<AbortInfo> abort;
};

struct EvalOptions {
  std::optional<EvalMode> mode;
  std::size_t budget = 16384;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  // Z_hat for sampled evaluation when the target has no exact log Z.
  std::optional<double> z_hat;
  const FeatureFn* alignment = nullptr;
  int threads = 1;
};

// D_f(pi || p) estimated from pi-samples as E_pi[f*(p_hat / pi)], where f* is
// the perspective of f and p_hat = P / Z_hat.
struct SampledValue {
  ExtendedReal estimate;
  double std_error = 0.0;
};
SampledValue sampled_divergence(const Generator& g, const SequencePolicy& policy,
                                const TargetModel& target, std::span<const Sequence> samples,
                                double log_z);

// One RunRecord row: the four divergences, KL(pi || base), alignment moment and
// normalized entropy. Exact mode enumerates; sampled mode uses budget draws
// from evaluation-only streams. Infinite divergences are reported, not thrown.
MetricsRow evaluate_metrics(const SequencePolicy& policy, const TargetModel& target,
                            const SequencePolicy& base, const EvalOptions& options);

// tau-weighted average of per-context rows.
MetricsRow evaluate_conditional_metrics(const SequencePolicy& policy,
                                        std::span<const TargetModel> targets,
                                        const ConditionalTask& task, const SequencePolicy& base,
                                        const EvalOptions& options);

struct TrainResult {
  std::unique_ptr<SequencePolicy> policy;
  RunRecord record;
};

struct TrainOptions {
  const FeatureFn* alignment = nullptr;
};

// sample batch -> update Z_hat -> sampled gradient -> optimizer step, with
// metrics every eval_interval steps (rows at 0, k, 2k, ... and at `steps`).
// A divergence that cannot handle the target's zero-mass points throws
// InfinitePseudoRewardError before step 0; errors during the loop are recorded
// in record.abort with the failing step.
TrainResult train(const TrainConfig& config, const SequencePolicy& initial, const TargetModel& target,
                  const Generator& g, const TrainOptions& options = {});
TrainResult train(const TrainConfig& config, const SequencePolicy& initial, const TargetModel& target,
                  const TrainOptions& options = {});

TrainResult train_conditional(const TrainConfig& config, const SequencePolicy& initial,
                              const ConditionalTask& task, std::span<const TargetModel> targets,
                              const Generator& g);

// Initializes policy to base: copies parameters when the families match,
// assigns log a(x) to a tabular policy, and otherwise fits policy to base by
// exact forward-KL descent.
void warm_start(SequencePolicy& policy, std::shared_ptr<const SequencePolicy> base,
                int distill_iterations = 500);

// Throws InfinitePseudoRewardError if g cannot be used on the target's support.
void check_support_compatibility(const Generator& g, const TargetModel& target);

}  // namespace fdpg
