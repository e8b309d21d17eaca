#include "fdpg/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <string>

#include "fdpg/errors.hpp"
#include "fdpg/numeric.hpp"

namespace fdpg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool exact_mode(const EvalOptions& options, const Space& space) {
  if (options.mode) return *options.mode == EvalMode::Exact;
  return space.enumerable();
}

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if (batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (steps < 1) throw ValidationError("steps must be >= 1");
  if (eval_interval < 1) throw ValidationError("eval interval must be >= 1");
  if (!(ema_alpha > 0.0 && ema_alpha < 1.0)) throw ValidationError("ema alpha must be in (0, 1)");
  if (contexts_per_step < 1) throw ValidationError("contexts per step must be >= 1");
  if (eval_budget < 1) throw ValidationError("evaluation budget must be >= 1");
  if (!(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0)) {
    throw ValidationError("final lr fraction must be in (0, 1]");
  }
}

BaselineState TrainConfig::initial_baseline() const {
  const BaselineMode mode = baseline.value_or(
      divergence == DivergenceKind::ForwardKL ? BaselineMode::AnalyticOne : BaselineMode::Ema);
  switch (mode) {
    case BaselineMode::None: return BaselineState::none();
    case BaselineMode::AnalyticOne: return BaselineState::analytic_one();
    case BaselineMode::Ema: return BaselineState::ema(ema_alpha);
    case BaselineMode::Constant: return BaselineState::constant(baseline_constant);
  }
  return BaselineState::none();
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grad, double lr,
               const AdamConfig& config) {
  if (grad.size() != params.size()) throw ValidationError("adam_step: size mismatch");
  for (double g : grad) {
    if (!std::isfinite(g)) throw ValidationError("adam_step: non-finite gradient");
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.t = 0;
  }
  state.t += 1;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grad[i];
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
  }
}

void sgd_step(std::span<double> params, std::span<const double> grad, double lr) {
  if (grad.size() != params.size()) throw ValidationError("sgd_step: size mismatch");
  for (double g : grad) {
    if (!std::isfinite(g)) throw ValidationError("sgd_step: non-finite gradient");
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
}

SampledValue sampled_divergence(const Generator& g, const SequencePolicy& policy,
                                const TargetModel& target, std::span<const Sequence> samples,
                                double log_z) {
  if (samples.empty()) throw ValidationError("sampled_divergence needs samples");
  const Generator swapped = g.perspective();
  std::vector<double> values;
  values.reserve(samples.size());
  for (const auto& x : samples) {
    const double ls = target.log_score(x);
    if (ls == -kInf) {
      const ExtendedReal at_zero = swapped.f_at_zero();
      if (at_zero.is_infinite()) return {ExtendedReal::infinity(), 0.0};
      values.push_back(at_zero.value());
      continue;
    }
    const double u = std::exp(ls - log_z - policy.log_prob(x, target.prefix()));
    values.push_back(swapped.f(u));
  }
  const double n = static_cast<double>(values.size());
  const double mean = compensated_sum(values) / n;
  CompensatedSum sq;
  for (double v : values) sq.add((v - mean) * (v - mean));
  const double var = values.size() > 1 ? sq.value() / (n - 1.0) : 0.0;
  return {ExtendedReal(mean), std::sqrt(var / n)};
}

MetricsRow evaluate_metrics(const SequencePolicy& policy, const TargetModel& target,
                            const SequencePolicy& base, const EvalOptions& options) {
  MetricsRow row;
  row.step = static_cast<std::size_t>(options.step);
  const Generator fkl(DivergenceKind::ForwardKL);
  const Generator rkl(DivergenceKind::ReverseKL);
  const Generator tv(DivergenceKind::TotalVariation);
  const Generator js(DivergenceKind::JensenShannon);
  const auto prefix = target.prefix();

  if (exact_mode(options, policy.space())) {
    const double log_z = target.exact_log_z() ? *target.exact_log_z()
                                              : log_sum_exp(target.log_score_table());
    const FiniteDistribution pi = exact_distribution(policy, prefix);
    const FiniteDistribution p = normalized_target(target, log_z);
    const FiniteDistribution a = exact_distribution(base, prefix);
    row.divergences_exact = true;
    row.forward_kl = f_divergence_exact(fkl, pi, p);
    row.reverse_kl = f_divergence_exact(rkl, pi, p);
    row.total_variation = f_divergence_exact(tv, pi, p);
    row.jensen_shannon = f_divergence_exact(js, pi, p);
    row.kl_from_base = f_divergence_exact(rkl, pi, a);
    row.entropy = exact_normalized_entropy(policy, prefix);
    row.z_exact = std::exp(log_z);
    const auto table = target.log_score_table();
    if (options.alignment != nullptr) {
      CompensatedSum s;
      for (auto it = enumerate_space(policy.space()).begin(); it.index() < pi.size(); ++it) {
        if (pi[it.index()] > 0.0) s.add(pi[it.index()] * (*options.alignment)(*it));
      }
      row.alignment = s.value();
    } else if (target.has_zero_mass()) {
      CompensatedSum s;
      for (std::size_t i = 0; i < pi.size(); ++i) {
        if (table[i] != -kInf) s.add(pi[i]);
      }
      row.alignment = s.value();
    }
    return row;
  }

  const auto samples = sample(policy, {options.seed, StreamDomain::Evaluation, options.step},
                              options.budget, prefix, options.threads);
  double log_z;
  if (target.exact_log_z()) {
    log_z = *target.exact_log_z();
    row.z_exact = std::exp(log_z);
  } else if (options.z_hat && *options.z_hat > 0.0) {
    log_z = std::log(*options.z_hat);
  } else {
    // No running estimate yet: importance-weight the evaluation draws themselves.
    ZEstimator z;
    for (const auto& x : samples) z = update_z(z, importance_weight(policy, target, x));
    if (!(z.z_mean > 0.0)) {
      throw EstimatorStateError("sampled evaluation needs an exact log Z or a positive Z estimate");
    }
    log_z = std::log(z.z_mean);
  }
  row.divergences_exact = false;
  row.forward_kl = sampled_divergence(fkl, policy, target, samples, log_z).estimate;
  row.reverse_kl = sampled_divergence(rkl, policy, target, samples, log_z).estimate;
  row.total_variation = sampled_divergence(tv, policy, target, samples, log_z).estimate;
  row.jensen_shannon = sampled_divergence(js, policy, target, samples, log_z).estimate;
  CompensatedSum kl;
  CompensatedSum align;
  CompensatedSum support;
  for (const auto& x : samples) {
    kl.add(policy.log_prob(x, prefix) - base.log_prob(x, prefix));
    if (options.alignment != nullptr) align.add((*options.alignment)(x));
    if (target.log_score(x) != -kInf) support.add(1.0);
  }
  const double n = static_cast<double>(samples.size());
  row.kl_from_base = ExtendedReal(std::max(0.0, kl.value() / n));
  if (options.alignment != nullptr) {
    row.alignment = align.value() / n;
  } else if (target.kind() == TargetKind::GdcBinary || target.kind() == TargetKind::Conditional) {
    row.alignment = support.value() / n;
  }
  row.entropy = normalized_entropy(samples, policy, prefix);
  return row;
}

MetricsRow evaluate_conditional_metrics(const SequencePolicy& policy,
                                        std::span<const TargetModel> targets,
                                        const ConditionalTask& task, const SequencePolicy& base,
                                        const EvalOptions& options) {
  MetricsRow out;
  out.step = static_cast<std::size_t>(options.step);
  out.forward_kl = out.reverse_kl = out.total_variation = out.jensen_shannon = 0.0;
  out.kl_from_base = 0.0;
  double entropy = 0.0;
  double alignment = 0.0;
  double z = 0.0;
  bool any_alignment = false;
  for (std::size_t c = 0; c < targets.size(); ++c) {
    const double tau = task.context_dist[c];
    if (tau == 0.0) continue;
    EvalOptions per = options;
    per.seed = options.seed ^ (0x9E3779B97F4A7C15ULL * (c + 1));
    const MetricsRow row = evaluate_metrics(policy, targets[c], base, per);
    out.divergences_exact = row.divergences_exact;
    out.forward_kl += row.forward_kl.scaled_by(tau);
    out.reverse_kl += row.reverse_kl.scaled_by(tau);
    out.total_variation += row.total_variation.scaled_by(tau);
    out.jensen_shannon += row.jensen_shannon.scaled_by(tau);
    out.kl_from_base += row.kl_from_base.scaled_by(tau);
    entropy += tau * row.entropy;
    if (row.alignment) {
      alignment += tau * *row.alignment;
      any_alignment = true;
    }
    if (row.z_exact) z += tau * *row.z_exact;
  }
  out.entropy = entropy;
  if (any_alignment) out.alignment = alignment;
  if (z > 0.0) out.z_exact = z;
  return out;
}

void check_support_compatibility(const Generator& g, const TargetModel& target) {
  if (target.has_zero_mass() && g.f_prime_at_inf().is_infinite()) {
    throw InfinitePseudoRewardError(
        std::string(display_name(g.kind())) +
        " cannot be used on this target: f'(inf) = inf and the target assigns zero mass to "
        "sequences the policy can generate (support violation), so the pseudo-reward is infinite");
  }
}

namespace {

}  // namespace

double scheduled_lr(const TrainConfig& config, std::size_t step) {
  if (step < config.warmup_steps) {
    return config.learning_rate * static_cast<double>(step + 1) /
           static_cast<double>(config.warmup_steps);
  }
  if (config.final_lr_fraction == 1.0 || config.steps <= config.warmup_steps + 1) {
    return config.learning_rate;
  }
  const double span = static_cast<double>(config.steps - 1 - config.warmup_steps);
  const double frac = static_cast<double>(step - config.warmup_steps) / span;
  return config.learning_rate * (1.0 - (1.0 - config.final_lr_fraction) * frac);
}

namespace {

void apply_update(const TrainConfig& config, AdamState& adam, std::vector<double>& params,
                  std::span<const double> grad, std::size_t step) {
  const double lr = scheduled_lr(config, step);
  if (config.optimizer == OptimizerKind::Adam) {
    adam_step(adam, params, grad, lr, config.adam);
  } else {
    sgd_step(params, grad, lr);
  }
}

bool should_eval(const TrainConfig& config, std::size_t completed) {
  return completed % config.eval_interval == 0 || completed == config.steps;
}

}  // namespace

TrainResult train(const TrainConfig& config, const SequencePolicy& initial, const TargetModel& target,
                  const Generator& g, const TrainOptions& options) {
  config.validate();
  check_support_compatibility(g, target);
  if (!(initial.space() == target.space())) {
    throw StructuralError("policy and target live on different sequence spaces");
  }

  TrainResult result;
  result.policy = initial.clone();
  SequencePolicy& policy = *result.policy;
  RunRecord& record = result.record;

  std::optional<double> exact_log_z = target.exact_log_z();
  if (config.z_mode == ZMode::Exact && !exact_log_z && target.has_table()) {
    exact_log_z = log_sum_exp(target.log_score_table());
  }
  const bool use_exact_z = config.z_mode == ZMode::Exact && exact_log_z.has_value();
  record.z_source = use_exact_z ? "exact" : "estimated";

  ZEstimator z;
  BaselineState baseline = config.initial_baseline();
  AdamState adam;
  std::vector<double> params(policy.params().begin(), policy.params().end());
  std::optional<GradientEstimate> last;
  const auto start = std::chrono::steady_clock::now();

  auto eval_row = [&](std::size_t completed) {
    EvalOptions eo;
    eo.mode = config.eval_mode;
    eo.budget = config.eval_budget;
    eo.seed = config.seed;
    eo.step = completed;
    eo.alignment = options.alignment;
    eo.threads = config.threads;
    if (!use_exact_z && z.n > 0) eo.z_hat = z.z_mean;
    MetricsRow row = evaluate_metrics(policy, target, target.base(), eo);
    if (last) {
      row.reward_mean = last->reward_mean;
      row.reward_std = last->reward_std;
    }
    if (!use_exact_z && z.n > 0) row.z_hat = z.z_mean;
    row.wall_clock_s = elapsed_seconds(start);
    record.rows.push_back(row);
  };

  eval_row(0);
  for (std::size_t step = 0; step < config.steps; ++step) {
    try {
      const auto batch = sample(policy, {config.seed, StreamDomain::Training, step},
                                config.batch_size, target.prefix(), config.threads);
      double z_hat;
      if (use_exact_z) {
        z_hat = std::exp(*exact_log_z);
      } else {
        const bool had_history = z.n > 0;
        const double previous = z.z_mean;
        for (const auto& x : batch) z = update_z(z, importance_weight(policy, target, x));
        z_hat = (config.z_order == ZUpdateOrder::PreBatch && had_history) ? previous : z.z_mean;
      }
      GradientEstimate est = fdpg_gradient_sampled(g, policy, target, batch, baseline, z_hat);
      baseline.update(est.reward_mean);
      apply_update(config, adam, params, est.grad, step);
      policy.set_params(params);
      est.grad.clear();
      last = std::move(est);
    } catch (const Error& e) {
      record.abort = AbortInfo{step, e.what()};
      return result;
    }
    if (should_eval(config, step + 1)) eval_row(step + 1);
  }
  return result;
}

TrainResult train(const TrainConfig& config, const SequencePolicy& initial, const TargetModel& target,
                  const TrainOptions& options) {
  return train(config, initial, target, make_generator(config.divergence), options);
}

TrainResult train_conditional(const TrainConfig& config, const SequencePolicy& initial,
                              const ConditionalTask& task, std::span<const TargetModel> targets,
                              const Generator& g) {
  config.validate();
  if (targets.size() != task.contexts.size()) {
    throw StructuralError("train_conditional: one target per context required");
  }
  for (const auto& t : targets) check_support_compatibility(g, t);

  TrainResult result;
  result.policy = initial.clone();
  SequencePolicy& policy = *result.policy;
  RunRecord& record = result.record;

  const std::size_t n_ctx = targets.size();
  std::vector<std::optional<double>> exact_log_z(n_ctx);
  bool use_exact_z = config.z_mode == ZMode::Exact;
  for (std::size_t c = 0; c < n_ctx; ++c) {
    exact_log_z[c] = targets[c].exact_log_z();
    if (!exact_log_z[c] && targets[c].has_table()) {
      exact_log_z[c] = log_sum_exp(targets[c].log_score_table());
    }
    if (!exact_log_z[c]) use_exact_z = false;
  }
  record.z_source = use_exact_z ? "exact" : "estimated";

  std::vector<ZEstimator> z(n_ctx);
  std::vector<BaselineState> baselines(n_ctx, config.initial_baseline());
  AdamState adam;
  std::vector<double> params(policy.params().begin(), policy.params().end());
  std::optional<GradientEstimate> last;
  const std::size_t per_context = std::max<std::size_t>(1, config.batch_size / config.contexts_per_step);

  // Inverse-CDF draw of contexts from tau.
  std::vector<double> tau_cdf(n_ctx);
  double running = 0.0;
  for (std::size_t c = 0; c < n_ctx; ++c) tau_cdf[c] = (running += task.context_dist[c]);
  const auto start = std::chrono::steady_clock::now();

  auto eval_row = [&](std::size_t completed) {
    EvalOptions eo;
    eo.mode = config.eval_mode;
    eo.budget = config.eval_budget;
    eo.seed = config.seed;
    eo.step = completed;
    eo.threads = config.threads;
    MetricsRow row = evaluate_conditional_metrics(policy, targets, task, targets[0].base(), eo);
    if (last) {
      row.reward_mean = last->reward_mean;
      row.reward_std = last->reward_std;
    }
    if (!use_exact_z) {
      double mean = 0.0;
      for (const auto& zc : z) mean += zc.z_mean / static_cast<double>(n_ctx);
      row.z_hat = mean;
    }
    row.wall_clock_s = elapsed_seconds(start);
    record.rows.push_back(row);
  };

  eval_row(0);
  for (std::size_t step = 0; step < config.steps; ++step) {
    try {
      std::vector<std::size_t> contexts(config.contexts_per_step);
      std::vector<std::vector<Sequence>> batches(config.contexts_per_step);
      for (std::size_t j = 0; j < contexts.size(); ++j) {
        CounterStream cs(config.seed, StreamDomain::Context, step, j);
        const double u = cs.uniform() * running;
        std::size_t c = 0;
        while (c + 1 < n_ctx && tau_cdf[c] <= u) ++c;
        contexts[j] = c;
        batches[j] = sample(policy, {config.seed, StreamDomain::Training, step}, per_context,
                            task.contexts[c], config.threads, j * per_context);
      }
      std::vector<double> z_hats(n_ctx, 0.0);
      if (use_exact_z) {
        for (std::size_t c = 0; c < n_ctx; ++c) z_hats[c] = std::exp(*exact_log_z[c]);
      } else {
        std::vector<double> previous(n_ctx);
        std::vector<bool> had_history(n_ctx);
        for (std::size_t c = 0; c < n_ctx; ++c) {
          previous[c] = z[c].z_mean;
          had_history[c] = z[c].n > 0;
        }
        for (std::size_t j = 0; j < contexts.size(); ++j) {
          const std::size_t c = contexts[j];
          for (const auto& x : batches[j]) z[c] = update_z(z[c], importance_weight(policy, targets[c], x));
        }
        for (std::size_t c = 0; c < n_ctx; ++c) {
          z_hats[c] = (config.z_order == ZUpdateOrder::PreBatch && had_history[c]) ? previous[c]
                                                                                  : z[c].z_mean;
        }
      }
      GradientEstimate est =
          conditional_fdpg_gradient(g, policy, targets, contexts, batches, baselines, z_hats);
      // Per-context baselines follow their own batch means.
      for (std::size_t j = 0; j < contexts.size(); ++j) {
        const std::size_t c = contexts[j];
        CompensatedSum s;
        const double log_z = std::log(z_hats[c]);
        for (const auto& x : batches[j]) {
          const double ls = targets[c].log_score(x);
          const double lr = ls == -kInf ? kInf : policy.log_prob(x, task.contexts[c]) - ls + log_z;
          s.add(pseudo_reward_from_log_ratio(g, lr));
        }
        baselines[c].update(s.value() / static_cast<double>(batches[j].size()));
      }
      apply_update(config, adam, params, est.grad, step);
      policy.set_params(params);
      est.grad.clear();
      last = std::move(est);
    } catch (const Error& e) {
      record.abort = AbortInfo{step, e.what()};
      return result;
    }
    if (should_eval(config, step + 1)) eval_row(step + 1);
  }
  return result;
}

void warm_start(SequencePolicy& policy, std::shared_ptr<const SequencePolicy> base,
                int distill_iterations) {
  if (!(policy.space() == base->space())) {
    throw StructuralError("warm_start: policy and base live on different spaces");
  }
  const bool same_family =
      policy.kind() == base->kind() && policy.num_params() == base->num_params() &&
      (policy.kind() == PolicyKind::Tabular ||
       static_cast<const NGramPolicy&>(policy).order() == static_cast<const NGramPolicy&>(*base).order());
  if (same_family) {
    policy.set_params(base->params());
    return;
  }
  if (policy.kind() == PolicyKind::Tabular) {
    policy.set_params(base->log_prob_table());
    return;
  }
  // Distillation: descend KL(a || pi) with its exact gradient -sum_x a(x) grad log pi(x).
  TargetModel target(TargetKind::GdcDistributional, std::move(base),
                     [](std::span<const Token>) { return 0.0; });
  target.set_exact_log_z(0.0);
  AdamState adam;
  std::vector<double> params(policy.params().begin(), policy.params().end());
  for (int i = 0; i < distill_iterations; ++i) {
    const auto grad = dpg_gradient_exact(policy, target);
    adam_step(adam, params, grad, 0.1);
    policy.set_params(params);
  }
}

}  // namespace fdpg
