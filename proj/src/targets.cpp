#include "fdpg/targets.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "fdpg/errors.hpp"
#include "fdpg/numeric.hpp"

namespace fdpg {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

std::string_view target_kind_name(TargetKind kind) {
  switch (kind) {
    case TargetKind::GdcBinary: return "gdc-binary";
    case TargetKind::Rlkl: return "rlkl";
    case TargetKind::GdcDistributional: return "gdc-dist";
    case TargetKind::Conditional: return "conditional";
  }
  return "?";
}

TargetModel::TargetModel(TargetKind kind, std::shared_ptr<const SequencePolicy> base,
                         LogTilt log_tilt, Sequence prefix, std::uint64_t cap)
    : kind_(kind), base_(std::move(base)), log_tilt_(std::move(log_tilt)), prefix_(std::move(prefix)) {
  if (!base_) throw ValidationError("target needs a base policy");
  if (space().enumerable(cap)) {
    table_ = base_->log_prob_table(prefix_);
    for (auto it = enumerate_space(space(), cap).begin(); it.index() < table_.size(); ++it) {
      table_[it.index()] += log_tilt_(*it);
    }
  }
}

double TargetModel::log_score(std::span<const Token> x) const {
  if (!table_.empty()) {
    space().validate(x);
    return table_[space().index_of(x)];
  }
  const double tilt = log_tilt_(x);
  if (tilt == kNegInf) return kNegInf;
  return base_->log_prob(x, prefix_) + tilt;
}

std::span<const double> TargetModel::log_score_table() const {
  if (table_.empty()) space().require_enumerable();
  return table_;
}

bool TargetModel::has_zero_mass() const {
  if (!table_.empty()) {
    return std::any_of(table_.begin(), table_.end(), [](double v) { return v == kNegInf; });
  }
  return kind_ == TargetKind::GdcBinary || kind_ == TargetKind::Conditional;
}

std::size_t ConditionalTask::context_index(std::span<const Token> c) const {
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    if (std::equal(contexts[i].begin(), contexts[i].end(), c.begin(), c.end())) return i;
  }
  throw LookupError("unknown context");
}

TargetModel gdc_binary_target(std::shared_ptr<const SequencePolicy> a, const FeatureFn& b) {
  auto tilt = [b](std::span<const Token> x) {
    const double v = b(x);
    if (v == 1.0) return 0.0;
    if (v == 0.0) return kNegInf;
    throw ValidationError("binary constraint '" + b.name + "' returned a value outside {0, 1}");
  };
  TargetModel t(TargetKind::GdcBinary, std::move(a), tilt);
  if (t.has_table()) {
    const auto table = t.log_score_table();
    if (std::all_of(table.begin(), table.end(), [](double v) { return v == kNegInf; })) {
      throw DegenerateTargetError("constraint '" + b.name + "' is satisfied by no sequence");
    }
  }
  return t;
}

TargetModel rlkl_target(std::shared_ptr<const SequencePolicy> a, const FeatureFn& r, double beta) {
  if (!(beta > 0.0)) throw ValidationError("rlkl_target: beta must be positive");
  auto tilt = [r, beta](std::span<const Token> x) {
    const double v = r(x);
    if (!std::isfinite(v)) throw ValidationError("reward '" + r.name + "' is not finite");
    return v / beta;
  };
  return TargetModel(TargetKind::Rlkl, std::move(a), tilt);
}

TargetModel gdc_dist_target(std::shared_ptr<const SequencePolicy> a,
                            const std::vector<std::pair<FeatureFn, double>>& lambdas) {
  auto tilt = [lambdas](std::span<const Token> x) {
    double s = 0.0;
    for (const auto& [phi, lambda] : lambdas) {
      if (lambda != 0.0) s += lambda * phi(x);
    }
    return s;
  };
  return TargetModel(TargetKind::GdcDistributional, std::move(a), tilt);
}

namespace {

// Exponential-family tilt of a weighted point set: p_j ~ exp(log_w_j + lambda . phi_j).
struct MomentProblem {
  std::vector<double> log_weight;
  Eigen::MatrixXd features;  // rows: points, cols: features

  void moments(const Eigen::VectorXd& lambda, Eigen::VectorXd& mean, Eigen::MatrixXd& cov) const {
    const auto n = static_cast<Eigen::Index>(log_weight.size());
    Eigen::VectorXd logits(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      logits[j] = log_weight[static_cast<std::size_t>(j)] + features.row(j).dot(lambda);
    }
    const double lse = log_sum_exp(std::span<const double>(logits.data(), logits.size()));
    Eigen::VectorXd p = (logits.array() - lse).exp();
    p /= p.sum();
    mean = features.transpose() * p;
    const Eigen::MatrixXd centered = features.rowwise() - mean.transpose();
    cov = centered.transpose() * p.asDiagonal() * centered;
  }
};

// Checks desired against the achievable range of each feature, restricting
// to the face where earlier features sit on a boundary value.
void check_feasible(const MomentProblem& prob, const std::vector<MomentSpec>& specs) {
  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < prob.features.rows(); ++j) {
    if (prob.log_weight[static_cast<std::size_t>(j)] != kNegInf) active.push_back(j);
  }
  constexpr double kSlack = 1e-12;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (auto j : active) {
      lo = std::min(lo, prob.features(j, col));
      hi = std::max(hi, prob.features(j, col));
    }
    const double want = specs[i].desired;
    if (want < lo - kSlack || want > hi + kSlack) {
      throw InfeasibleMomentError("desired moment " + ExtendedReal(want).to_string() +
                                  " for feature '" + specs[i].feature.name +
                                  "' lies outside the achievable range [" +
                                  ExtendedReal(lo).to_string() + ", " +
                                  ExtendedReal(hi).to_string() + "]");
    }
    if (std::abs(want - lo) <= kSlack || std::abs(want - hi) <= kSlack) {
      const double face = std::abs(want - lo) <= kSlack ? lo : hi;
      std::erase_if(active, [&](Eigen::Index j) { return prob.features(j, col) != face; });
    }
  }
}

}  // namespace

std::vector<double> fit_lambda(const SequencePolicy& a, const std::vector<MomentSpec>& specs,
                               double tol, const FitLambdaOptions& options) {
  if (specs.empty()) return {};
  if (!(tol > 0.0)) throw ValidationError("fit_lambda: tol must be positive");
  const Space& space = a.space();
  const auto k = static_cast<Eigen::Index>(specs.size());

  MomentProblem prob;
  if (space.enumerable(options.cap)) {
    prob.log_weight = a.log_prob_table();
    prob.features.resize(static_cast<Eigen::Index>(prob.log_weight.size()), k);
    for (auto it = enumerate_space(space, options.cap).begin(); it.index() < prob.log_weight.size();
         ++it) {
      for (Eigen::Index i = 0; i < k; ++i) {
        prob.features(static_cast<Eigen::Index>(it.index()), i) =
            specs[static_cast<std::size_t>(i)].feature(*it);
      }
    }
  } else if (options.sample_budget > 0) {
    const auto draws = sample(a, {options.seed, StreamDomain::Initialization, 0},
                              options.sample_budget);
    prob.log_weight.assign(draws.size(), -std::log(static_cast<double>(draws.size())));
    prob.features.resize(static_cast<Eigen::Index>(draws.size()), k);
    for (std::size_t j = 0; j < draws.size(); ++j) {
      for (Eigen::Index i = 0; i < k; ++i) {
        prob.features(static_cast<Eigen::Index>(j), i) =
            specs[static_cast<std::size_t>(i)].feature(draws[j]);
      }
    }
  } else {
    space.require_enumerable(options.cap);
  }

  check_feasible(prob, specs);

  Eigen::VectorXd desired(k);
  for (Eigen::Index i = 0; i < k; ++i) desired[i] = specs[static_cast<std::size_t>(i)].desired;

  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  prob.moments(lambda, mean, cov);
  Eigen::VectorXd residual = desired - mean;

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    if (residual.lpNorm<Eigen::Infinity>() <= tol) {
      return std::vector<double>(lambda.data(), lambda.data() + k);
    }
    const double ridge = 1e-12 * std::max(1.0, cov.trace());
    const Eigen::MatrixXd jac = cov + ridge * Eigen::MatrixXd::Identity(k, k);
    const Eigen::VectorXd step = jac.ldlt().solve(residual);

    // Step halving until the residual norm decreases.
    double scale = 1.0;
    bool improved = false;
    for (int halving = 0; halving < 40; ++halving, scale *= 0.5) {
      const Eigen::VectorXd trial = lambda + scale * step;
      Eigen::VectorXd trial_mean;
      Eigen::MatrixXd trial_cov;
      prob.moments(trial, trial_mean, trial_cov);
      const Eigen::VectorXd trial_residual = desired - trial_mean;
      if (trial_residual.norm() < residual.norm()) {
        lambda = trial;
        mean = trial_mean;
        cov = trial_cov;
        residual = trial_residual;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  if (residual.lpNorm<Eigen::Infinity>() <= tol) {
    return std::vector<double>(lambda.data(), lambda.data() + k);
  }
  const double r = residual.lpNorm<Eigen::Infinity>();
  throw ConvergenceError("fit_lambda did not converge; max moment residual " +
                             ExtendedReal(r).to_string(),
                         r);
}

FeatureFn reward_from_choice_model(const FeatureFn& phi) {
  FeatureFn r;
  r.name = "log(" + phi.name + ")";
  r.eval = [phi](std::span<const Token> x) {
    const double v = phi(x);
    if (!(v > 0.0)) {
      throw ValidationError("choice-model reward log(" + phi.name +
                            ") is -inf at a queried sequence; use a hard-constraint target");
    }
    return std::log(v);
  };
  return r;
}

TargetModel conditional_target(std::shared_ptr<const SequencePolicy> a, const ConditionalTask& task,
                               std::span<const Token> c) {
  const std::size_t ci = task.context_index(c);
  Sequence context = task.contexts[ci];
  auto constraint = task.constraint;
  auto tilt = [constraint, context](std::span<const Token> x) {
    return constraint(x, context) ? 0.0 : kNegInf;
  };
  TargetModel t(TargetKind::Conditional, std::move(a), tilt, context);
  if (t.has_table()) {
    const auto table = t.log_score_table();
    if (std::all_of(table.begin(), table.end(), [](double v) { return v == kNegInf; })) {
      throw DegenerateTargetError("no continuation satisfies the constraint for context " +
                                  std::to_string(ci));
    }
  }
  return t;
}

double exact_log_partition(TargetModel& target, std::uint64_t cap) {
  target.space().require_enumerable(cap);
  const double log_z = log_sum_exp(target.log_score_table());
  target.set_exact_log_z(log_z);
  return log_z;
}

FiniteDistribution normalized_target(const TargetModel& target, double log_z) {
  const auto table = target.log_score_table();
  std::vector<double> mass(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) mass[i] = std::exp(table[i] - log_z);
  // Absorb the rounding of log_z so the masses sum to 1 within 1e-12.
  const double total = compensated_sum(mass);
  for (double& m : mass) m /= total;
  return FiniteDistribution(std::move(mass));
}

}  // namespace fdpg
