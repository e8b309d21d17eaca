#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fdpg/divergence.hpp"
#include "fdpg/policy.hpp"

namespace fdpg {

// A deterministic feature of a sequence. Binary features return 0 or 1.
struct FeatureFn {
  std::string name;
  std::function<double(std::span<const Token>)> eval;
  bool binary = false;

  double operator()(std::span<const Token> x) const { return eval(x); }
};

enum class TargetKind { GdcBinary, Rlkl, GdcDistributional, Conditional };

std::string_view target_kind_name(TargetKind kind);

// An unnormalized target P(x) = a(x | prefix) * exp(tilt(x)), where the tilt
// may be -inf to express a hard constraint. p(x) = P(x) / Z.
class TargetModel {
 public:
  using LogTilt = std::function<double(std::span<const Token>)>;

  TargetModel(TargetKind kind, std::shared_ptr<const SequencePolicy> base, LogTilt log_tilt,
              Sequence prefix = {}, std::uint64_t cap = kDefaultEnumerationCap);

  TargetKind kind() const { return kind_; }
  const SequencePolicy& base() const { return *base_; }
  std::shared_ptr<const SequencePolicy> base_ptr() const { return base_; }
  const Space& space() const { return base_->space(); }
  // Context the base policy is conditioned on (empty for unconditional targets).
  std::span<const Token> prefix() const { return prefix_; }

  // log P(x); -inf marks a zero-mass sequence.
  double log_score(std::span<const Token> x) const;
  // log P(x) for all x in index order (cached when the space is enumerable).
  std::span<const double> log_score_table() const;
  bool has_table() const { return !table_.empty(); }

  std::optional<double> exact_log_z() const { return exact_log_z_; }
  void set_exact_log_z(double log_z) { exact_log_z_ = log_z; }

  // True when some sequence has P(x) = 0. Without an enumerable table this is
  // answered from the kind: hard-constraint kinds are assumed to have zeros.
  bool has_zero_mass() const;

 private:
  TargetKind kind_;
  std::shared_ptr<const SequencePolicy> base_;
  LogTilt log_tilt_;
  Sequence prefix_;
  std::vector<double> table_;
  std::optional<double> exact_log_z_;
};

struct MomentSpec {
  FeatureFn feature;
  double desired = 0.0;
};

// Distribution tau over contexts plus a binary constraint b(x, c). Contexts
// are token prefixes fed to the policy.
struct ConditionalTask {
  std::vector<Sequence> contexts;
  FiniteDistribution context_dist;
  std::function<bool(std::span<const Token> x, std::span<const Token> context)> constraint;

  std::size_t context_index(std::span<const Token> c) const;
};

// P(x) = a(x) b(x). Throws ValidationError if b is not {0,1}-valued and
// DegenerateTargetError if no sequence satisfies b (checked on enumerable spaces).
TargetModel gdc_binary_target(std::shared_ptr<const SequencePolicy> a, const FeatureFn& b);

// P(x) = a(x) exp(r(x) / beta).
TargetModel rlkl_target(std::shared_ptr<const SequencePolicy> a, const FeatureFn& r, double beta);

// P(x) = a(x) exp(sum_i lambda_i phi_i(x)).
TargetModel gdc_dist_target(std::shared_ptr<const SequencePolicy> a,
                            const std::vector<std::pair<FeatureFn, double>>& lambdas);

struct FitLambdaOptions {
  int max_iterations = 200;
  std::uint64_t cap = kDefaultEnumerationCap;
  // Used only when the space is not enumerable: moments are then matched on
  // this many samples drawn from a.
  std::size_t sample_budget = 0;
  std::uint64_t seed = 0;
};

// Coefficients lambda with |E_{p_lambda}[phi_i] - desired_i| <= tol for all i,
// by damped Newton iteration on exact moments (the Jacobian is the feature
// covariance under p_lambda). Throws InfeasibleMomentError for desired moments
// outside the achievable range and ConvergenceError after max_iterations.
std::vector<double> fit_lambda(const SequencePolicy& a, const std::vector<MomentSpec>& specs,
                               double tol, const FitLambdaOptions& options = {});

// r(x) = log phi(x). Querying a point with phi(x) = 0 throws ValidationError.
FeatureFn reward_from_choice_model(const FeatureFn& phi);

// p_c(x) proportional to a(x | c) b(x, c).
TargetModel conditional_target(std::shared_ptr<const SequencePolicy> a, const ConditionalTask& task,
                               std::span<const Token> c);

// log sum_x P(x), also stored into the target. Throws CapacityError when the
// space cannot be enumerated.
double exact_log_partition(TargetModel& target, std::uint64_t cap = kDefaultEnumerationCap);

// p(x) for every x given log Z.
FiniteDistribution normalized_target(const TargetModel& target, double log_z);

}  // namespace fdpg
