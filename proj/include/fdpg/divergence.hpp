#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fdpg/extended_real.hpp"

namespace fdpg {

enum class DivergenceKind {
  ForwardKL,
  ReverseKL,
  TotalVariation,
  JensenShannon,
  SquaredHellinger,
  ChiSquared,
  LeCam,
};

inline constexpr DivergenceKind kAllDivergenceKinds[] = {
    DivergenceKind::ForwardKL,      DivergenceKind::ReverseKL,
    DivergenceKind::TotalVariation, DivergenceKind::JensenShannon,
    DivergenceKind::SquaredHellinger, DivergenceKind::ChiSquared,
    DivergenceKind::LeCam,
};

// Short CLI name ("kl", "rkl", "tv", "js", "hellinger", "chi2", "lecam").
std::string_view short_name(DivergenceKind kind);
// Human-readable name ("forward KL", "reverse KL", ...).
std::string_view display_name(DivergenceKind kind);
// Inverse of short_name; throws ValidationError on unknown names.
DivergenceKind parse_divergence_kind(std::string_view name);

// Convex generator f of an f-divergence D_f(pi || p), in the argument order
// where pi is the first argument.
//
// A generator is one of the seven tabulated base functions, optionally
// replaced by its perspective t * f(1/t), and shifted by a linear term
// -shift * (t - 1). The linear shift leaves every divergence value unchanged
// and moves the pseudo-reward by +shift.
class Generator {
 public:
  explicit Generator(DivergenceKind kind) : kind_(kind) {}

  DivergenceKind kind() const { return kind_; }
  bool is_perspective() const { return perspective_; }
  double shift() const { return shift_; }

  // f(t) for t in (0, inf).
  double f(double t) const;
  // f'(t) for t in (0, inf); at the TV kink t = 1 this is the subgradient 0.
  // t = +inf returns f'(inf) when finite.
  double f_prime(double t) const;
  // lim_{t->0} f(t).
  ExtendedReal f_at_zero() const;
  // lim_{t->0} t f(1/t), which also equals lim_{t->inf} f'(t).
  ExtendedReal f_prime_at_inf() const;

  // t * f(1/t). Swaps f_at_zero and f_prime_at_inf.
  Generator perspective() const;
  // f(t) - b (t - 1).
  Generator shifted(double b) const;

  std::string name() const;

 private:
  double base_f(double t) const;
  double base_f_prime(double t) const;
  ExtendedReal base_f_at_zero() const;
  ExtendedReal base_f_prime_at_inf() const;

  DivergenceKind kind_;
  bool perspective_ = false;
  double shift_ = 0.0;
};

Generator make_generator(DivergenceKind kind);
Generator perspective(const Generator& g);

// A probability vector over an ordered list of sequence identifiers.
class FiniteDistribution {
 public:
  FiniteDistribution() = default;
  // Support defaults to 0..n-1. Throws ValidationError on negative mass or a
  // total mass that is not 1 within 1e-12 (relative to the vector length).
  explicit FiniteDistribution(std::vector<double> mass);
  FiniteDistribution(std::vector<std::size_t> support, std::vector<double> mass);

  // Normalizes non-negative weights.
  static FiniteDistribution from_weights(std::vector<double> weights);
  static FiniteDistribution uniform(std::size_t n);

  std::size_t size() const { return mass_.size(); }
  std::span<const double> mass() const { return mass_; }
  double operator[](std::size_t i) const { return mass_[i]; }
  std::span<const std::size_t> support() const { return support_; }

  bool same_support(const FiniteDistribution& other) const;

 private:
  std::vector<std::size_t> support_;
  std::vector<double> mass_;
};

// D_f(p1 || p2) in the symmetrical form that splits the sum into the common
// support, p1 = 0 points (weighted by f(0)) and p2 = 0 points (weighted by
// f'(inf)), with 0 * inf = 0. Throws StructuralError on mismatched supports.
ExtendedReal f_divergence_exact(const Generator& g, const FiniteDistribution& p1,
                                const FiniteDistribution& p2);

// r = -f'(pi_x / p_x). For p_x = 0 this is -f'(inf); throws
// InfinitePseudoRewardError when f'(inf) = +inf.
double pseudo_reward(const Generator& g, double pi_x, double p_x);

// Same, from log pi(x) - log p(x) (may be +inf when p(x) = 0).
double pseudo_reward_from_log_ratio(const Generator& g, double log_ratio);

}  // namespace fdpg
