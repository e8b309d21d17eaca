#include "fdpg/divergence.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>

#include "fdpg/errors.hpp"
#include "fdpg/numeric.hpp"

namespace fdpg {

namespace {

constexpr double kLn2 = std::numbers::ln2;

}  // namespace

std::string ExtendedReal::to_string() const {
  if (infinite_) return "inf";
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value_);
  return std::string(buf, end);
}

std::string_view short_name(DivergenceKind kind) {
  switch (kind) {
    case DivergenceKind::ForwardKL: return "kl";
    case DivergenceKind::ReverseKL: return "rkl";
    case DivergenceKind::TotalVariation: return "tv";
    case DivergenceKind::JensenShannon: return "js";
    case DivergenceKind::SquaredHellinger: return "hellinger";
    case DivergenceKind::ChiSquared: return "chi2";
    case DivergenceKind::LeCam: return "lecam";
  }
  return "?";
}

std::string_view display_name(DivergenceKind kind) {
  switch (kind) {
    case DivergenceKind::ForwardKL: return "forward KL";
    case DivergenceKind::ReverseKL: return "reverse KL";
    case DivergenceKind::TotalVariation: return "total variation";
    case DivergenceKind::JensenShannon: return "Jensen-Shannon";
    case DivergenceKind::SquaredHellinger: return "squared Hellinger";
    case DivergenceKind::ChiSquared: return "chi-squared";
    case DivergenceKind::LeCam: return "Le Cam";
  }
  return "?";
}

DivergenceKind parse_divergence_kind(std::string_view name) {
  for (DivergenceKind k : kAllDivergenceKinds) {
    if (short_name(k) == name) return k;
  }
  if (name == "fkl" || name == "forward-kl") return DivergenceKind::ForwardKL;
  if (name == "reverse-kl") return DivergenceKind::ReverseKL;
  throw ValidationError("unknown divergence kind '" + std::string(name) +
                        "' (expected kl, rkl, tv, js, hellinger, chi2 or lecam)");
}

double Generator::base_f(double t) const {
  switch (kind_) {
    case DivergenceKind::ForwardKL: return -std::log(t);
    case DivergenceKind::ReverseKL: return t * std::log(t);
    case DivergenceKind::TotalVariation: return 0.5 * std::abs(1.0 - t);
    case DivergenceKind::JensenShannon:
      return t * (kLn2 - std::log1p(1.0 / t)) + (kLn2 - std::log1p(t));
    case DivergenceKind::SquaredHellinger: {
      const double d = 1.0 - std::sqrt(t);
      return d * d;
    }
    case DivergenceKind::ChiSquared: return (t - 1.0) * (t - 1.0);
    case DivergenceKind::LeCam: return (1.0 - t) / (2.0 * t + 2.0);
  }
  return 0.0;
}

double Generator::base_f_prime(double t) const {
  switch (kind_) {
    case DivergenceKind::ForwardKL: return -1.0 / t;
    case DivergenceKind::ReverseKL: return std::log(t) + 1.0;
    case DivergenceKind::TotalVariation:
      // Ratios within rounding of the kink take the subgradient 0.
      if (std::abs(t - 1.0) <= 64.0 * std::numeric_limits<double>::epsilon()) return 0.0;
      return t > 1.0 ? 0.5 : -0.5;
    case DivergenceKind::JensenShannon: return kLn2 - std::log1p(1.0 / t);
    case DivergenceKind::SquaredHellinger: return 1.0 - 1.0 / std::sqrt(t);
    case DivergenceKind::ChiSquared: return 2.0 * (t - 1.0);
    case DivergenceKind::LeCam: return -1.0 / ((1.0 + t) * (1.0 + t));
  }
  return 0.0;
}

ExtendedReal Generator::base_f_at_zero() const {
  switch (kind_) {
    case DivergenceKind::ForwardKL: return ExtendedReal::infinity();
    case DivergenceKind::ReverseKL: return 0.0;
    case DivergenceKind::TotalVariation: return 0.5;
    case DivergenceKind::JensenShannon: return kLn2;
    case DivergenceKind::SquaredHellinger: return 1.0;
    case DivergenceKind::ChiSquared: return 1.0;
    case DivergenceKind::LeCam: return 0.5;
  }
  return 0.0;
}

ExtendedReal Generator::base_f_prime_at_inf() const {
  switch (kind_) {
    case DivergenceKind::ForwardKL: return 0.0;
    case DivergenceKind::ReverseKL: return ExtendedReal::infinity();
    case DivergenceKind::TotalVariation: return 0.5;
    case DivergenceKind::JensenShannon: return kLn2;
    case DivergenceKind::SquaredHellinger: return 1.0;
    case DivergenceKind::ChiSquared: return ExtendedReal::infinity();
    case DivergenceKind::LeCam: return 0.0;
  }
  return 0.0;
}

double Generator::f(double t) const {
  const double base = perspective_ ? t * base_f(1.0 / t) : base_f(t);
  if (shift_ == 0.0) return base;
  return base - shift_ * (t - 1.0);
}

double Generator::f_prime(double t) const {
  if (std::isinf(t)) return f_prime_at_inf().to_double();
  double base;
  if (perspective_) {
    const double s = 1.0 / t;
    base = base_f(s) - base_f_prime(s) * s;
  } else {
    base = base_f_prime(t);
  }
  return base - shift_;
}

ExtendedReal Generator::f_at_zero() const {
  const ExtendedReal base = perspective_ ? base_f_prime_at_inf() : base_f_at_zero();
  return base + ExtendedReal(shift_);
}

ExtendedReal Generator::f_prime_at_inf() const {
  const ExtendedReal base = perspective_ ? base_f_at_zero() : base_f_prime_at_inf();
  return base + ExtendedReal(-shift_);
}

Generator Generator::perspective() const {
  // t f(1/t) with f = h - s (t - 1) gives h*(t) + s (t - 1).
  Generator g = *this;
  g.perspective_ = !perspective_;
  g.shift_ = -shift_;
  return g;
}

Generator Generator::shifted(double b) const {
  Generator g = *this;
  g.shift_ += b;
  return g;
}

std::string Generator::name() const {
  std::string n(display_name(kind_));
  if (perspective_) n = "perspective(" + n + ")";
  if (shift_ != 0.0) n += " shifted by " + ExtendedReal(shift_).to_string();
  return n;
}

Generator make_generator(DivergenceKind kind) { return Generator(kind); }

Generator perspective(const Generator& g) { return g.perspective(); }

FiniteDistribution::FiniteDistribution(std::vector<double> mass)
    : support_(mass.size()), mass_(std::move(mass)) {
  for (std::size_t i = 0; i < support_.size(); ++i) support_[i] = i;
  for (double m : mass_) {
    if (!(m >= 0.0) || !std::isfinite(m)) throw ValidationError("negative or non-finite mass");
  }
  const double total = compensated_sum(mass_);
  if (std::abs(total - 1.0) > 1e-12) {
    throw ValidationError("masses sum to " + ExtendedReal(total).to_string() + ", not 1");
  }
}

FiniteDistribution::FiniteDistribution(std::vector<std::size_t> support,
                                       std::vector<double> mass)
    : FiniteDistribution(std::move(mass)) {
  if (support.size() != mass_.size()) {
    throw StructuralError("support and mass lengths differ");
  }
  support_ = std::move(support);
}

FiniteDistribution FiniteDistribution::from_weights(std::vector<double> weights) {
  const double total = compensated_sum(weights);
  if (!(total > 0.0)) throw ValidationError("weights must have positive total");
  for (double& w : weights) w /= total;
  // Re-normalize once more so the compensated sum lands on 1.
  const double again = compensated_sum(weights);
  for (double& w : weights) w /= again;
  return FiniteDistribution(std::move(weights));
}

FiniteDistribution FiniteDistribution::uniform(std::size_t n) {
  return FiniteDistribution(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

bool FiniteDistribution::same_support(const FiniteDistribution& other) const {
  return support_ == other.support_;
}

ExtendedReal f_divergence_exact(const Generator& g, const FiniteDistribution& p1,
                                const FiniteDistribution& p2) {
  if (!p1.same_support(p2)) {
    throw StructuralError("f_divergence_exact: distributions have different supports");
  }
  CompensatedSum common;
  CompensatedSum p2_where_p1_zero;
  CompensatedSum p1_where_p2_zero;
  for (std::size_t i = 0; i < p1.size(); ++i) {
    const double a = p1[i];
    const double b = p2[i];
    if (a > 0.0 && b > 0.0) {
      common.add(b * g.f(a / b));
    } else if (a == 0.0 && b > 0.0) {
      p2_where_p1_zero.add(b);
    } else if (b == 0.0 && a > 0.0) {
      p1_where_p2_zero.add(a);
    }
  }
  ExtendedReal total = ExtendedReal(common.value()) +
                       g.f_at_zero().scaled_by(p2_where_p1_zero.value()) +
                       g.f_prime_at_inf().scaled_by(p1_where_p2_zero.value());
  if (total.is_finite() && total.value() < 0.0) total = ExtendedReal(0.0);
  return total;
}

double pseudo_reward(const Generator& g, double pi_x, double p_x) {
  if (!(pi_x > 0.0)) throw ValidationError("pseudo_reward: pi(x) must be positive");
  if (p_x < 0.0) throw ValidationError("pseudo_reward: p(x) must be non-negative");
  if (p_x == 0.0) return pseudo_reward_from_log_ratio(g, std::numeric_limits<double>::infinity());
  return -g.f_prime(pi_x / p_x);
}

double pseudo_reward_from_log_ratio(const Generator& g, double log_ratio) {
  if (log_ratio == std::numeric_limits<double>::infinity()) {
    const ExtendedReal at_inf = g.f_prime_at_inf();
    if (at_inf.is_infinite()) {
      throw InfinitePseudoRewardError(
          "infinite pseudo-reward: " + std::string(display_name(g.kind())) +
          " has f'(inf) = inf, but the target assigns zero mass to a sequence the policy "
          "can generate (support violation)");
    }
    return -at_inf.value();
  }
  const double t = std::exp(log_ratio);
  if (std::isinf(t) && g.kind() == DivergenceKind::ReverseKL && !g.is_perspective()) {
    // log t + 1 stays finite even when t overflows.
    return -(log_ratio + 1.0 - g.shift());
  }
  return -g.f_prime(t);
}

}  // namespace fdpg
