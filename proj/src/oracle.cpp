#include "fdpg/oracle.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

#include "fdpg/errors.hpp"

namespace fdpg::oracle {

namespace {

// Plain Kahan summation, deliberately separate from the library's compensated sum.
struct Kahan {
  double sum = 0.0;
  double c = 0.0;
  void add(double x) {
    const double y = x - c;
    const double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }
};

double l2(std::span<const double> v) {
  Kahan s;
  for (double x : v) s.add(x * x);
  return std::sqrt(s.sum);
}

}  // namespace

ExtendedReal divergence_by_enumeration(const Generator& g, const FiniteDistribution& p1,
                                       const FiniteDistribution& p2) {
  if (p1.size() != p2.size()) throw StructuralError("oracle: support sizes differ");
  Kahan expectation;
  bool infinite = false;
  Kahan residual_mass;  // p1(p2 = 0)
  for (std::size_t i = 0; i < p2.size(); ++i) {
    const double q = p2[i];
    const double p = p1[i];
    if (q > 0.0) {
      if (p > 0.0) {
        expectation.add(q * g.f(p / q));
      } else {
        const ExtendedReal f0 = g.f_at_zero();
        if (f0.is_infinite()) {
          infinite = true;
        } else {
          expectation.add(q * f0.value());
        }
      }
    } else {
      residual_mass.add(p);
    }
  }
  if (infinite) return ExtendedReal::infinity();
  ExtendedReal total(expectation.sum);
  if (residual_mass.sum > 0.0) {
    const ExtendedReal slope = g.f_prime_at_inf();
    if (slope.is_infinite()) return ExtendedReal::infinity();
    total = ExtendedReal(expectation.sum + slope.value() * residual_mass.sum);
  }
  return total;
}

ExtendedReal divergence_by_enumeration(DivergenceKind kind, const FiniteDistribution& p1,
                                       const FiniteDistribution& p2) {
  return divergence_by_enumeration(Generator(kind), p1, p2);
}

std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& objective,
    std::span<const double> params, double eps) {
  std::vector<double> x(params.begin(), params.end());
  std::vector<double> grad(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double saved = x[j];
    x[j] = saved + eps;
    const double up = objective(x);
    x[j] = saved - eps;
    const double down = objective(x);
    x[j] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error("finite_difference_gradient: objective is not finite around coordinate " +
                  std::to_string(j));
    }
    grad[j] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double exact_feature_moment(const FiniteDistribution& dist, const FeatureFn& phi,
                            const Space& space) {
  Kahan s;
  Sequence x(static_cast<std::size_t>(space.length()));
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] == 0.0) continue;
    space.decode(dist.support()[i], x);
    s.add(dist[i] * phi(x));
  }
  return s.sum;
}

OracleReport compare(std::string quantity, double oracle_value, double primary_value,
                     double tolerance, bool relative) {
  OracleReport r;
  r.quantity = std::move(quantity);
  r.oracle_value = oracle_value;
  r.primary_value = primary_value;
  if (std::isinf(oracle_value) && oracle_value == primary_value) {
    r.abs_error = 0.0;
  } else {
    r.abs_error = std::abs(primary_value - oracle_value);
  }
  r.rel_error = oracle_value != 0.0 ? r.abs_error / std::abs(oracle_value) : r.abs_error;
  r.tolerance = tolerance;
  r.relative = relative;
  r.pass = (relative ? r.rel_error : r.abs_error) <= tolerance;
  return r;
}

OracleReport check_at_most(std::string quantity, double value, double bound) {
  OracleReport r;
  r.quantity = std::move(quantity);
  r.oracle_value = bound;
  r.primary_value = value;
  r.abs_error = std::max(0.0, value - bound);
  r.rel_error = bound != 0.0 ? r.abs_error / std::abs(bound) : r.abs_error;
  r.tolerance = 0.0;
  r.pass = value <= bound;
  return r;
}

OracleReport compare_relative_l2(std::string quantity, std::span<const double> oracle_value,
                                 std::span<const double> primary_value, double tolerance,
                                 double floor) {
  std::vector<double> diff(oracle_value.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = primary_value[i] - oracle_value[i];
  OracleReport r;
  r.quantity = std::move(quantity);
  r.oracle_value = l2(oracle_value);
  r.primary_value = l2(primary_value);
  r.abs_error = l2(diff);
  r.rel_error = r.abs_error / std::max(r.oracle_value, floor);
  r.tolerance = tolerance;
  r.relative = true;
  r.pass = r.rel_error <= tolerance;
  return r;
}

OracleReport compare_max_abs(std::string quantity, std::span<const double> oracle_value,
                             std::span<const double> primary_value, double tolerance) {
  OracleReport r;
  r.quantity = std::move(quantity);
  r.oracle_value = l2(oracle_value);
  r.primary_value = l2(primary_value);
  for (std::size_t i = 0; i < oracle_value.size(); ++i) {
    r.abs_error = std::max(r.abs_error, std::abs(primary_value[i] - oracle_value[i]));
  }
  r.rel_error = r.oracle_value != 0.0 ? r.abs_error / r.oracle_value : r.abs_error;
  r.tolerance = tolerance;
  r.pass = r.abs_error <= tolerance;
  return r;
}

void write_reports_csv(std::ostream& out, std::span<const OracleReport> reports) {
  out << "quantity,oracle_value,primary_value,abs_error,rel_error,tolerance,tolerance_kind,pass\n";
  out << std::setprecision(17);
  for (const auto& r : reports) {
    out << '"' << r.quantity << "\"," << r.oracle_value << ',' << r.primary_value << ','
        << r.abs_error << ',' << r.rel_error << ',' << r.tolerance << ','
        << (r.relative ? "rel" : "abs") << ',' << (r.pass ? "true" : "false") << '\n';
  }
}

}  // namespace fdpg::oracle
