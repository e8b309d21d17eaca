#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fdpg/divergence.hpp"
#include "fdpg/policy.hpp"
#include "fdpg/targets.hpp"

// Brute-force reference computations. Nothing here calls into the estimator or
// the symmetrical divergence evaluator; only f, f', f(0), f'(inf), pi and P
// are used.
namespace fdpg::oracle {

// E_{x~p2}[f(p1(x) / p2(x))] + f'(inf) p1(p2 = 0), with Kahan summation.
ExtendedReal divergence_by_enumeration(const Generator& g, const FiniteDistribution& p1,
                                       const FiniteDistribution& p2);
ExtendedReal divergence_by_enumeration(DivergenceKind kind, const FiniteDistribution& p1,
                                       const FiniteDistribution& p2);

// Central differences (objective(x + eps e_j) - objective(x - eps e_j)) / (2 eps).
// Throws Error naming the coordinate if the objective is not finite there.
std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& objective,
    std::span<const double> params, double eps);

// sum_x mass(x) phi(x), where support ids are sequence indices of space.
double exact_feature_moment(const FiniteDistribution& dist, const FeatureFn& phi,
                            const Space& space);

struct OracleReport {
  std::string quantity;
  double oracle_value = 0.0;
  double primary_value = 0.0;
  double abs_error = 0.0;
  double rel_error = 0.0;
  double tolerance = 0.0;
  bool relative = false;  // tolerance applies to rel_error instead of abs_error
  bool pass = false;
};

OracleReport compare(std::string quantity, double oracle_value, double primary_value,
                     double tolerance, bool relative = false);
// Threshold check: pass iff value <= bound (oracle_value holds the bound).
OracleReport check_at_most(std::string quantity, double value, double bound);
// Vector comparison by relative L2 error ||primary - oracle|| / max(||oracle||, floor).
OracleReport compare_relative_l2(std::string quantity, std::span<const double> oracle_value,
                                 std::span<const double> primary_value, double tolerance,
                                 double floor = 1e-12);
// Vector comparison by max absolute error.
OracleReport compare_max_abs(std::string quantity, std::span<const double> oracle_value,
                             std::span<const double> primary_value, double tolerance);

// Header: quantity,oracle_value,primary_value,abs_error,rel_error,tolerance,tolerance_kind,pass
void write_reports_csv(std::ostream& out, std::span<const OracleReport> reports);

}  // namespace fdpg::oracle
