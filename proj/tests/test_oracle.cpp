#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "fdpg/errors.hpp"
#include "fdpg/estimator.hpp"
#include "fdpg/oracle.hpp"
#include "test_util.hpp"

using namespace fdpg;

TEST(OracleDivergence, IdenticalIsZero) {
  const auto u = FiniteDistribution::uniform(5);
  for (auto kind : kAllDivergenceKinds) {
    EXPECT_NEAR(oracle::divergence_by_enumeration(kind, u, u).value(), 0.0, 1e-15);
  }
}

TEST(OracleDivergence, ForwardKLHandValue) {
  // Forward KL from pi = (0.5, 0.5) to p = (0.7, 0.3): KL(p || pi).
  const FiniteDistribution pi({0.5, 0.5});
  const FiniteDistribution p({0.7, 0.3});
  const double want = 0.7 * std::log(1.4) + 0.3 * std::log(0.6);
  EXPECT_NEAR(oracle::divergence_by_enumeration(DivergenceKind::ForwardKL, pi, p).value(), want, 1e-15);
  EXPECT_NEAR(want, 0.08228, 1e-5);
}

TEST(OracleDivergence, TotalVariationDisjoint) {
  const FiniteDistribution p({1.0, 0.0});
  const FiniteDistribution q({0.0, 1.0});
  EXPECT_NEAR(oracle::divergence_by_enumeration(DivergenceKind::TotalVariation, p, q).value(), 1.0, 1e-15);
}

TEST(OracleDivergence, DualPathAgreement) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng() % 30;
    const auto p = test::random_distribution(rng, n, trial % 2 ? 0.25 : 0.0);
    const auto q = test::random_distribution(rng, n, trial % 3 ? 0.0 : 0.25);
    for (auto kind : kAllDivergenceKinds) {
      const ExtendedReal a = oracle::divergence_by_enumeration(kind, p, q);
      const ExtendedReal b = f_divergence_exact(Generator(kind), p, q);
      ASSERT_EQ(a.is_infinite(), b.is_infinite());
      if (a.is_finite()) EXPECT_NEAR(a.value(), b.value(), 1e-10);
    }
  }
}

TEST(FiniteDifference, Quadratic) {
  const std::vector<double> theta = {1.0, -2.0};
  const auto g = oracle::finite_difference_gradient(
      [](std::span<const double> x) { return x[0] * x[0] + x[1] * x[1]; }, theta, 1e-4);
  EXPECT_NEAR(g[0], 2.0, 1e-8);
  EXPECT_NEAR(g[1], -4.0, 1e-8);
}

TEST(FiniteDifference, SecondOrderConvergence) {
  const std::vector<double> theta = {0.3};
  auto f = [](std::span<const double> x) { return std::sin(3.0 * x[0]); };
  const double exact = 3.0 * std::cos(0.9);
  const double e1 = std::abs(oracle::finite_difference_gradient(f, theta, 1e-2)[0] - exact);
  const double e2 = std::abs(oracle::finite_difference_gradient(f, theta, 5e-3)[0] - exact);
  EXPECT_NEAR(e1 / e2, 4.0, 0.05);
}

TEST(FiniteDifference, NonFiniteObjectiveNamesCoordinate) {
  const std::vector<double> theta = {1.0, 0.0};
  try {
    oracle::finite_difference_gradient(
        [](std::span<const double> x) { return x[1] > 0.0 ? std::log(-1.0) : 0.0; }, theta, 1e-3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate 1"), std::string::npos);
  }
}

TEST(FiniteDifference, MatchesExactDivergenceGradient) {
  std::mt19937_64 rng(2);
  const Space s(2, 2);
  auto base = std::make_shared<TabularPolicy>(s, test::random_logits(rng, 4));
  auto t = rlkl_target(base, test::contains_token(1), 1.0);
  const auto p = normalized_target(t, exact_log_partition(t));
  TabularPolicy pi(s, test::random_logits(rng, 4));
  const Generator g(DivergenceKind::JensenShannon);
  auto probe = pi.clone();
  const auto fd = oracle::finite_difference_gradient(
      [&](std::span<const double> th) {
        probe->set_params(th);
        return f_divergence_exact(g, exact_distribution(*probe), p).to_double();
      },
      pi.params(), 1e-5);
  const auto exact = fdpg_gradient_exact(g, pi, t);
  const auto report = oracle::compare_relative_l2("grad", fd, exact, 1e-6);
  EXPECT_TRUE(report.pass) << report.rel_error;
}

TEST(FeatureMoment, Examples) {
  const Space s(4, 3);
  const auto u = FiniteDistribution::uniform(64);
  EXPECT_NEAR(oracle::exact_feature_moment(u, test::constant_feature(1.0), s), 1.0, 1e-15);
  EXPECT_NEAR(oracle::exact_feature_moment(u, test::contains_token(3), s), 37.0 / 64.0, 1e-15);
}

TEST(FeatureMoment, FittedTargetMatchesDesired) {
  const auto a = test::uniform_tabular(4, 3);
  const auto lambda = fit_lambda(*a, {{test::contains_token(3), 0.3}}, 1e-10);
  auto t = gdc_dist_target(a, {{test::contains_token(3), lambda[0]}});
  const auto p = normalized_target(t, exact_log_partition(t));
  EXPECT_NEAR(oracle::exact_feature_moment(p, test::contains_token(3), a->space()), 0.3, 1e-10);
}

TEST(Reports, PassFlagMatchesTolerance) {
  EXPECT_TRUE(oracle::compare("x", 1.0, 1.0 + 1e-9, 1e-8).pass);
  EXPECT_FALSE(oracle::compare("x", 1.0, 1.0 + 1e-7, 1e-8).pass);
  EXPECT_TRUE(oracle::compare("x", 100.0, 101.0, 0.02, true).pass);
  EXPECT_TRUE(oracle::check_at_most("x", 0.4, 0.5).pass);
  EXPECT_FALSE(oracle::check_at_most("x", 0.6, 0.5).pass);
  const std::vector<double> a = {1.0, 2.0}, b = {1.0, 2.1};
  EXPECT_FALSE(oracle::compare_max_abs("v", a, b, 0.05).pass);
  EXPECT_TRUE(oracle::compare_max_abs("v", a, b, 0.2).pass);
}

TEST(Reports, CsvSchema) {
  const std::vector<oracle::OracleReport> reports = {oracle::compare("q", 1.0, 1.0, 0.1)};
  std::ostringstream out;
  oracle::write_reports_csv(out, reports);
  const std::string csv = out.str();
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "quantity,oracle_value,primary_value,abs_error,rel_error,tolerance,tolerance_kind,pass");
  EXPECT_NE(csv.find("\"q\",1,1,0,0,0.10000000000000001,abs,true"), std::string::npos);
}
