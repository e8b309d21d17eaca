#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "fdpg/divergence.hpp"
#include "fdpg/errors.hpp"
#include "fdpg/numeric.hpp"
#include "test_util.hpp"

using namespace fdpg;

namespace {

const double kLog2 = std::log(2.0);

struct TableRow {
  DivergenceKind kind;
  double (*f)(double);
  double (*fp)(double);
  double f0;     // +inf encoded as INFINITY
  double fpinf;  // +inf encoded as INFINITY
};

double inf() { return std::numeric_limits<double>::infinity(); }

std::vector<TableRow> closed_forms() {
  return {
      {DivergenceKind::ForwardKL, [](double t) { return -std::log(t); },
       [](double t) { return -1.0 / t; }, inf(), 0.0},
      {DivergenceKind::ReverseKL, [](double t) { return t * std::log(t); },
       [](double t) { return std::log(t) + 1.0; }, 0.0, inf()},
      {DivergenceKind::TotalVariation, [](double t) { return 0.5 * std::abs(1.0 - t); },
       [](double t) { return t < 1.0 ? -0.5 : (t > 1.0 ? 0.5 : 0.0); }, 0.5, 0.5},
      {DivergenceKind::JensenShannon,
       [](double t) { return t * std::log(2.0 * t / (t + 1.0)) + std::log(2.0 / (t + 1.0)); },
       [](double t) { return std::log(2.0 * t / (t + 1.0)); }, std::log(2.0), std::log(2.0)},
      {DivergenceKind::SquaredHellinger, [](double t) { return std::pow(1.0 - std::sqrt(t), 2); },
       [](double t) { return 1.0 - 1.0 / std::sqrt(t); }, 1.0, 1.0},
      {DivergenceKind::ChiSquared, [](double t) { return (t - 1.0) * (t - 1.0); },
       [](double t) { return 2.0 * (t - 1.0); }, 1.0, inf()},
      {DivergenceKind::LeCam, [](double t) { return (1.0 - t) / (2.0 * t + 2.0); },
       [](double t) { return -1.0 / ((1.0 + t) * (1.0 + t)); }, 0.5, 0.0},
  };
}

void expect_extended(ExtendedReal got, double want) {
  if (std::isinf(want)) {
    EXPECT_TRUE(got.is_infinite());
  } else {
    ASSERT_TRUE(got.is_finite());
    EXPECT_NEAR(got.value(), want, 1e-12);
  }
}

}  // namespace

TEST(GeneratorTable, MatchesClosedForms) {
  for (const auto& row : closed_forms()) {
    const Generator g(row.kind);
    SCOPED_TRACE(g.name());
    for (double t : {0.5, 1.0, 2.0}) {
      EXPECT_NEAR(g.f(t), row.f(t), 1e-12);
      EXPECT_NEAR(g.f_prime(t), row.fp(t), 1e-12);
    }
    expect_extended(g.f_at_zero(), row.f0);
    expect_extended(g.f_prime_at_inf(), row.fpinf);
  }
}

TEST(GeneratorTable, NamedConstants) {
  EXPECT_EQ(Generator(DivergenceKind::ForwardKL).f_prime_at_inf(), ExtendedReal(0.0));
  EXPECT_NEAR(Generator(DivergenceKind::JensenShannon).f_prime_at_inf().value(), kLog2, 1e-15);
  EXPECT_EQ(Generator(DivergenceKind::SquaredHellinger).f_prime_at_inf(), ExtendedReal(1.0));
}

TEST(GeneratorTable, VanishesAtOne) {
  for (auto kind : kAllDivergenceKinds) EXPECT_EQ(Generator(kind).f(1.0), 0.0);
}

TEST(GeneratorTable, Convex) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  for (auto kind : kAllDivergenceKinds) {
    const Generator g(kind);
    for (int i = 0; i < 1000; ++i) {
      double v[3] = {std::exp(u(rng)), std::exp(u(rng)), std::exp(u(rng))};
      std::sort(v, v + 3);
      const double a = v[0], b = v[1], c = v[2];
      if (!(a < b && b < c)) continue;
      const double chord = ((c - b) * g.f(a) + (b - a) * g.f(c)) / (c - a);
      EXPECT_LE(g.f(b), chord + 1e-12 * std::max(1.0, std::abs(chord))) << g.name();
    }
  }
}

TEST(GeneratorTable, BoundaryConstantsAreNumericalLimits) {
  const double t = 1e-14;
  for (auto kind : kAllDivergenceKinds) {
    const Generator g(kind);
    SCOPED_TRACE(g.name());
    const double at_zero = g.f(t);
    const double slope = t * g.f(1.0 / t);
    if (g.f_at_zero().is_infinite()) {
      EXPECT_GT(at_zero, 20.0);
    } else {
      EXPECT_NEAR(at_zero, g.f_at_zero().value(), 1e-6 * std::max(1.0, g.f_at_zero().value()));
    }
    if (g.f_prime_at_inf().is_infinite()) {
      EXPECT_GT(slope, 20.0);
    } else {
      EXPECT_NEAR(slope, g.f_prime_at_inf().value(), 1e-6 * std::max(1.0, g.f_prime_at_inf().value()));
    }
  }
}

TEST(Perspective, ForwardKLBecomesReverseKL) {
  const Generator p = perspective(Generator(DivergenceKind::ForwardKL));
  const Generator rkl(DivergenceKind::ReverseKL);
  for (double t : {0.1, 0.5, 2.0, 7.0}) {
    EXPECT_NEAR(p.f(t), t * std::log(t), 1e-14);
    EXPECT_NEAR(p.f_prime(t), rkl.f_prime(t), 1e-14);
  }
  EXPECT_TRUE(p.f_prime_at_inf().is_infinite());
  EXPECT_EQ(p.f_at_zero(), ExtendedReal(0.0));
}

TEST(Perspective, IsAnInvolution) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (auto kind : kAllDivergenceKinds) {
    const Generator g(kind);
    const Generator gg = g.perspective().perspective();
    for (int i = 0; i < 10; ++i) {
      const double t = std::exp(u(rng));
      EXPECT_NEAR(gg.f(t), g.f(t), 1e-12 * std::max(1.0, std::abs(g.f(t))));
      EXPECT_NEAR(gg.f_prime(t), g.f_prime(t), 1e-12 * std::max(1.0, std::abs(g.f_prime(t))));
    }
    EXPECT_EQ(gg.f_at_zero(), g.f_at_zero());
    EXPECT_EQ(gg.f_prime_at_inf(), g.f_prime_at_inf());
  }
}

TEST(Perspective, TotalVariationIsSelfPerspective) {
  const Generator tv(DivergenceKind::TotalVariation);
  for (double t : {0.5, 2.0}) EXPECT_DOUBLE_EQ(tv.perspective().f(t), tv.f(t));
}

TEST(Perspective, SwapsBoundaryConstants) {
  for (auto kind : kAllDivergenceKinds) {
    const Generator g(kind);
    EXPECT_EQ(g.perspective().f_at_zero(), g.f_prime_at_inf());
    EXPECT_EQ(g.perspective().f_prime_at_inf(), g.f_at_zero());
  }
}

TEST(Parse, ShortNamesRoundTrip) {
  for (auto kind : kAllDivergenceKinds) EXPECT_EQ(parse_divergence_kind(short_name(kind)), kind);
  EXPECT_EQ(parse_divergence_kind("fkl"), DivergenceKind::ForwardKL);
  EXPECT_THROW(parse_divergence_kind("bogus"), ValidationError);
}

TEST(FiniteDistributionTest, Validation) {
  EXPECT_THROW(FiniteDistribution({0.5, 0.6}), ValidationError);
  EXPECT_THROW(FiniteDistribution({1.5, -0.5}), ValidationError);
  EXPECT_NO_THROW(FiniteDistribution({0.25, 0.75}));
  const auto d = FiniteDistribution::from_weights({1.0, 3.0});
  EXPECT_DOUBLE_EQ(d[1], 0.75);
  EXPECT_EQ(FiniteDistribution::uniform(4).size(), 4u);
}

TEST(FDivergenceExact, IdenticalDistributionsGiveZero) {
  const auto u = FiniteDistribution::uniform(8);
  for (auto kind : kAllDivergenceKinds) {
    EXPECT_NEAR(f_divergence_exact(Generator(kind), u, u).value(), 0.0, 1e-15);
  }
}

TEST(FDivergenceExact, DisjointSupports) {
  const FiniteDistribution p({0.5, 0.5, 0.0, 0.0});
  const FiniteDistribution q({0.0, 0.0, 0.3, 0.7});
  EXPECT_NEAR(f_divergence_exact(Generator(DivergenceKind::TotalVariation), p, q).value(), 1.0, 1e-15);
  // f(0) + f'(inf) = 2 log 2 for the tabulated JS generator.
  EXPECT_NEAR(f_divergence_exact(Generator(DivergenceKind::JensenShannon), p, q).value(), 2.0 * kLog2,
              1e-15);
  EXPECT_TRUE(f_divergence_exact(Generator(DivergenceKind::ForwardKL), p, q).is_infinite());
  EXPECT_TRUE(f_divergence_exact(Generator(DivergenceKind::ReverseKL), p, q).is_infinite());
}

TEST(FDivergenceExact, ForwardKLZeroMassSides) {
  const Generator fkl(DivergenceKind::ForwardKL);
  const FiniteDistribution a({0.7, 0.3, 0.0});
  const FiniteDistribution b({0.5, 0.3, 0.2});
  // Mass of the second argument where the first is zero is weighted by f(0) = inf.
  EXPECT_TRUE(f_divergence_exact(fkl, a, b).is_infinite());
  // Mass of the first argument where the second is zero is weighted by f'(inf) = 0.
  const ExtendedReal d = f_divergence_exact(fkl, b, a);
  ASSERT_TRUE(d.is_finite());
  EXPECT_NEAR(d.value(), 0.7 * std::log(0.7 / 0.5), 1e-15);
}

TEST(FDivergenceExact, MismatchedSupportsThrow) {
  const FiniteDistribution a({0, 1}, {0.5, 0.5});
  const FiniteDistribution b({0, 2}, {0.5, 0.5});
  EXPECT_THROW(f_divergence_exact(Generator(DivergenceKind::TotalVariation), a, b), StructuralError);
}

TEST(FDivergenceProperties, NonNegativeSymmetricBoundedSwap) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng() % 63;
    const auto p = test::random_distribution(rng, n, trial % 3 == 0 ? 0.3 : 0.0);
    const auto q = test::random_distribution(rng, n, trial % 5 == 0 ? 0.3 : 0.0);
    for (auto kind : kAllDivergenceKinds) {
      const Generator g(kind);
      const ExtendedReal pq = f_divergence_exact(g, p, q);
      const ExtendedReal swapped = f_divergence_exact(g.perspective(), q, p);
      if (pq.is_finite()) {
        EXPECT_GE(pq.value(), 0.0);
        ASSERT_TRUE(swapped.is_finite());
        EXPECT_NEAR(pq.value(), swapped.value(), 1e-10);
      } else {
        EXPECT_TRUE(swapped.is_infinite());
      }
    }
    const Generator tv(DivergenceKind::TotalVariation);
    const Generator js(DivergenceKind::JensenShannon);
    const Generator he(DivergenceKind::SquaredHellinger);
    EXPECT_NEAR(f_divergence_exact(tv, p, q).value(), f_divergence_exact(tv, q, p).value(), 1e-12);
    EXPECT_NEAR(f_divergence_exact(js, p, q).value(), f_divergence_exact(js, q, p).value(), 1e-12);
    EXPECT_LE(f_divergence_exact(tv, p, q).value(), 1.0 + 1e-12);
    EXPECT_LE(f_divergence_exact(js, p, q).value(), 2.0 * kLog2 + 1e-12);
    EXPECT_LE(f_divergence_exact(he, p, q).value(), 2.0 + 1e-12);
    for (auto kind : kAllDivergenceKinds) {
      EXPECT_NEAR(f_divergence_exact(Generator(kind), p, p).value(), 0.0, 1e-12);
    }
  }
}

TEST(PseudoReward, Examples) {
  EXPECT_DOUBLE_EQ(pseudo_reward(Generator(DivergenceKind::ForwardKL), 0.2, 0.2), 1.0);
  EXPECT_NEAR(pseudo_reward(Generator(DivergenceKind::JensenShannon), 0.2, 0.2), 0.0, 1e-15);
  EXPECT_EQ(pseudo_reward(Generator(DivergenceKind::ForwardKL), 0.2, 0.0), 0.0);
  EXPECT_THROW(pseudo_reward(Generator(DivergenceKind::ReverseKL), 0.2, 0.0), InfinitePseudoRewardError);
  EXPECT_THROW(pseudo_reward(Generator(DivergenceKind::ChiSquared), 0.2, 0.0), InfinitePseudoRewardError);
}

TEST(PseudoReward, ErrorNamesTheDivergence) {
  try {
    pseudo_reward(Generator(DivergenceKind::ReverseKL), 0.2, 0.0);
    FAIL();
  } catch (const InfinitePseudoRewardError& e) {
    EXPECT_NE(std::string(e.what()).find("reverse KL"), std::string::npos);
  }
}

TEST(PseudoReward, LogRatioMatchesDirect) {
  for (auto kind : kAllDivergenceKinds) {
    const Generator g(kind);
    for (double ratio : {0.25, 0.9, 1.7, 4.0}) {
      EXPECT_NEAR(pseudo_reward_from_log_ratio(g, std::log(ratio)), -g.f_prime(ratio), 1e-12);
    }
  }
}

TEST(ShiftedGenerator, PreservesDivergenceAndShiftsReward) {
  std::mt19937_64 rng(5);
  for (auto kind : kAllDivergenceKinds) {
    const Generator g(kind);
    const Generator h = g.shifted(1.0);
    for (int i = 0; i < 50; ++i) {
      const auto p = test::random_distribution(rng, 6, 0.0);
      const auto q = test::random_distribution(rng, 6, 0.0);
      EXPECT_NEAR(f_divergence_exact(h, p, q).value(), f_divergence_exact(g, p, q).value(), 1e-10);
    }
    for (double t : {0.5, 2.0}) {
      EXPECT_NEAR(pseudo_reward(h, t, 1.0) - pseudo_reward(g, t, 1.0), 1.0, 1e-12);
    }
  }
}

TEST(ExtendedRealTest, Conventions) {
  const auto inf = ExtendedReal::infinity();
  EXPECT_TRUE((ExtendedReal(2.0) + inf).is_infinite());
  EXPECT_EQ(inf.scaled_by(0.0), ExtendedReal(0.0));
  EXPECT_EQ(inf.to_string(), "inf");
  EXPECT_EQ(ExtendedReal(0.5).to_string(), "0.5");
}

TEST(NumericTest, LogSumExpAndCompensatedSum) {
  std::vector<double> v = {1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp(v), 1000.0 + kLog2, 1e-12);
  std::vector<double> all_neg = {-inf(), -inf()};
  EXPECT_EQ(log_sum_exp(all_neg), -inf());
  std::vector<double> s(10, 0.1);
  EXPECT_NEAR(compensated_sum(s), 1.0, 1e-16);
}
