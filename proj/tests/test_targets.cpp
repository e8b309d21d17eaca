#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fdpg/errors.hpp"
#include "fdpg/numeric.hpp"
#include "fdpg/oracle.hpp"
#include "fdpg/targets.hpp"
#include "test_util.hpp"

using namespace fdpg;

namespace {

FeatureFn table_feature(std::vector<double> values) {
  return {"table",
          [values](std::span<const Token> x) { return values[x[0]]; },
          false};
}

double total_normalized_mass(const TargetModel& t) {
  double s = 0.0;
  for (double ls : t.log_score_table()) s += std::exp(ls - *t.exact_log_z());
  return s;
}

}  // namespace

TEST(GdcBinary, AlwaysSatisfiedIsBase) {
  const auto a = test::uniform_tabular(3, 2);
  auto t = gdc_binary_target(a, test::constant_feature(1.0));
  EXPECT_NEAR(exact_log_partition(t), 0.0, 1e-14);
  const auto p = normalized_target(t, 0.0);
  for (auto kind : kAllDivergenceKinds) {
    EXPECT_NEAR(f_divergence_exact(Generator(kind), exact_distribution(*a), p).value(), 0.0, 1e-14);
  }
}

TEST(GdcBinary, ContainsTokenPartition) {
  auto t = gdc_binary_target(test::uniform_tabular(4, 3), test::contains_token(3));
  EXPECT_NEAR(exact_log_partition(t), std::log(37.0 / 64.0), 1e-14);
  EXPECT_TRUE(t.has_zero_mass());
  EXPECT_NEAR(total_normalized_mass(t), 1.0, 1e-10);
}

TEST(GdcBinary, Errors) {
  const auto a = test::uniform_tabular(2, 2);
  EXPECT_THROW(gdc_binary_target(a, test::constant_feature(0.0)), DegenerateTargetError);
  const FeatureFn half{"half", [](std::span<const Token>) { return 0.5; }, false};
  EXPECT_THROW(gdc_binary_target(a, half), ValidationError);
}

TEST(Rlkl, ZeroRewardIsBase) {
  auto t = rlkl_target(test::uniform_tabular(3, 2), test::constant_feature(0.0), 0.5);
  EXPECT_NEAR(exact_log_partition(t), 0.0, 1e-14);
  EXPECT_FALSE(t.has_zero_mass());
}

TEST(Rlkl, TwoPointHandComputation) {
  auto t = rlkl_target(test::uniform_tabular(2, 1), table_feature({1.0, 0.0}), 1.0);
  const auto p = normalized_target(t, exact_log_partition(t));
  const double e = std::exp(1.0);
  EXPECT_NEAR(p[0], e / (e + 1.0), 1e-15);
  EXPECT_NEAR(p[1], 1.0 / (e + 1.0), 1e-15);
}

TEST(Rlkl, BetaPointOneWeight) {
  const auto a = test::uniform_tabular(2, 1);
  const auto t = rlkl_target(a, table_feature({1.0, 0.0}), 0.1);
  EXPECT_NEAR(std::exp(t.log_score(Sequence{0}) - t.log_score(Sequence{1})), 2.2026465794806718e4,
              1e-7);
}

TEST(Rlkl, BernoulliPartitionClosedForm) {
  auto t = rlkl_target(test::uniform_tabular(4, 3), test::contains_token(3), 0.1);
  const double q = 37.0 / 64.0;
  EXPECT_NEAR(exact_log_partition(t), std::log(q * std::exp(10.0) + (1.0 - q)), 1e-12);
  EXPECT_NEAR(total_normalized_mass(t), 1.0, 1e-10);
}

TEST(Rlkl, MonotoneInReward) {
  const auto a = test::uniform_tabular(3, 1);
  double prev = 0.0;
  for (double r0 : {0.0, 0.5, 1.0, 2.0}) {
    auto t = rlkl_target(a, table_feature({r0, 0.3, -0.2}), 1.0);
    const double p0 = normalized_target(t, exact_log_partition(t))[0];
    EXPECT_GT(p0, prev);
    prev = p0;
  }
}

TEST(Rlkl, InvalidBeta) {
  EXPECT_THROW(rlkl_target(test::uniform_tabular(2, 1), test::constant_feature(0.0), 0.0),
               ValidationError);
}

TEST(GdcDist, ZeroLambdaIsBase) {
  auto t = gdc_dist_target(test::uniform_tabular(2, 2), {{test::contains_token(1), 0.0}});
  EXPECT_NEAR(exact_log_partition(t), 0.0, 1e-14);
}

TEST(GdcDist, LogThreeHandComputation) {
  auto t = gdc_dist_target(test::uniform_tabular(2, 1), {{table_feature({1.0, 0.0}), std::log(3.0)}});
  const auto p = normalized_target(t, exact_log_partition(t));
  EXPECT_NEAR(p[0], 0.75, 1e-15);
  EXPECT_NEAR(p[1], 0.25, 1e-15);
}

TEST(FitLambda, BaseAlreadyMatches) {
  const auto a = test::uniform_tabular(4, 3);
  const auto lambda = fit_lambda(*a, {{test::contains_token(3), 37.0 / 64.0}}, 1e-10);
  EXPECT_NEAR(lambda[0], 0.0, 1e-8);
}

TEST(FitLambda, TwoPointInversion) {
  const auto a = test::uniform_tabular(2, 1);
  const auto lambda = fit_lambda(*a, {{table_feature({1.0, 0.0}), 0.75}}, 1e-12);
  EXPECT_NEAR(lambda[0], std::log(3.0), 1e-10);
}

TEST(FitLambda, TwoFeaturesMatchedExactly) {
  const auto a = test::uniform_tabular(4, 4);
  const FeatureFn more_ones{"more_ones",
                            [](std::span<const Token> x) {
                              int ones = 0, twos = 0;
                              for (auto t : x) {
                                ones += t == 1;
                                twos += t == 2;
                              }
                              return ones > twos ? 1.0 : 0.0;
                            },
                            true};
  const std::vector<MomentSpec> specs = {{more_ones, 0.5}, {test::contains_token(3), 0.8}};
  const auto lambda = fit_lambda(*a, specs, 1e-9);
  auto t = gdc_dist_target(a, {{specs[0].feature, lambda[0]}, {specs[1].feature, lambda[1]}});
  const auto p = normalized_target(t, exact_log_partition(t));
  EXPECT_NEAR(oracle::exact_feature_moment(p, specs[0].feature, a->space()), 0.5, 1e-9);
  EXPECT_NEAR(oracle::exact_feature_moment(p, specs[1].feature, a->space()), 0.8, 1e-9);
}

TEST(FitLambda, BoundaryDesiredMomentOnFace) {
  // Desired 1.0 for a binary feature lies on the boundary; the fit drives the
  // moment to within tol by a large lambda.
  const auto a = test::uniform_tabular(4, 3);
  const auto lambda = fit_lambda(*a, {{test::contains_token(3), 1.0}}, 1e-6);
  auto t = gdc_dist_target(a, {{test::contains_token(3), lambda[0]}});
  const auto p = normalized_target(t, exact_log_partition(t));
  EXPECT_NEAR(oracle::exact_feature_moment(p, test::contains_token(3), a->space()), 1.0, 1e-6);
}

TEST(FitLambda, Infeasible) {
  const auto a = test::uniform_tabular(2, 2);
  EXPECT_THROW(fit_lambda(*a, {{test::contains_token(1), 1.5}}, 1e-8), InfeasibleMomentError);
  EXPECT_THROW(fit_lambda(*a, {{test::contains_token(1), -0.1}}, 1e-8), InfeasibleMomentError);
}

TEST(FitLambda, SampledPathOnLargeSpace) {
  const auto a = std::make_shared<NGramPolicy>(Space(40, 5), 1);
  FitLambdaOptions options;
  options.cap = 1000;
  options.sample_budget = 20000;
  options.seed = 3;
  const auto lambda = fit_lambda(*a, {{test::contains_token(0), 0.5}}, 1e-8, options);
  // Exact contains-token probability under uniform a is 1 - (39/40)^5 ~ 0.119;
  // matching 0.5 needs a clearly positive coefficient.
  EXPECT_GT(lambda[0], 1.0);
}

TEST(ChoiceModel, Rewards) {
  const auto r1 = reward_from_choice_model(test::constant_feature(1.0));
  EXPECT_EQ(r1(Sequence{0}), 0.0);
  const FeatureFn half{"half", [](std::span<const Token>) { return 0.5; }, false};
  EXPECT_NEAR(reward_from_choice_model(half)(Sequence{0}), std::log(0.5), 1e-15);
  const auto r0 = reward_from_choice_model(test::constant_feature(0.0));
  EXPECT_THROW(r0(Sequence{0}), ValidationError);
}

TEST(ChoiceModel, SoftmaxRecoversCategorical) {
  const auto r = reward_from_choice_model(table_feature({0.9, 0.1}));
  std::vector<double> logits = {r(Sequence{0}), r(Sequence{1})};
  const double lz = log_sum_exp(logits);
  EXPECT_NEAR(std::exp(logits[0] - lz), 0.9, 1e-15);
  EXPECT_NEAR(std::exp(logits[1] - lz), 0.1, 1e-15);
}

namespace {

ConditionalTask echo_task(int vocab) {
  ConditionalTask task;
  for (Token c = 0; c < static_cast<Token>(vocab); ++c) task.contexts.push_back({c});
  task.context_dist = FiniteDistribution::uniform(vocab);
  task.constraint = [](std::span<const Token> x, std::span<const Token> c) { return x[0] == c[0]; };
  return task;
}

}  // namespace

TEST(Conditional, EchoPartitionPerContext) {
  std::mt19937_64 rng(1);
  auto a = std::make_shared<NGramPolicy>(Space(3, 2), 2);
  a->set_params(test::random_logits(rng, a->num_params()));
  const auto task = echo_task(3);
  for (const auto& c : task.contexts) {
    auto t = conditional_target(a, task, c);
    // Brute force over the 9 continuations.
    double z = 0.0;
    for (auto it = enumerate_space(a->space()).begin(); it.index() < 9; ++it) {
      if ((*it)[0] == c[0]) z += std::exp(a->log_prob(*it, c));
    }
    EXPECT_NEAR(exact_log_partition(t), std::log(z), 1e-12);
    EXPECT_NEAR(total_normalized_mass(t), 1.0, 1e-10);
  }
}

TEST(Conditional, AlwaysTrueIsBase) {
  auto a = std::make_shared<NGramPolicy>(Space(3, 2), 2);
  auto task = echo_task(3);
  task.constraint = [](std::span<const Token>, std::span<const Token>) { return true; };
  auto t = conditional_target(a, task, task.contexts[1]);
  EXPECT_NEAR(exact_log_partition(t), 0.0, 1e-14);
}

TEST(Conditional, DegenerateContext) {
  auto a = std::make_shared<NGramPolicy>(Space(3, 2), 2);
  auto task = echo_task(3);
  task.constraint = [](std::span<const Token>, std::span<const Token> c) { return c[0] != 1; };
  EXPECT_NO_THROW(conditional_target(a, task, task.contexts[0]));
  EXPECT_THROW(conditional_target(a, task, task.contexts[1]), DegenerateTargetError);
}

TEST(Conditional, ContextIndexLookup) {
  const auto task = echo_task(3);
  EXPECT_EQ(task.context_index(Sequence{2}), 2u);
  EXPECT_THROW(task.context_index(Sequence{7}), LookupError);
}

TEST(ExactLogPartition, CapacityError) {
  auto t = rlkl_target(std::make_shared<NGramPolicy>(Space(40, 6), 1), test::constant_feature(0.0), 1.0);
  EXPECT_THROW(exact_log_partition(t), CapacityError);
}
