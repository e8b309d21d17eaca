#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <random>

#include "fdpg/errors.hpp"
#include "fdpg/trainer.hpp"
#include "test_util.hpp"

using namespace fdpg;

TEST(Adam, ZeroGradientLeavesParameters) {
  AdamState s;
  std::vector<double> p = {1.0, -2.0};
  const std::vector<double> g = {0.0, 0.0};
  for (int i = 0; i < 5; ++i) adam_step(s, p, g, 0.1);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -2.0);
}

TEST(Adam, FirstStepMagnitude) {
  AdamState s;
  std::vector<double> p = {0.0, 0.0};
  const std::vector<double> g = {0.3, -1e-3};
  AdamConfig c;
  adam_step(s, p, g, 0.1, c);
  EXPECT_NEAR(p[0], -0.1 * 0.3 / (0.3 + c.eps), 1e-15);
  EXPECT_NEAR(p[1], 0.1 * 1e-3 / (1e-3 + c.eps), 1e-15);
  EXPECT_EQ(s.t, 1u);
}

TEST(Adam, LargeEpsDampsTinyCoordinates) {
  AdamState s;
  std::vector<double> p = {0.0, 0.0};
  AdamConfig c;
  c.eps = 1e-5;
  adam_step(s, p, std::vector<double>{1e-2, 1e-7}, 1.0, c);
  EXPECT_NEAR(p[0], -1.0, 1e-3);
  EXPECT_LT(std::abs(p[1]), 0.01);
}

TEST(Adam, RejectsNonFiniteGradient) {
  AdamState s;
  std::vector<double> p = {0.0};
  EXPECT_THROW(adam_step(s, p, std::vector<double>{std::nan("")}, 0.1), ValidationError);
  EXPECT_THROW(adam_step(s, p, std::vector<double>{INFINITY}, 0.1), ValidationError);
}

TEST(Sgd, DescentStep) {
  std::vector<double> p = {1.0, 1.0};
  sgd_step(p, std::vector<double>{2.0, -1.0}, 0.5);
  EXPECT_EQ(p[0], 0.0);
  EXPECT_EQ(p[1], 1.5);
}

TEST(Schedule, WarmupThenLinearDecay) {
  TrainConfig c;
  c.learning_rate = 1.0;
  c.steps = 11;
  EXPECT_EQ(scheduled_lr(c, 0), 1.0);
  EXPECT_EQ(scheduled_lr(c, 10), 1.0);
  c.final_lr_fraction = 0.1;
  EXPECT_NEAR(scheduled_lr(c, 0), 1.0, 1e-15);
  EXPECT_NEAR(scheduled_lr(c, 5), 0.55, 1e-15);
  EXPECT_NEAR(scheduled_lr(c, 10), 0.1, 1e-15);
  c.warmup_steps = 4;
  EXPECT_NEAR(scheduled_lr(c, 0), 0.25, 1e-15);
  EXPECT_NEAR(scheduled_lr(c, 3), 1.0, 1e-15);
  EXPECT_NEAR(scheduled_lr(c, 4), 1.0, 1e-15);
  EXPECT_NEAR(scheduled_lr(c, 10), 0.1, 1e-15);
}

TEST(TrainConfigTest, Validation) {
  EXPECT_NO_THROW(TrainConfig{}.validate());
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    return c;
  };
  EXPECT_THROW(bad([](TrainConfig& c) { c.learning_rate = 0.0; }).validate(), ValidationError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.batch_size = 0; }).validate(), ValidationError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.steps = 0; }).validate(), ValidationError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.eval_interval = 0; }).validate(), ValidationError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.ema_alpha = 1.0; }).validate(), ValidationError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.final_lr_fraction = 0.0; }).validate(), ValidationError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.final_lr_fraction = 1.5; }).validate(), ValidationError);
}

TEST(TrainConfigTest, DefaultBaselinePerDivergence) {
  TrainConfig c;
  c.divergence = DivergenceKind::ForwardKL;
  EXPECT_EQ(c.initial_baseline().mode(), BaselineMode::AnalyticOne);
  c.divergence = DivergenceKind::JensenShannon;
  EXPECT_EQ(c.initial_baseline().mode(), BaselineMode::Ema);
  c.baseline = BaselineMode::Constant;
  c.baseline_constant = 2.5;
  EXPECT_EQ(c.initial_baseline().value(), 2.5);
}

namespace {

TrainConfig small_config(DivergenceKind kind, std::size_t steps = 50) {
  TrainConfig c;
  c.divergence = kind;
  c.steps = steps;
  c.batch_size = 64;
  c.eval_interval = 10;
  c.learning_rate = 0.05;
  return c;
}

}  // namespace

TEST(Train, TargetEqualToStartStaysPut) {
  const auto a = test::uniform_tabular(3, 3);
  auto t = gdc_binary_target(a, test::constant_feature(1.0));
  for (auto kind : {DivergenceKind::ForwardKL, DivergenceKind::JensenShannon,
                    DivergenceKind::TotalVariation, DivergenceKind::ReverseKL}) {
    const auto r = train(small_config(kind), *a, t);
    ASSERT_FALSE(r.record.abort);
    const auto& last = r.record.rows.back();
    EXPECT_LT(last.forward_kl.to_double(), 1e-6) << short_name(kind);
    EXPECT_LT(last.total_variation.to_double(), 1e-6) << short_name(kind);
  }
}

TEST(Train, RejectsReverseKLOnHardConstraintBeforeStepZero) {
  const auto a = test::uniform_tabular(3, 3);
  auto t = gdc_binary_target(a, test::contains_token(1));
  try {
    train(small_config(DivergenceKind::ReverseKL), *a, t);
    FAIL();
  } catch (const InfinitePseudoRewardError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("reverse KL"), std::string::npos);
    EXPECT_NE(msg.find("support"), std::string::npos);
  }
  EXPECT_THROW(train(small_config(DivergenceKind::ChiSquared), *a, t), InfinitePseudoRewardError);
}

TEST(Train, RowCountContract) {
  const auto a = test::uniform_tabular(3, 2);
  auto t = gdc_binary_target(a, test::contains_token(1));
  auto r = train(small_config(DivergenceKind::JensenShannon, 50), *a, t);
  ASSERT_EQ(r.record.rows.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(r.record.rows[i].step, 10 * i);
  r = train(small_config(DivergenceKind::JensenShannon, 25), *a, t);
  ASSERT_EQ(r.record.rows.size(), 4u);
  EXPECT_EQ(r.record.rows.back().step, 25u);
}

TEST(Train, ReducesDivergenceOnSmallLexicalTask) {
  const auto a = test::uniform_tabular(4, 3);
  auto t = gdc_binary_target(a, test::contains_token(3));
  const FeatureFn b = test::contains_token(3);
  for (auto kind : {DivergenceKind::ForwardKL, DivergenceKind::JensenShannon,
                    DivergenceKind::TotalVariation, DivergenceKind::SquaredHellinger}) {
    auto c = small_config(kind, 300);
    c.learning_rate = 0.1;
    const auto r = train(c, *a, t, TrainOptions{&b});
    ASSERT_FALSE(r.record.abort);
    const auto& first = r.record.rows.front();
    const auto& last = r.record.rows.back();
    EXPECT_LT(last.forward_kl.to_double(), 0.5 * first.forward_kl.to_double()) << short_name(kind);
    EXPECT_GT(*last.alignment, *first.alignment) << short_name(kind);
  }
}

TEST(Train, DeterministicAcrossRunsAndThreads) {
  const auto a = test::uniform_tabular(4, 3);
  auto t = gdc_binary_target(a, test::contains_token(3));
  auto c = small_config(DivergenceKind::JensenShannon, 40);
  c.seed = 9;
  const auto r1 = train(c, *a, t);
  c.threads = 3;
  const auto r2 = train(c, *a, t);
  ASSERT_EQ(r1.record.rows.size(), r2.record.rows.size());
  for (std::size_t i = 0; i < r1.record.rows.size(); ++i) {
    EXPECT_EQ(r1.record.rows[i].forward_kl, r2.record.rows[i].forward_kl);
    EXPECT_EQ(r1.record.rows[i].reward_mean, r2.record.rows[i].reward_mean);
  }
  const auto p1 = r1.policy->params();
  const auto p2 = r2.policy->params();
  EXPECT_TRUE(std::equal(p1.begin(), p1.end(), p2.begin()));
  c.seed = 10;
  const auto r3 = train(c, *a, t);
  EXPECT_NE(r1.record.rows.back().reward_mean, r3.record.rows.back().reward_mean);
}

TEST(Train, EstimatedZReported) {
  const auto a = test::uniform_tabular(4, 3);
  auto t = gdc_binary_target(a, test::contains_token(3));
  auto c = small_config(DivergenceKind::JensenShannon, 20);
  c.z_mode = ZMode::Estimated;
  const auto r = train(c, *a, t);
  EXPECT_EQ(r.record.z_source, "estimated");
  ASSERT_TRUE(r.record.rows.back().z_hat);
  EXPECT_NEAR(*r.record.rows.back().z_hat, 37.0 / 64.0, 0.05);
  c.z_mode = ZMode::Exact;
  EXPECT_EQ(train(c, *a, t).record.z_source, "exact");
}

TEST(Train, MidRunErrorIsRecordedWithStep) {
  // A tilt that turns non-finite after a fixed number of queries.
  auto calls = std::make_shared<std::atomic<int>>(0);
  auto a = std::make_shared<NGramPolicy>(Space(40, 5), 1);
  TargetModel t(TargetKind::Rlkl, a, [calls](std::span<const Token>) {
    return ++*calls > 3000 ? std::nan("") : 0.0;
  });
  auto c = small_config(DivergenceKind::JensenShannon, 30);
  c.z_mode = ZMode::Estimated;
  c.eval_budget = 100;
  const auto r = train(c, *a, t);
  ASSERT_TRUE(r.record.abort);
  EXPECT_GT(r.record.abort->step, 0u);
  EXPECT_LT(r.record.abort->step, 30u);
  EXPECT_FALSE(r.record.abort->message.empty());
  EXPECT_GE(r.record.rows.size(), 1u);
}

TEST(Evaluate, SampledAgreesWithExactWithinThreeSigma) {
  std::mt19937_64 rng(21);
  const Space s(4, 4);
  auto base = std::make_shared<TabularPolicy>(s, test::random_logits(rng, s.size()));
  auto t = rlkl_target(base, test::contains_token(2), 1.0);
  const double lz = exact_log_partition(t);
  const TabularPolicy pi(s, test::random_logits(rng, s.size()));
  const auto p = normalized_target(t, lz);
  const auto samples = sample(pi, {4, StreamDomain::Evaluation, 0}, 100000);
  for (auto kind : {DivergenceKind::ForwardKL, DivergenceKind::ReverseKL,
                    DivergenceKind::TotalVariation, DivergenceKind::JensenShannon}) {
    const Generator g(kind);
    const auto est = sampled_divergence(g, pi, t, samples, lz);
    const double exact = f_divergence_exact(g, exact_distribution(pi), p).value();
    EXPECT_LE(std::abs(est.estimate.value() - exact), 3.0 * est.std_error + 1e-12) << g.name();
    EXPECT_GT(est.std_error, 0.0);
  }
}

TEST(Evaluate, DisjointSupportReportsInfinityWithoutThrowing) {
  const Space s(2, 1);
  auto a = std::make_shared<TabularPolicy>(s, std::vector<double>{0.0, -50.0});
  const FeatureFn second{"second", [](std::span<const Token> x) { return x[0] == 1 ? 1.0 : 0.0; }, true};
  auto t = gdc_binary_target(a, second);
  exact_log_partition(t);
  const TabularPolicy pi(s, std::vector<double>{0.0, -800.0});
  const auto row = evaluate_metrics(pi, t, *a, EvalOptions{});
  EXPECT_TRUE(row.reverse_kl.is_infinite());
  EXPECT_NEAR(row.total_variation.to_double(), 1.0, 1e-12);
}

TEST(Evaluate, LargeSpaceFallsBackToSampling) {
  auto a = std::make_shared<NGramPolicy>(Space(40, 5), 1);
  auto t = rlkl_target(a, test::contains_token(0), 1.0);
  EvalOptions eo;
  eo.budget = 2000;
  eo.z_hat = 1.0;
  const auto row = evaluate_metrics(*a, t, *a, eo);
  EXPECT_FALSE(row.divergences_exact);
  EXPECT_GT(row.forward_kl.to_double(), 0.0);
}

TEST(WarmStart, TabularFromNGramMatchesBase) {
  std::mt19937_64 rng(30);
  auto base = std::make_shared<NGramPolicy>(Space(3, 3), 2);
  base->set_params(test::random_logits(rng, base->num_params()));
  TabularPolicy pi(Space(3, 3));
  warm_start(pi, base);
  const auto a = exact_distribution(*base);
  const auto b = exact_distribution(pi);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(WarmStart, SameFamilyCopiesParameters) {
  std::mt19937_64 rng(31);
  auto base = std::make_shared<NGramPolicy>(Space(3, 3), 2);
  base->set_params(test::random_logits(rng, base->num_params()));
  NGramPolicy pi(Space(3, 3), 2);
  warm_start(pi, base);
  const auto p = pi.params();
  const auto q = base->params();
  EXPECT_TRUE(std::equal(p.begin(), p.end(), q.begin()));
}

TEST(TrainConditional, EchoTaskLearns) {
  auto a = std::make_shared<NGramPolicy>(Space(3, 2), 3);
  ConditionalTask task;
  for (Token c = 0; c < 3; ++c) task.contexts.push_back({c});
  task.context_dist = FiniteDistribution::uniform(3);
  task.constraint = [](std::span<const Token> x, std::span<const Token> c) { return x[0] == c[0]; };
  const auto targets = conditional_targets(a, task);
  auto c = small_config(DivergenceKind::ForwardKL, 200);
  c.contexts_per_step = 3;
  c.learning_rate = 0.1;
  const auto r = train_conditional(c, *a, task, targets, Generator(DivergenceKind::ForwardKL));
  ASSERT_FALSE(r.record.abort);
  EXPECT_LT(r.record.rows.back().forward_kl.to_double(), 0.2 * r.record.rows.front().forward_kl.to_double());
  EXPECT_THROW(train_conditional(c, *a, task, std::span<const TargetModel>(targets.data(), 2),
                                 Generator(DivergenceKind::ForwardKL)),
               StructuralError);
}
