#include "pope/errors.hpp"
#include "pope/experiments.hpp"
#include "pope/oracle.hpp"
#include "pope/serialize.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

using namespace pope;

namespace {

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

const VerificationCheck* find_check(const GeneratedEnv& env, const std::string& prefix) {
  for (const auto& c : env.checks)
    if (c.name.rfind(prefix, 0) == 0) return &c;
  return nullptr;
}

} // namespace

TEST(Experiments, FixedSeedGivesIdenticalEnvironment) {
  EnvSizes s;
  auto a = gen_random_env(s, 42);
  auto b = gen_random_env(s, 42);
  EXPECT_EQ(spec_digest(a.spec), spec_digest(b.spec));
  EXPECT_EQ(a.theta, b.theta);
  EXPECT_NE(spec_digest(gen_random_env(s, 43).spec), spec_digest(a.spec));
}

TEST(Experiments, GeneratedEnvironmentsPassValidation) {
  EnvSizes s;
  for (auto env : {gen_random_env(s, 1), gen_env_violating_invertibility(2), gen_env_violating_history_rank(3),
                   gen_is_env(4)}) {
    EXPECT_TRUE(env.verified()) << to_string(env.family);
    EXPECT_FALSE(has_errors(validate_spec(env.spec)));
    EXPECT_FALSE(has_errors(validate_behavior(env.data_spec(), env.behavior)));
    EXPECT_EQ(static_cast<int>(env.behavior.steps.size()), env.spec.horizon + 2);
  }
}

TEST(Experiments, BuildEnvIsDeterministicInTheta) {
  EnvSizes s;
  auto env = gen_random_env(s, 5);
  auto again = build_env(EnvFamily::random, s, env.theta);
  ASSERT_TRUE(again);
  EXPECT_EQ(spec_digest(again->spec), spec_digest(env.spec));
  EXPECT_THROW(build_env(EnvFamily::random, s, {0.5}), UsageError);
}

TEST(Experiments, InvertibilityViolationHoldsExactly) {
  auto env = gen_env_violating_invertibility(7);
  ASSERT_TRUE(env.verified());
  // Independent recomputation: P(z_{i-1} | u_i) from the joint over (u_{i-1}, u_i).
  const auto& T = env.spec.transition;
  Vector s = env.spec.initial;
  for (int i = 1; i <= env.spec.horizon; ++i) {
    Matrix joint = Matrix::Zero(2, 2); // (z_{i-1}, u_i)
    for (int a = 0; a < 2; ++a)
      for (int u = 0; u < 2; ++u)
        for (int v = 0; v < 2; ++v)
          for (int z = 0; z < 2; ++z)
            joint(z, v) += s(u) * env.spec.emission(z, u) * env.behavior.at(i - 1)(a, u) * T[static_cast<std::size_t>(a)](v, u);
    for (int v = 0; v < 2; ++v) joint.col(v) /= joint.col(v).sum();
    EXPECT_NEAR(joint(0, 0), joint(0, 1), 1e-12) << "step " << i;
    Vector next = Vector::Zero(2);
    for (int a = 0; a < 2; ++a) next += T[static_cast<std::size_t>(a)] * (env.behavior.at(i - 1).row(a).transpose().cwiseProduct(s));
    s = next;
  }
  const auto* rank = find_check(env, "rank P(Z_i,a_i,H_{i-1})");
  ASSERT_NE(rank, nullptr);
  EXPECT_EQ(rank->value, 2.0);
}

TEST(Experiments, HistoryRankViolationHoldsExactly) {
  auto env = gen_env_violating_history_rank(8);
  ASSERT_TRUE(env.verified());
  EXPECT_EQ((env.spec.emission.col(1) - env.spec.emission.col(0)).norm(), 0.0);
  ASSERT_TRUE(env.spec.pre_emission);
  for (const auto& c : env.checks)
    if (c.name.rfind("sigma2", 0) == 0) EXPECT_LT(c.value, 1e-10) << c.name;
}

TEST(Experiments, UnboundedSearchReturnsFirstFeasibleDraw) {
  SearchOptions o;
  o.budget = 50;
  auto r = adaptive_search(EnvFamily::random, EnvSizes{}, o, 9);
  EXPECT_EQ(r.draws, 1u);
  EXPECT_FALSE(r.below_threshold);
  EXPECT_TRUE(r.env.verified());
}

TEST(Experiments, TightSearchReportsBelowThreshold) {
  SearchOptions o;
  o.budget = 6;
  o.thresholds.max_condition = 1.0;
  auto r = adaptive_search(EnvFamily::random, EnvSizes{}, o, 9);
  EXPECT_EQ(r.draws, 6u);
  EXPECT_TRUE(r.below_threshold);
}

TEST(Experiments, ExactModeResidualsVanish) {
  ExperimentConfig c;
  c.trials = 1;
  c.exact_tables = true;
  c.sizes.horizon = 2;
  c.estimators = {EstimatorKind::baseline, EstimatorKind::onestep, EstimatorKind::history};
  auto r = run_experiment(c);
  ASSERT_EQ(r.trials.size(), 9u);
  for (const auto& t : r.trials) {
    EXPECT_FALSE(t.failed) << t.note;
    EXPECT_LT(t.residual, 1e-8) << t.estimator << " t=" << t.t;
    EXPECT_EQ(t.n, 0u);
  }
}

TEST(Experiments, ExactModeIsValueMatchesOracle) {
  ExperimentConfig c;
  c.family = EnvFamily::is_wellconditioned;
  c.sizes.horizon = 1;
  c.trials = 1;
  c.exact_tables = true;
  c.estimators = {EstimatorKind::is};
  auto r = run_experiment(c);
  ASSERT_EQ(r.trials.size(), 1u);
  EXPECT_EQ(r.trials[0].t, -1);
  EXPECT_LT(r.trials[0].residual, 1e-8) << r.trials[0].note;
}

TEST(Experiments, SummaryHasOneRowPerEstimatorSizeAndStep) {
  ExperimentConfig c;
  c.trials = 2;
  c.sizes.horizon = 2;
  c.ns = {200, 400};
  c.estimators = {EstimatorKind::baseline, EstimatorKind::history};
  auto r = run_experiment(c);
  EXPECT_EQ(r.summary.size(), 2u * 2u * 3u);
  EXPECT_EQ(line_count(summary_csv(r)), 1u + 12u);
  EXPECT_EQ(line_count(trials_csv(r)), 1u + 2u * 12u);
  for (const auto& s : r.summary) EXPECT_EQ(s.failures + s.completed, 2);
}

TEST(Experiments, CsvBytesAreDeterministic) {
  ExperimentConfig c;
  c.trials = 2;
  c.sizes.horizon = 2;
  c.ns = {300};
  c.seed = 77;
  auto a = run_experiment(c);
  auto b = run_experiment(c);
  EXPECT_EQ(summary_csv(a), summary_csv(b));
  EXPECT_EQ(trials_csv(a), trials_csv(b));
  EXPECT_EQ(plot_data_csv(a), plot_data_csv(b));
  c.seed = 78;
  EXPECT_NE(trials_csv(run_experiment(c)), trials_csv(a));
}

TEST(Experiments, BaselineFailureCountedOnInvertibilityViolation) {
  ExperimentConfig c;
  c.family = EnvFamily::violate_invertibility;
  c.trials = 1;
  c.exact_tables = true;
  c.estimators = {EstimatorKind::baseline, EstimatorKind::history};
  auto r = run_experiment(c);
  int baseline_failures = 0;
  for (const auto& s : r.summary) {
    if (s.estimator == "baseline") baseline_failures += s.failures;
    if (s.estimator == "history") {
      EXPECT_EQ(s.failures, 0);
      EXPECT_LT(s.mean_abs_residual, 1e-8);
    }
  }
  EXPECT_GT(baseline_failures, 0);
}

TEST(Experiments, SummaryStatisticsMatchHandComputation) {
  std::vector<TrialRow> rows{{0, "x", 10, 0, 0.4, 0.5, 0.1, false, ""},
                             {1, "x", 10, 0, 0.8, 0.5, 0.3, false, ""},
                             {2, "x", 10, 0, 0.0, 0.5, 0.0, true, "boom"}};
  auto s = summarize(rows);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_DOUBLE_EQ(s[0].mean_abs_residual, 0.2);
  EXPECT_DOUBLE_EQ(s[0].mean_estimate, 0.6);
  EXPECT_NEAR(s[0].std_err, 0.1, 1e-15); // sample std sqrt(0.02) over sqrt(2)
  EXPECT_EQ(s[0].failures, 1);
  EXPECT_EQ(s[0].completed, 2);
}

TEST(Experiments, UnknownNamesAreUsageErrors) {
  EXPECT_THROW(estimator_from_string("magic"), UsageError);
  EXPECT_THROW(env_family_from_string("magic"), UsageError);
  EXPECT_EQ(estimator_from_string("naive_is"), EstimatorKind::naive_is);
  EXPECT_EQ(env_family_from_string("violate-history-rank"), EnvFamily::violate_history_rank);
}

TEST(Experiments, PilotRateIsAShareAndOnlyForTheInvertibilityFamily) {
  SearchOptions o;
  o.pilot_reps = 4;
  o.pilot_n = 500;
  auto env = gen_env_violating_invertibility(11);
  auto s = score_env(env, o);
  ASSERT_TRUE(s.pilot_rate.has_value());
  EXPECT_GE(*s.pilot_rate, 0.0);
  EXPECT_LE(*s.pilot_rate, 1.0);
  EXPECT_EQ(*score_env(env, o).pilot_rate, *s.pilot_rate);
  o.thresholds.max_condition = 0.0;
  EXPECT_FALSE(score_env(env, o).pilot_rate.has_value());
  EXPECT_FALSE(score_env(gen_random_env(EnvSizes{}, 11), SearchOptions{}).pilot_rate.has_value());
}

TEST(Experiments, IsScoreReportsBiasAndSpread) {
  SearchOptions o;
  o.sensitivity_reps = 3;
  auto env = gen_is_env(12);
  auto s = score_env(env, o);
  ASSERT_TRUE(s.feasible);
  EXPECT_GT(s.is_spread, 0.0);
  EXPECT_DOUBLE_EQ(s.merit(), s.is_spread);
  // The naive bias is the distance between the exact-table naive value and the oracle.
  auto exact = enumerate_behavior(env.data_spec(), env.behavior);
  double naive = is_naive_baseline(exact, env.evaluation, 1, env.spec.reward_support).value;
  EXPECT_NEAR(s.naive_bias, std::abs(naive - exact_value(env.spec, env.evaluation)), 1e-12);
}
