#include "helpers.hpp"

#include "pope/errors.hpp"
#include "pope/estimators.hpp"
#include "pope/oracle.hpp"

#include <gtest/gtest.h>

using namespace pope;
using pope::testing::random_test_env;

namespace {

double max_error(const std::vector<Vector>& a, const std::vector<Vector>& b) {
  double e = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) e = std::max(e, (a[t] - b[t]).cwiseAbs().maxCoeff());
  return e;
}

} // namespace

TEST(Baseline, MatchesOracleOnExactTables) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto e = random_test_env(2, 2, 2, 3, 400 + seed);
    auto tables = build_spectral_tables(enumerate_behavior(e.spec, e.behavior), e.spec,
                                        PastKind::previous_observation, 3);
    auto rep = ope_baseline(tables, e.eval);
    EXPECT_LT(max_error(rep.reward_probs, exact_reward_marginals(e.spec, e.eval)), 1e-8);
  }
}

TEST(Baseline, SingleStateScalars) {
  auto e = random_test_env(1, 1, 2, 2, 3);
  auto exact = enumerate_behavior(e.spec, e.behavior);
  auto rep = ope_baseline(build_spectral_tables(exact, e.spec, PastKind::previous_observation, 2), e.eval);
  EXPECT_LT(max_error(rep.reward_probs, exact_reward_marginals(e.spec, e.eval)), 1e-12);
}

TEST(OneStep, MatchesBaselineAndOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto e = random_test_env(2, 2, 2, 3, 500 + seed);
    auto tables = build_spectral_tables(enumerate_behavior(e.spec, e.behavior), e.spec,
                                        PastKind::previous_observation, 3);
    auto spec = ope_spectral_onestep(tables, e.eval, 2);
    auto base = ope_baseline(tables, e.eval);
    EXPECT_LT(max_error(spec.reward_probs, base.reward_probs), 1e-8);
    EXPECT_LT(max_error(spec.reward_probs, exact_reward_marginals(e.spec, e.eval)), 1e-8);
  }
}

TEST(OneStep, MoreObservationsThanStates) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto e = random_test_env(2, 3, 2, 3, 600 + seed);
    auto tables = build_spectral_tables(enumerate_behavior(e.spec, e.behavior), e.spec,
                                        PastKind::previous_observation, 3);
    for (bool conditional : {false, true}) {
      EstimatorOptions o;
      o.conditional = conditional;
      auto rep = ope_spectral_onestep(tables, e.eval, 2, o);
      EXPECT_LT(max_error(rep.reward_probs, exact_reward_marginals(e.spec, e.eval)), 1e-8);
    }
    EstimatorOptions o;
    o.projection = ProjectionStrategy::random;
    o.projection_seed = seed;
    auto rep = ope_spectral_onestep(tables, e.eval, 2, o);
    EXPECT_LT(max_error(rep.reward_probs, exact_reward_marginals(e.spec, e.eval)), 1e-7);
  }
}

TEST(OneStep, SingleStateCollapsesToOracle) {
  auto e = random_test_env(1, 2, 2, 2, 8);
  auto tables = build_spectral_tables(enumerate_behavior(e.spec, e.behavior), e.spec,
                                      PastKind::previous_observation, 2);
  auto rep = ope_spectral_onestep(tables, e.eval, 1);
  EXPECT_LT(max_error(rep.reward_probs, exact_reward_marginals(e.spec, e.eval)), 1e-12);
}

TEST(History, MatchesOracleAndMarginalizedPathIsOneStep) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto e = random_test_env(2, 3, 2, 3, 700 + seed);
    auto exact = enumerate_behavior(e.spec, e.behavior);
    auto hist = build_spectral_tables(exact, e.spec, PastKind::history, 3);
    auto truth = exact_reward_marginals(e.spec, e.eval);
    EXPECT_LT(max_error(ope_spectral_history(hist, e.eval, 2).reward_probs, truth), 1e-8);
    EstimatorOptions cond;
    cond.conditional = true;
    EXPECT_LT(max_error(ope_spectral_history(hist, e.eval, 2, cond).reward_probs, truth), 1e-8);

    EstimatorOptions m;
    m.projection = ProjectionStrategy::marginalize_then_project;
    auto via_history = ope_spectral_history(hist, e.eval, 2, m);
    auto direct = ope_spectral_onestep(marginalize_to_one_step(hist), e.eval, 2);
    for (int t = 0; t <= 3; ++t) EXPECT_EQ(via_history.reward_probs[t], direct.reward_probs[t]);
    auto one = build_spectral_tables(exact, e.spec, PastKind::previous_observation, 3);
    EXPECT_LT(max_error(via_history.reward_probs, ope_spectral_onestep(one, e.eval, 2).reward_probs), 1e-12);
  }
}

TEST(History, HorizonZero) {
  auto e = random_test_env(2, 2, 2, 0, 9);
  auto hist = build_spectral_tables(enumerate_behavior(e.spec, e.behavior), e.spec, PastKind::history, 0);
  auto rep = ope_spectral_history(hist, e.eval, 2);
  EXPECT_LT(max_error(rep.reward_probs, exact_reward_marginals(e.spec, e.eval)), 1e-8);
}

TEST(Future, MatchesOracleOnRandomEnvs) {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto e = random_test_env(2, 2, 2, 3, 800 + seed);
    auto data_spec = with_horizon(e.spec, 4);
    e.behavior.steps.push_back(e.behavior.steps.back());
    auto exact = enumerate_behavior(data_spec, e.behavior);
    EstimatorOptions o;
    auto tables = build_future_tables(exact, data_spec, 3, o);
    try {
      auto rep = ope_spectral_future(tables, e.eval, 2, o);
      EXPECT_LT(max_error(rep.reward_probs, exact_reward_marginals(e.spec, e.eval)), 1e-6) << seed;
      ++checked;
    } catch (const NumericalError& err) {
      ADD_FAILURE() << "seed " << seed << ": " << err.what();
    }
  }
  EXPECT_GE(checked, 8);
}

TEST(Future, UncoarsenedFutureAlsoWorks) {
  auto e = random_test_env(2, 2, 2, 2, 900);
  auto data_spec = with_horizon(e.spec, 3);
  e.behavior.steps.push_back(e.behavior.steps.back());
  EstimatorOptions o;
  o.coarsen_future_to_next_action = false;
  o.extension_tol = 1e-8;
  auto tables = build_future_tables(enumerate_behavior(data_spec, e.behavior), data_spec, 2, o);
  auto rep = ope_spectral_future(tables, e.eval, 2, o);
  EXPECT_LT(max_error(rep.reward_probs, exact_reward_marginals(e.spec, e.eval)), 1e-6);
}
