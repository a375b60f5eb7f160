#include "helpers.hpp"

#include "pope/errors.hpp"
#include "pope/is.hpp"
#include "pope/oracle.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace pope;
using pope::testing::random_test_env;
using pope::testing::TestEnv;

namespace {

// Transitions and rewards shared across actions, |R| = |U| = 2.
TestEnv is_env(int Z, int A, int H, std::uint64_t seed) {
  auto e = random_test_env(2, Z, A, H, seed);
  for (int a = 1; a < A; ++a) {
    e.spec.transition[a] = e.spec.transition[0];
    e.spec.reward_model[a] = e.spec.reward_model[0];
  }
  return e;
}

struct DataSet {
  PomdpSpec spec;
  BehaviorPolicy behavior;
};

// Data must reach one step past the evaluation horizon.
DataSet extended(const TestEnv& e) {
  DataSet d{with_horizon(e.spec, e.spec.horizon + 1), e.behavior};
  d.behavior.steps.push_back(d.behavior.steps.back());
  return d;
}

// Column permutation of `got` that best matches `want`.
std::vector<int> align(const Matrix& want, const Matrix& got) {
  std::vector<int> p(static_cast<std::size_t>(want.cols()));
  std::iota(p.begin(), p.end(), 0);
  std::vector<int> best = p;
  double best_err = std::numeric_limits<double>::infinity();
  do {
    double err = 0.0;
    for (std::size_t u = 0; u < p.size(); ++u)
      err = std::max(err, (want.col(static_cast<Eigen::Index>(u)) - got.col(p[u])).cwiseAbs().maxCoeff());
    if (err < best_err) {
      best_err = err;
      best = p;
    }
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

Matrix permuted(const Matrix& m, const std::vector<int>& p) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t u = 0; u < p.size(); ++u) out.col(static_cast<Eigen::Index>(u)) = m.col(p[u]);
  return out;
}

} // namespace

TEST(IsIdentification, PolicyAndRewardShareOnePermutationPerStep) {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    auto e = is_env(2, 2, 2, 1100 + seed);
    auto d = extended(e);
    auto tables = build_is_tables(enumerate_behavior(d.spec, d.behavior), d.spec, 2);
    try {
      auto id = identify_latents(tables, 2);
      for (int i = 0; i <= 2; ++i) {
        const auto& s = id.steps[static_cast<std::size_t>(i)];
        auto p = align(e.spec.reward_model[0], s.reward);
        EXPECT_LT((permuted(s.reward, p) - e.spec.reward_model[0]).cwiseAbs().maxCoeff(), 1e-8) << seed;
        EXPECT_LT((permuted(s.policy, p) - e.behavior.at(i)).cwiseAbs().maxCoeff(), 1e-8) << seed;
      }
      ++checked;
    } catch (const NumericalError& err) {
      ADD_FAILURE() << "seed " << seed << ": " << err.what();
    }
  }
  EXPECT_EQ(checked, 8);
}

TEST(IsIdentification, ThreeObservationsAndActions) {
  auto e = is_env(3, 3, 1, 1200);
  auto d = extended(e);
  auto tables = build_is_tables(enumerate_behavior(d.spec, d.behavior), d.spec, 1);
  auto id = identify_latents(tables, 2);
  for (int i = 0; i <= 1; ++i) {
    const auto& s = id.steps[static_cast<std::size_t>(i)];
    auto p = align(e.spec.reward_model[0], s.reward);
    EXPECT_LT((permuted(s.policy, p) - e.behavior.at(i)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(IsIdentification, StateIndependentPolicyHasIdenticalColumns) {
  auto e = is_env(2, 2, 1, 1300);
  for (auto& m : e.behavior.steps) {
    m.col(0) << 0.3, 0.7;
    m.col(1) << 0.3, 0.7;
  }
  auto d = extended(e);
  auto tables = build_is_tables(enumerate_behavior(d.spec, d.behavior), d.spec, 1);
  auto pol = identify_behavior_policy(tables, 0, 2);
  EXPECT_TRUE(pol.state_independent);
  EXPECT_LT((pol.policy.col(0) - pol.policy.col(1)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(pol.policy(0, 0), 0.3, 1e-10);
}

TEST(IsIdentification, RejectsActionDependentRewards) {
  auto e = random_test_env(2, 2, 2, 1, 1400);
  e.spec.transition[1] = e.spec.transition[0];
  auto d = extended(e);
  EXPECT_THROW(build_is_tables(enumerate_behavior(d.spec, d.behavior), d.spec, 1), ValidationError);
}

TEST(IsIdentification, RejectsBatchWithoutLookahead) {
  auto e = is_env(2, 2, 1, 1500);
  EXPECT_THROW(build_is_tables(enumerate_behavior(e.spec, e.behavior), e.spec, 1), UsageError);
}

TEST(IsPosterior, MatchesEnumeratedLatentPosterior) {
  const int H = 1;
  auto e = is_env(2, 2, H, 1600);
  auto d = extended(e);
  auto tables = build_is_tables(enumerate_behavior(d.spec, d.behavior), d.spec, H);
  auto id = identify_latents(tables, 2);
  auto post = identify_latent_posterior(id, tables);
  EXPECT_EQ(post.negative_entries, 0);

  // Oracle: tabulate (u_0, u_1, tau) from an enumeration that keeps the latents.
  EnumerationOptions opts;
  opts.keep_latent = {true, true, false};
  auto full = enumerate_behavior(d.spec, d.behavior, opts);
  Matrix joint = Matrix::Zero(4, static_cast<Eigen::Index>(tables.n_tau()));
  for (std::size_t k = 0; k < full.size(); ++k) {
    int u = full.latent(k, 0) * 2 + full.latent(k, 1);
    joint(u, static_cast<Eigen::Index>(tables.tau_index(full, k))) += full.weight(k);
  }
  std::vector<std::vector<int>> perms;
  for (int i = 0; i <= H; ++i) perms.push_back(align(e.spec.reward_model[0], id.steps[i].reward));
  for (Eigen::Index tau = 0; tau < joint.cols(); ++tau) {
    ASSERT_TRUE(post.observed[static_cast<std::size_t>(tau)]);
    Vector want = joint.col(tau) / joint.col(tau).sum();
    for (int u0 = 0; u0 < 2; ++u0)
      for (int u1 = 0; u1 < 2; ++u1)
        EXPECT_NEAR(post.table(perms[0][u0] * 2 + perms[1][u1], tau), want(u0 * 2 + u1), 1e-8);
  }
}

TEST(IsPosterior, BayesRuleAtHorizonZero) {
  auto e = is_env(2, 2, 0, 1700);
  auto d = extended(e);
  auto tables = build_is_tables(enumerate_behavior(d.spec, d.behavior), d.spec, 0);
  auto id = identify_latents(tables, 2);
  auto post = identify_latent_posterior(id, tables);
  auto p = align(e.spec.reward_model[0], id.steps[0].reward);
  for (int z = 0; z < 2; ++z)
    for (int a = 0; a < 2; ++a) {
      Vector b(2);
      for (int u = 0; u < 2; ++u) b(u) = e.spec.initial(u) * e.spec.emission(z, u) * e.behavior.at(0)(a, u);
      b /= b.sum();
      for (int u = 0; u < 2; ++u) EXPECT_NEAR(post.table(p[u], z * 2 + a), b(u), 1e-8);
    }
}

TEST(IsPosterior, SingleLatentGivesOnesRow) {
  auto e = random_test_env(1, 2, 2, 1, 1800);
  e.spec.transition[1] = e.spec.transition[0];
  e.spec.reward_model[1] = e.spec.reward_model[0];
  auto d = extended(e);
  auto tables = build_is_tables(enumerate_behavior(d.spec, d.behavior), d.spec, 1);
  auto post = identify_latent_posterior(identify_latents(tables, 1), tables);
  ASSERT_EQ(post.table.rows(), 1);
  for (Eigen::Index c = 0; c < post.table.cols(); ++c) EXPECT_NEAR(post.table(0, c), 1.0, 1e-10);
}

TEST(IsEstimate, ExpectedWeightedReturnEqualsExactValue) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const int H = 1 + static_cast<int>(seed % 2);
    auto e = is_env(2, 2, H, 1900 + seed);
    auto d = extended(e);
    auto exact = enumerate_behavior(d.spec, d.behavior);
    auto tables = build_is_tables(exact, d.spec, H);
    auto id = identify_latents(tables, 2);
    auto post = identify_latent_posterior(id, tables);
    auto res = is_estimate(exact, tables, id, post, e.eval);
    EXPECT_NEAR(res.value, exact_value(e.spec, e.eval), 1e-8) << seed;
    EXPECT_EQ(res.floored, 0);
  }
}

TEST(IsEstimate, MatchingStateIndependentPoliciesGiveUnitWeights) {
  auto e = is_env(2, 2, 1, 2000);
  std::vector<Matrix> reactive;
  for (auto& m : e.behavior.steps) {
    m.col(0) << 0.4, 0.6;
    m.col(1) << 0.4, 0.6;
    reactive.push_back(m);
  }
  e.eval = EvaluationPolicy::reactive(reactive, 2, 2);
  auto d = extended(e);
  auto exact = enumerate_behavior(d.spec, d.behavior);
  auto tables = build_is_tables(exact, d.spec, 1);
  auto id = identify_latents(tables, 2);
  auto res = is_estimate(exact, tables, id, identify_latent_posterior(id, tables), e.eval);
  for (Eigen::Index v = 0; v < res.weights.rows(); ++v)
    for (Eigen::Index c = 0; c < res.weights.cols(); ++c)
      if (res.weights(v, c) != 0.0) EXPECT_NEAR(res.weights(v, c), 1.0, 1e-8);
  double mean = 0.0;
  for (std::size_t k = 0; k < exact.size(); ++k)
    mean += exact.weight(k) * (d.spec.reward_support[exact.reward(k, 0)] +
                               d.spec.reward_support[exact.reward(k, 1)]);
  EXPECT_NEAR(res.value, mean, 1e-8);
}

TEST(IsNaive, ExactWhenBehaviorIgnoresLatent) {
  auto e = random_test_env(2, 2, 2, 2, 2100);
  for (auto& m : e.behavior.steps) {
    m.col(0) << 0.25, 0.75;
    m.col(1) << 0.25, 0.75;
  }
  auto exact = enumerate_behavior(e.spec, e.behavior);
  auto res = is_naive_baseline(exact, e.eval, 2, e.spec.reward_support);
  EXPECT_NEAR(res.value, exact_value(e.spec, e.eval), 1e-10);
  EXPECT_EQ(res.floored, 0);
}

TEST(IsNaive, SampledMeanHasStandardError) {
  auto e = random_test_env(2, 2, 2, 1, 2200);
  auto batch = sample_batch(e.spec, e.behavior, 2000, 5);
  auto res = is_naive_baseline(batch, e.eval, 1, e.spec.reward_support);
  EXPECT_GT(res.std_err, 0.0);
  EXPECT_TRUE(std::isfinite(res.value));
}
