#include "helpers.hpp"

#include "pope/errors.hpp"
#include "pope/moments.hpp"
#include "pope/spectral.hpp"

#include <gtest/gtest.h>

using namespace pope;
using pope::testing::random_test_env;

namespace {

EventSpace obs_space(const PomdpSpec& s, int t) {
  return build_event_space(s, EventKind::single_observation, t);
}
EventSpace act_space(const PomdpSpec& s, int t) { return build_event_space(s, EventKind::action, t); }
EventSpace latent_space(const PomdpSpec& s, int t) {
  return build_event_space(s, EventKind::latent, t);
}

// E_d maps a bordered d x d block back to the plain joint: J = E_r^T B E_c.
Matrix border_inverse(Eigen::Index d) {
  Matrix E = Matrix::Zero(d, d);
  E(0, d - 1) = 1.0;
  for (Eigen::Index m = 1; m < d; ++m) {
    E(m, m - 1) = 1.0;
    E(m, d - 1) = -1.0;
  }
  return E;
}

} // namespace

TEST(EventSpace, HistoryWindowCounts) {
  auto e = random_test_env(2, 2, 2, 3, 1);
  auto h = build_event_space(e.spec, EventKind::history_window, 1);
  EXPECT_EQ(h.size(), 8u);
  EXPECT_EQ(h.atom_name(5), "z_0=1,a_0=0,z_1=1");
}

TEST(EventSpace, FutureCoarsenedToNextAction) {
  auto e = random_test_env(2, 2, 2, 3, 1);
  EventSpaceOptions o;
  o.depth = 1;
  auto f = build_event_space(e.spec, EventKind::future_window, 1, o);
  EXPECT_EQ(f.size(), 8u);
  auto c = f.coarsen_to_field(2);
  EXPECT_EQ(c.size(), 2u);
  EXPECT_EQ(c.raw_size(), 8u);
}

TEST(EventSpace, IdentityCoarseningKeepsCount) {
  auto e = random_test_env(2, 3, 2, 3, 1);
  auto h = build_event_space(e.spec, EventKind::history_window, 1);
  std::vector<int> id(h.raw_size());
  for (std::size_t i = 0; i < id.size(); ++i) id[i] = static_cast<int>(i);
  EXPECT_EQ(h.coarsen(id).size(), h.size());
}

TEST(EventSpace, NonSurjectiveCoarseningRejected) {
  auto e = random_test_env(2, 2, 2, 3, 1);
  auto z = obs_space(e.spec, 0);
  EXPECT_THROW(z.coarsen({0, 2}), ValidationError);
}

TEST(EstimateMoment, PointMass) {
  auto e = random_test_env(2, 2, 2, 2, 1);
  TrajectoryBatch b(2, false);
  Trajectory tr{{0, 0, 0}, 0, {0, 0, 1}, {1, 0, 1}, {0, 1, 0}};
  for (int k = 0; k < 4; ++k) b.push(tr);
  auto t = estimate_moment(b, {obs_space(e.spec, 1), obs_space(e.spec, 0), act_space(e.spec, 1)});
  EXPECT_DOUBLE_EQ(t.at(0)(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(t.total_mass(), 1.0);
  EXPECT_DOUBLE_EQ(t.at(1).sum(), 0.0);
}

TEST(EstimateMoment, RejectsLatent) {
  auto e = random_test_env(2, 2, 2, 2, 1);
  auto b = sample_batch(e.spec, e.behavior, 10, 1);
  EXPECT_THROW(estimate_moment(b, {latent_space(e.spec, 1), obs_space(e.spec, 0), empty_space()}),
               UsageError);
}

TEST(EstimateMoment, ConvergesToExact) {
  auto e = random_test_env(2, 2, 2, 2, 4);
  MomentQuery q{obs_space(e.spec, 1), obs_space(e.spec, 0), act_space(e.spec, 1)};
  auto exact = exact_behavior_moment(e.spec, e.behavior, q);
  auto est = estimate_moment(sample_batch(e.spec, e.behavior, 100000, 3), q);
  EXPECT_NEAR(est.total_mass(), 1.0, 1e-12);
  EXPECT_NEAR(exact.total_mass(), 1.0, 1e-12);
  for (std::size_t s = 0; s < 2; ++s)
    EXPECT_LT((exact.at(s) - est.at(s)).cwiseAbs().maxCoeff(), 0.01);
}

TEST(ExactMoment, InitialObservationIsEmissionTimesInitial) {
  auto e = random_test_env(3, 3, 2, 1, 4);
  auto t = exact_behavior_moment(e.spec, e.behavior,
                                 {obs_space(e.spec, 0), empty_space(), empty_space()});
  EXPECT_LT((t.at(0).col(0) - e.spec.emission * e.spec.initial).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ExactMoment, FactorsThroughLatent) {
  auto e = random_test_env(2, 2, 2, 2, 6);
  for (int i = 1; i <= 2; ++i) {
    auto H = estimator_history(e.spec, i);
    auto joint = exact_behavior_moment(e.spec, e.behavior, {obs_space(e.spec, i), H, act_space(e.spec, i)});
    auto lat = exact_behavior_moment(e.spec, e.behavior, {latent_space(e.spec, i), H, act_space(e.spec, i)});
    for (int a = 0; a < 2; ++a)
      EXPECT_LT((joint.at(a) - e.spec.emission * lat.at(a)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ExactMoment, PreObservationExchangeable) {
  auto e = random_test_env(2, 3, 2, 1, 6);
  auto t = exact_behavior_moment(e.spec, e.behavior,
                                 {obs_space(e.spec, -1), obs_space(e.spec, 0), latent_space(e.spec, 0)});
  for (int u = 0; u < 2; ++u) {
    Matrix want = e.spec.emission.col(u) * e.spec.emission.col(u).transpose() * e.spec.initial(u);
    EXPECT_LT((t.at(u) - want).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ToConditional, DiagonalBecomesIdentity) {
  MomentTable t;
  t.rows = EventSpace(EventKind::composite, {{FieldKind::obs, 0, 2}});
  t.cols = t.rows;
  t.slice = empty_space();
  t.entries = {Matrix(Eigen::Vector2d(0.5, 0.5).asDiagonal())};
  auto c = to_conditional(t);
  EXPECT_TRUE(c.at(0).isIdentity(0.0));
  EXPECT_FALSE(c.any_zero_mass());
}

TEST(ToConditional, ZeroColumnFlagged) {
  MomentTable t;
  t.rows = EventSpace(EventKind::composite, {{FieldKind::obs, 0, 2}});
  t.cols = t.rows;
  t.slice = empty_space();
  Matrix m(2, 2);
  m << 0.5, 0.0, 0.5, 0.0;
  t.entries = {m};
  auto c = to_conditional(t);
  EXPECT_TRUE(c.zero_mass[0][1]);
  EXPECT_FALSE(c.zero_mass[0][0]);
  EXPECT_DOUBLE_EQ(c.at(0).col(1).sum(), 0.0);
}

TEST(ToConditional, MatchesLatentFactorization) {
  auto e = random_test_env(2, 2, 2, 2, 9);
  auto joint = exact_behavior_moment(e.spec, e.behavior,
                                     {obs_space(e.spec, 1), obs_space(e.spec, 0), act_space(e.spec, 1)});
  auto lat = exact_behavior_moment(e.spec, e.behavior,
                                   {latent_space(e.spec, 1), obs_space(e.spec, 0), act_space(e.spec, 1)});
  auto cond = to_conditional(joint);
  for (int a = 0; a < 2; ++a) {
    Matrix pu = lat.at(a);
    for (int c = 0; c < 2; ++c) pu.col(c) /= pu.col(c).sum();
    EXPECT_LT((cond.at(a) - e.spec.emission * pu).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(CountTable, MergeAssociativity) {
  auto e = random_test_env(2, 2, 2, 2, 9);
  auto a = sample_batch(e.spec, e.behavior, 300, 1);
  auto b = sample_batch(e.spec, e.behavior, 200, 2);
  MomentQuery q{estimator_history(e.spec, 2), obs_space(e.spec, 2), act_space(e.spec, 2)};
  auto ca = count_events(a, q);
  ca.merge(count_events(b, q));
  auto ab = a;
  ab.append(b);
  EXPECT_TRUE(ca == count_events(ab, q));
}

TEST(RankProperties, CeilingAndProjectionMonotonicity) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto e = random_test_env(2, 3, 2, 3, 50 + seed);
    for (int i = 1; i <= 2; ++i) {
      EventSpaceOptions o;
      o.depth = 1;
      auto F = build_event_space(e.spec, EventKind::future_window, i, o);
      auto full = exact_behavior_moment(e.spec, e.behavior, {F, estimator_history(e.spec, i), act_space(e.spec, i)});
      auto hist = exact_behavior_moment(e.spec, e.behavior,
                                        {obs_space(e.spec, i), estimator_history(e.spec, i), act_space(e.spec, i)});
      auto one = exact_behavior_moment(e.spec, e.behavior,
                                       {obs_space(e.spec, i), previous_observation(e.spec, i), act_space(e.spec, i)});
      for (int a = 0; a < 2; ++a) {
        EXPECT_LE(numerical_rank(full.at(a)), 2);
        EXPECT_GE(numerical_rank(hist.at(a)), numerical_rank(one.at(a)));
      }
    }
  }
}

TEST(Bordered, InverseRecoversJoint) {
  auto e = random_test_env(2, 2, 2, 2, 12);
  EventSpaceOptions o;
  o.depth = 1;
  auto F = build_event_space(e.spec, EventKind::future_window, 1, o);
  auto H = estimator_history(e.spec, 1);
  auto exact = enumerate_behavior(e.spec, e.behavior);
  auto pair = augmented_future(exact, e.spec, 1, 0, H, F);
  auto joint = exact_behavior_moment(e.spec, e.behavior, {H, F, act_space(e.spec, 1)});
  Matrix want = joint.at(0) / joint.at(0).sum();
  Matrix got = border_inverse(pair.P.rows()).transpose() * pair.P * border_inverse(pair.P.cols());
  EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Bordered, FutureFamilyFactorsThroughLatent) {
  auto e = random_test_env(2, 2, 2, 2, 13);
  EventSpaceOptions o;
  o.depth = 1;
  const int i = 1, a = 1;
  auto F = build_event_space(e.spec, EventKind::future_window, i, o);
  auto H = estimator_history(e.spec, i);
  auto pair = augmented_future(enumerate_behavior(e.spec, e.behavior), e.spec, i, a, H, F);
  EventSpace slice = EventSpace::concat(act_space(e.spec, i), latent_space(e.spec, i));
  auto hu = exact_behavior_moment(e.spec, e.behavior, {H, empty_space(), slice});
  auto fu = exact_behavior_moment(e.spec, e.behavior, {F, empty_space(), slice});
  auto ru = exact_behavior_moment(e.spec, e.behavior,
                                  {build_event_space(e.spec, EventKind::reward, i), empty_space(), slice});
  double pa = hu.at(a * 2).sum() + hu.at(a * 2 + 1).sum();
  Matrix Rt(H.size(), 2), Uf(2, F.size()), M = Matrix::Zero(2, 2), D = Matrix::Zero(2, 2);
  for (int u = 0; u < 2; ++u) {
    const Matrix& h = hu.at(a * 2 + u);
    double m = h.sum();
    M(u, u) = m / pa;
    D(u, u) = ru.at(a * 2 + u)(1, 0) / m;
    Vector hc = h.col(0) / m;
    Vector fc = fu.at(a * 2 + u).col(0) / m;
    Rt(0, u) = 1.0;
    Rt.block(1, u, H.size() - 1, 1) = hc.head(H.size() - 1);
    Uf(u, 0) = 1.0;
    Uf.block(u, 1, 1, F.size() - 1) = fc.head(F.size() - 1).transpose();
  }
  EXPECT_LT((pair.P - Rt * M * Uf).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((pair.Q[1] - Rt * M * D * Uf).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Bordered, SingleStateActionFamilyRankOne) {
  auto e = random_test_env(1, 2, 2, 2, 13);
  auto pair = augmented_action(enumerate_behavior(e.spec, e.behavior), e.spec, 1, 0);
  EXPECT_EQ(numerical_rank(pair.P), 1);
}

TEST(Bordered, RareConditioningEventRejected) {
  auto e = random_test_env(2, 2, 2, 2, 13);
  TrajectoryBatch b(2, false);
  b.push(Trajectory{{0, 0, 0}, 0, {0, 0, 1}, {1, 0, 1}, {0, 1, 0}});
  EXPECT_THROW(augmented_action(b, e.spec, 1, 1), RareEventError);
}
