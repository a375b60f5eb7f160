#pragma once

#include "pope/pomdp.hpp"

#include <functional>
#include <random>
#include <vector>

namespace pope::testing {

inline Matrix random_stochastic(int rows, int cols, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Matrix m(rows, cols);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) m(r, c) = u(gen);
    m.col(c) /= m.col(c).sum();
  }
  return m;
}

struct TestEnv {
  PomdpSpec spec;
  BehaviorPolicy behavior;
  EvaluationPolicy eval;
};

inline TestEnv random_test_env(int U, int Z, int A, int H, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  TestEnv e;
  e.spec.n_states = U;
  e.spec.n_obs = Z;
  e.spec.n_actions = A;
  e.spec.reward_support = {0.0, 1.0};
  e.spec.horizon = H;
  for (int a = 0; a < A; ++a) e.spec.transition.push_back(random_stochastic(U, U, gen));
  e.spec.emission = random_stochastic(Z, U, gen);
  for (int a = 0; a < A; ++a) e.spec.reward_model.push_back(random_stochastic(2, U, gen));
  e.spec.initial = random_stochastic(U, 1, gen).col(0);
  std::vector<Matrix> reactive;
  for (int t = 0; t <= H; ++t) {
    e.behavior.steps.push_back(random_stochastic(A, U, gen));
    reactive.push_back(random_stochastic(A, Z, gen));
  }
  e.eval = EvaluationPolicy::reactive(reactive, Z, A);
  return e;
}

// P^e(r_t) by summing over every full latent trajectory; no shared code with the library oracle.
inline std::vector<Vector> brute_force_marginals(const PomdpSpec& s, const EvaluationPolicy& e) {
  const int H = s.horizon;
  std::vector<Vector> out(H + 1, Vector::Zero(s.n_rewards()));
  std::vector<int> u(H + 1), z(H + 1), a(H + 1), r(H + 1);
  std::function<void(int, double, std::size_t)> rec = [&](int t, double p, std::size_t h) {
    if (t > H) {
      for (int k = 0; k <= H; ++k) out[k](r[k]) += p;
      return;
    }
    for (u[t] = 0; u[t] < s.n_states; ++u[t]) {
      double pu = t == 0 ? s.initial(u[t]) : s.transition[a[t - 1]](u[t], u[t - 1]);
      for (z[t] = 0; z[t] < s.n_obs; ++z[t]) {
        double pz = s.emission(z[t], u[t]);
        std::size_t ht = t == 0 ? static_cast<std::size_t>(z[0])
                                : (h * s.n_actions + a[t - 1]) * s.n_obs + z[t];
        for (a[t] = 0; a[t] < s.n_actions; ++a[t]) {
          double pa = e.prob(t, ht, a[t]);
          for (r[t] = 0; r[t] < s.n_rewards(); ++r[t]) {
            double q = p * pu * pz * pa * s.reward_model[a[t]](r[t], u[t]);
            if (q != 0.0) rec(t + 1, q, ht);
          }
        }
      }
    }
  };
  rec(0, 1.0, 0);
  return out;
}

} // namespace pope::testing
