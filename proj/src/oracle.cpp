#include "pope/oracle.hpp"

#include "pope/errors.hpp"

namespace pope {

namespace {

void check_inputs(const PomdpSpec& spec, const EvaluationPolicy& eval,
                  const OracleOptions& options) {
  require_valid(spec, nullptr, &eval);
  if (eval.horizon() < spec.horizon)
    throw ValidationError("evaluation policy covers fewer steps than the horizon");
  const HistoryIndexer& idx = eval.indexer();
  const double cells = static_cast<double>(idx.count(spec.horizon)) * spec.n_states;
  if (cells > static_cast<double>(options.budget)) {
    throw BudgetError("oracle needs " + std::to_string(static_cast<long long>(cells)) +
                      " cells, above the budget of " + std::to_string(options.budget));
  }
}

} // namespace

std::vector<Vector> exact_reward_marginals(const PomdpSpec& spec, const EvaluationPolicy& eval,
                                           const OracleOptions& options) {
  check_inputs(spec, eval, options);
  const int U = spec.n_states, Z = spec.n_obs, A = spec.n_actions, R = spec.n_rewards();
  const HistoryIndexer& idx = eval.indexer();
  // alpha(u, h) = P^e(h_t, u_t)
  Matrix alpha(U, Z);
  for (int z = 0; z < Z; ++z) alpha.col(z) = spec.initial.cwiseProduct(spec.emission.row(z).transpose());

  std::vector<Vector> out;
  for (int t = 0; t <= spec.horizon; ++t) {
    const std::size_t nh = idx.count(t);
    Vector pr = Vector::Zero(R);
    Matrix next;
    if (t < spec.horizon) next = Matrix::Zero(U, static_cast<Eigen::Index>(idx.count(t + 1)));
    for (std::size_t h = 0; h < nh; ++h) {
      const auto hc = static_cast<Eigen::Index>(h);
      if (alpha.col(hc).isZero(0.0)) continue;
      for (int a = 0; a < A; ++a) {
        double p = eval.prob(t, h, a);
        if (p == 0.0) continue;
        Vector w = p * alpha.col(hc);
        pr += spec.reward_model[a] * w;
        if (t < spec.horizon) {
          Vector moved = spec.transition[a] * w;
          for (int z = 0; z < Z; ++z)
            next.col(static_cast<Eigen::Index>(idx.extend(h, a, z))) =
                moved.cwiseProduct(spec.emission.row(z).transpose());
        }
      }
    }
    out.push_back(pr);
    alpha = std::move(next);
  }
  return out;
}

double exact_value(const PomdpSpec& spec, const EvaluationPolicy& eval,
                   const OracleOptions& options) {
  auto marginals = exact_reward_marginals(spec, eval, options);
  double v = 0.0;
  for (const auto& m : marginals)
    for (int r = 0; r < spec.n_rewards(); ++r) v += spec.reward_support[r] * m(r);
  return v;
}

double exact_value_backward(const PomdpSpec& spec, const EvaluationPolicy& eval,
                            const OracleOptions& options) {
  check_inputs(spec, eval, options);
  const int U = spec.n_states, Z = spec.n_obs, A = spec.n_actions;
  const HistoryIndexer& idx = eval.indexer();
  Eigen::Map<const Vector> support(spec.reward_support.data(), spec.n_rewards());
  std::vector<RowVector> mean_reward(A);
  for (int a = 0; a < A; ++a) mean_reward[a] = support.transpose() * spec.reward_model[a];

  Matrix v_next; // (u, h_{t+1})
  for (int t = spec.horizon; t >= 0; --t) {
    const std::size_t nh = idx.count(t);
    Matrix v = Matrix::Zero(U, static_cast<Eigen::Index>(nh));
    for (std::size_t h = 0; h < nh; ++h) {
      for (int a = 0; a < A; ++a) {
        double p = eval.prob(t, h, a);
        if (p == 0.0) continue;
        RowVector q = mean_reward[a];
        if (t < spec.horizon) {
          // cont(u') = sum_z O(z|u') V_{t+1}(ext(h,a,z), u')
          Vector cont = Vector::Zero(U);
          for (int z = 0; z < Z; ++z)
            cont += spec.emission.row(z).transpose().cwiseProduct(
                v_next.col(static_cast<Eigen::Index>(idx.extend(h, a, z))));
          q += cont.transpose() * spec.transition[a];
        }
        v.col(static_cast<Eigen::Index>(h)) += p * q.transpose();
      }
    }
    v_next = std::move(v);
  }
  double value = 0.0;
  for (int z = 0; z < Z; ++z)
    value += spec.initial.cwiseProduct(spec.emission.row(z).transpose()).dot(v_next.col(z));
  return value;
}

} // namespace pope
