#include "pope/is.hpp"

#include "pope/errors.hpp"
#include "pope/spectral.hpp"

#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace pope {

namespace {

std::size_t ix(int i) { return static_cast<std::size_t>(i); }

std::size_t ipow(std::size_t b, int e) {
  std::size_t r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

bool action_independent_transitions(const PomdpSpec& spec, double tol = 1e-12) {
  for (const auto& T : spec.transition)
    if ((T - spec.transition[0]).cwiseAbs().maxCoeff() > tol) return false;
  return true;
}

struct PairFit {
  EigenIdentification eig;
  ColumnSelection sel;
  Matrix dist; // full distribution, atoms x k
  int slice = 0;
};

// Diagonalizes (P L)^+ Q_slice L and extends the bordered eigenvector rows to every column.
PairFit fit_pair(const AugmentedPair& pair, int slice, int k, const EstimatorOptions& options) {
  PairFit f;
  f.sel = select_columns(pair.P, k);
  Matrix PLp = pinv_tol(pair.P * f.sel.selector, options.pinv_tol);
  f.eig = eigendecompose_normalized(PLp * pair.Q[ix(slice)] * f.sel.selector, options.eigen);
  Extension ext = extend_columns(pair.P, f.sel.columns, f.eig.U, options.extension_tol);
  f.dist = distribution_from_bordered(ext.U);
  f.slice = slice;
  return f;
}

void check_sizes(const IsTables& t, int step, int k) {
  if (step < 0 || step > t.horizon)
    throw UsageError("step " + std::to_string(step) + " outside 0.." + std::to_string(t.horizon));
  if (k < 1) throw UsageError("latent count must be positive");
  if (k > t.n_actions || k > t.n_rewards || k > t.n_obs)
    throw ValidationError("identification needs |A|, |R| and |Z| at least the latent count " +
                          std::to_string(k));
}

} // namespace

std::size_t IsTables::n_tau() const { return ipow(ix(n_obs * n_actions), horizon + 1); }
std::size_t IsTables::n_rho() const { return ipow(ix(n_rewards), horizon + 1); }

std::size_t IsTables::tau_index(const TrajectoryBatch& batch, std::size_t k) const {
  std::size_t idx = 0;
  for (int t = 0; t <= horizon; ++t)
    idx = (idx * ix(n_obs) + ix(batch.obs(k, t))) * ix(n_actions) + ix(batch.action(k, t));
  return idx;
}

std::size_t IsTables::rho_index(const TrajectoryBatch& batch, std::size_t k) const {
  std::size_t idx = 0;
  for (int t = 0; t <= horizon; ++t) idx = idx * ix(n_rewards) + ix(batch.reward(k, t));
  return idx;
}

IsTables build_is_tables(const TrajectoryBatch& batch, const PomdpSpec& spec, int eval_horizon,
                         const IsOptions& options) {
  if (eval_horizon < 0 || batch.horizon() < eval_horizon + 1)
    throw UsageError("importance sampling at horizon " + std::to_string(eval_horizon) +
                     " needs data through step " + std::to_string(eval_horizon + 1) + ", batch has " +
                     std::to_string(batch.horizon()));
  if (!spec.action_independent_rewards())
    throw ValidationError("importance sampling needs rewards that do not depend on the action");
  if (!action_independent_transitions(spec))
    throw ValidationError("importance sampling needs transitions that do not depend on the action");
  IsTables t;
  t.horizon = eval_horizon;
  t.n_obs = spec.n_obs;
  t.n_actions = spec.n_actions;
  t.n_rewards = spec.n_rewards();
  t.reward_support = spec.reward_support;
  const double cells = static_cast<double>(t.n_tau()) * static_cast<double>(t.n_rho());
  if (cells > static_cast<double>(options.budget))
    throw BudgetError("reward-by-trajectory table needs " + std::to_string(cells) + " cells, budget " +
                      std::to_string(options.budget));
  for (int i = 0; i <= eval_horizon; ++i) {
    t.action_pairs.emplace_back();
    for (int z = 0; z < spec.n_obs; ++z) {
      try {
        t.action_pairs.back().emplace_back(augmented_action(batch, spec, i, z));
      } catch (const RareEventError&) {
        t.action_pairs.back().emplace_back(std::nullopt);
      }
    }
    t.reward_pairs.emplace_back(ix(spec.n_actions));
    for (int a = 0; a < spec.n_actions; ++a)
      for (int z = 0; z < spec.n_obs; ++z) {
        try {
          t.reward_pairs.back()[ix(a)].emplace_back(augmented_reward(batch, spec, i, a, z));
        } catch (const RareEventError&) {
          t.reward_pairs.back()[ix(a)].emplace_back(std::nullopt);
        }
      }
  }
  t.reward_joint = Matrix::Zero(static_cast<Eigen::Index>(t.n_rho()), static_cast<Eigen::Index>(t.n_tau()));
  const double total = batch.total_weight();
  for (std::size_t k = 0; k < batch.size(); ++k)
    t.reward_joint(static_cast<Eigen::Index>(t.rho_index(batch, k)),
                   static_cast<Eigen::Index>(t.tau_index(batch, k))) += batch.weight(k) / total;
  return t;
}

PolicyIdentification identify_behavior_policy(const IsTables& tables, int step, int k,
                                              const EstimatorOptions& options) {
  check_sizes(tables, step, k);
  std::optional<PairFit> best;
  int best_z = -1;
  int max_rank = 0;
  std::ostringstream failures;
  for (int z = 0; z < tables.n_obs; ++z) {
    const auto& pair = tables.action_pairs[ix(step)][ix(z)];
    if (!pair) continue;
    max_rank = std::max(max_rank, numerical_rank(pair->P));
    for (int zn = 0; zn < tables.n_obs; ++zn) {
      try {
        PairFit f = fit_pair(*pair, zn, k, options);
        if (!best || f.eig.gap > best->eig.gap) {
          best = std::move(f);
          best_z = z;
        }
      } catch (const NumericalError& e) {
        failures << " (z=" << z << ", z'=" << zn << "): " << e.what() << ";";
      }
    }
  }
  PolicyIdentification out;
  if (!best) {
    if (max_rank != 1)
      throw DistinctnessError("behavior policy at step " + std::to_string(step) +
                              " is not identified:" + failures.str());
    // Rank one means every latent row of U^a is the same: the policy ignores the latent.
    for (int z = 0; z < tables.n_obs; ++z) {
      const auto& pair = tables.action_pairs[ix(step)][ix(z)];
      if (!pair) continue;
      Matrix col = distribution_from_bordered(pair->P.row(0));
      out.policy = col.replicate(1, k);
      break;
    }
    out.state_independent = true;
    out.token.step = step;
    out.token.obs = -1;
    out.token.next_obs = -1;
    return out;
  }
  out.policy = best->dist;
  out.token = {step, best_z, best->slice, best->eig.eigenvalues};
  out.eigen_gap = best->eig.gap;
  out.condition = best->sel.condition;
  return out;
}

RewardIdentification identify_reward_model(const IsTables& tables, int step, int k,
                                           const std::optional<OrderingToken>& token,
                                           const EstimatorOptions& options) {
  check_sizes(tables, step, k);
  std::optional<PairFit> best;
  int best_a = -1, best_z = -1;
  std::ostringstream failures;
  for (int a = 0; a < tables.n_actions; ++a)
    for (int z = 0; z < tables.n_obs; ++z) {
      if (token && z != token->obs) continue;
      const auto& pair = tables.reward_pairs[ix(step)][ix(a)][ix(z)];
      if (!pair) continue;
      for (int zn = 0; zn < tables.n_obs; ++zn) {
        if (token && zn != token->next_obs) continue;
        try {
          PairFit f = fit_pair(*pair, zn, k, options);
          if (!best || f.eig.gap > best->eig.gap) {
            best = std::move(f);
            best_a = a;
            best_z = z;
          }
        } catch (const NumericalError& e) {
          failures << " (a=" << a << ", z=" << z << ", z'=" << zn << "): " << e.what() << ";";
        }
      }
    }
  if (!best)
    throw DistinctnessError("reward model at step " + std::to_string(step) + " is not identified:" +
                            failures.str());
  RewardIdentification out;
  out.reward = best->dist;
  out.action = best_a;
  out.eigen_gap = best->eig.gap;
  out.condition = best->sel.condition;
  out.token = {step, best_z, best->slice, best->eig.eigenvalues};
  if (token && token->eigenvalues.size() == best->eig.eigenvalues.size())
    out.eigenvalue_mismatch = (token->eigenvalues - best->eig.eigenvalues).cwiseAbs().maxCoeff();
  return out;
}

IdentifiedLatents identify_latents(const IsTables& tables, int k, const EstimatorOptions& options) {
  IdentifiedLatents out;
  out.horizon = tables.horizon;
  out.n_latent = k;
  for (int i = 0; i <= tables.horizon; ++i) {
    PolicyIdentification pol = identify_behavior_policy(tables, i, k, options);
    RewardIdentification rew;
    if (pol.state_independent) {
      rew = identify_reward_model(tables, i, k, std::nullopt, options);
    } else {
      // The policy and reward slices must share one token; pick the pair that is jointly best
      // conditioned rather than the policy's own favorite.
      double best_score = -1.0;
      for (int z = 0; z < tables.n_obs; ++z) {
        const auto& pair = tables.action_pairs[ix(i)][ix(z)];
        if (!pair) continue;
        for (int zn = 0; zn < tables.n_obs; ++zn) {
          try {
            PairFit f = fit_pair(*pair, zn, k, options);
            OrderingToken tok{i, z, zn, f.eig.eigenvalues};
            RewardIdentification r = identify_reward_model(tables, i, k, tok, options);
            const double score = std::min(f.eig.gap, r.eigen_gap) / std::max(f.sel.condition, r.condition);
            if (score > best_score) {
              best_score = score;
              pol.policy = f.dist;
              pol.token = tok;
              pol.eigen_gap = f.eig.gap;
              pol.condition = f.sel.condition;
              rew = std::move(r);
            }
          } catch (const Error&) {
          }
        }
      }
      if (best_score < 0.0) rew = identify_reward_model(tables, i, k, pol.token, options);
    }
    LatentStep s;
    s.policy = pol.policy;
    s.reward = rew.reward;
    s.token = pol.state_independent ? rew.token : pol.token;
    s.eigen_gap = pol.state_independent ? rew.eigen_gap : std::min(pol.eigen_gap, rew.eigen_gap);
    s.condition = std::max(pol.condition, rew.condition);
    out.steps.push_back(std::move(s));
  }
  return out;
}

LatentPosterior identify_latent_posterior(const IdentifiedLatents& identified, const IsTables& tables,
                                          const IsOptions& options) {
  const int H = identified.horizon, k = identified.n_latent;
  if (H != tables.horizon) throw UsageError("identified latents and tables disagree on the horizon");
  const double cells = static_cast<double>(ipow(ix(k), H + 1)) *
                       static_cast<double>(std::max(tables.n_rho(), tables.n_tau()));
  if (cells > static_cast<double>(options.budget))
    throw BudgetError("latent posterior needs " + std::to_string(cells) + " cells, budget " +
                      std::to_string(options.budget));
  Matrix K = Matrix::Ones(1, 1);
  for (int i = 0; i <= H; ++i) {
    const Matrix& R = identified.steps[ix(i)].reward;
    int rank = numerical_rank(R, options.rank_tol);
    if (rank < k)
      throw RankDeficiencyError("P(R_" + std::to_string(i) + " | U_" + std::to_string(i) + ") has rank " +
                                std::to_string(rank) + " below " + std::to_string(k));
    Matrix next = Eigen::kroneckerProduct(K, R).eval();
    K = std::move(next);
  }
  LatentPosterior out;
  out.reward_kron = K;
  Matrix cond = tables.reward_joint;
  out.observed.assign(ix(static_cast<int>(cond.cols())), false);
  for (Eigen::Index c = 0; c < cond.cols(); ++c) {
    double m = cond.col(c).sum();
    if (m > 0) {
      cond.col(c) /= m;
      out.observed[static_cast<std::size_t>(c)] = true;
    }
  }
  out.table = pinv_tol(K) * cond;
  for (Eigen::Index c = 0; c < out.table.cols(); ++c) {
    if (!out.observed[static_cast<std::size_t>(c)]) {
      out.table.col(c).setZero();
      continue;
    }
    double s = out.table.col(c).sum();
    if (s != 0.0) out.table.col(c) /= s;
    for (Eigen::Index r = 0; r < out.table.rows(); ++r) {
      double v = out.table(r, c);
      out.min_entry = std::min(out.min_entry, v);
      if (v < -options.negativity_tol) ++out.negative_entries;
    }
  }
  return out;
}

namespace {

struct ReturnAtoms {
  std::vector<double> values;
  std::vector<int> of_rho;
};

ReturnAtoms return_atoms(const std::vector<double>& support, int H) {
  const int R = static_cast<int>(support.size());
  const std::size_t n = ipow(ix(R), H + 1);
  std::vector<double> sums(n);
  for (std::size_t rho = 0; rho < n; ++rho) {
    std::size_t x = rho;
    double s = 0.0;
    for (int t = H; t >= 0; --t) {
      s += support[x % ix(R)];
      x /= ix(R);
    }
    sums[rho] = s;
  }
  ReturnAtoms out;
  out.values = sums;
  std::sort(out.values.begin(), out.values.end());
  out.values.erase(std::unique(out.values.begin(), out.values.end(),
                               [](double a, double b) { return std::abs(a - b) < 1e-9; }),
                   out.values.end());
  for (double s : sums) {
    auto it = std::lower_bound(out.values.begin(), out.values.end(), s - 1e-9);
    out.of_rho.push_back(static_cast<int>(it - out.values.begin()));
  }
  return out;
}

double return_of(const TrajectoryBatch& batch, std::size_t k, int H, const std::vector<double>& support) {
  double v = 0.0;
  for (int t = 0; t <= H; ++t) v += support[ix(batch.reward(k, t))];
  return v;
}

// Pi_e over the observable prefix through step H.
double eval_prob(const EvaluationPolicy& eval, const std::vector<int>& z, const std::vector<int>& a) {
  const HistoryIndexer& idx = eval.indexer();
  std::size_t h = idx.root(z[0]);
  double p = 1.0;
  for (std::size_t t = 0; t < z.size(); ++t) {
    if (t > 0) h = idx.extend(h, a[t - 1], z[t]);
    p *= eval.prob(static_cast<int>(t), h, a[t]);
  }
  return p;
}

void finish_mean(IsResult& out, const std::vector<double>& terms, const std::vector<double>& weights,
                 bool weighted) {
  double W = 0.0, S = 0.0;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    W += weights[k];
    S += weights[k] * terms[k];
  }
  out.value = W > 0 ? S / W : 0.0;
  if (!weighted && terms.size() > 1) {
    double ss = 0.0;
    for (double x : terms) ss += (x - out.value) * (x - out.value);
    out.std_err = std::sqrt(ss / static_cast<double>(terms.size() - 1) / static_cast<double>(terms.size()));
  }
}

void check_eval(const EvaluationPolicy& eval, int H, int Z, int A) {
  if (eval.horizon() < H || eval.n_obs() != Z || eval.n_actions() != A)
    throw UsageError("evaluation policy does not cover the observable space through step " +
                     std::to_string(H));
}

} // namespace

IsResult is_estimate(const TrajectoryBatch& batch, const IsTables& tables, const IdentifiedLatents& identified,
                     const LatentPosterior& posterior, const EvaluationPolicy& eval, const IsOptions& options) {
  const int H = tables.horizon, Z = tables.n_obs, A = tables.n_actions, k = identified.n_latent;
  check_eval(eval, H, Z, A);
  IsResult out;
  out.estimator = "is";
  out.negative_posterior = posterior.negative_entries;
  ReturnAtoms atoms = return_atoms(tables.reward_support, H);
  out.return_support = atoms.values;
  const auto nv = static_cast<Eigen::Index>(atoms.values.size());
  const auto n_tau = static_cast<Eigen::Index>(tables.n_tau());
  const auto n_u = static_cast<Eigen::Index>(ipow(ix(k), H + 1));

  for (const auto& s : identified.steps)
    out.floored += static_cast<int>((s.policy.array() < options.floor).count());

  // P(v | tau) from the reward table.
  Matrix pv = Matrix::Zero(nv, n_tau);
  for (Eigen::Index rho = 0; rho < tables.reward_joint.rows(); ++rho)
    pv.row(atoms.of_rho[static_cast<std::size_t>(rho)]) += tables.reward_joint.row(rho);
  for (Eigen::Index c = 0; c < n_tau; ++c) {
    double m = pv.col(c).sum();
    if (m > 0) pv.col(c) /= m;
  }

  out.weights = Matrix::Zero(nv, n_tau);
  std::vector<int> z(ix(H + 1)), a(ix(H + 1)), u(ix(H + 1));
  for (Eigen::Index tau = 0; tau < n_tau; ++tau) {
    if (!posterior.observed[static_cast<std::size_t>(tau)]) continue;
    std::size_t x = static_cast<std::size_t>(tau);
    for (int t = H; t >= 0; --t) {
      a[ix(t)] = static_cast<int>(x % ix(A));
      x /= ix(A);
      z[ix(t)] = static_cast<int>(x % ix(Z));
      x /= ix(Z);
    }
    const double pe = eval_prob(eval, z, a);
    if (pe == 0.0) continue;
    Vector D(n_u);
    for (Eigen::Index ui = 0; ui < n_u; ++ui) {
      std::size_t y = static_cast<std::size_t>(ui);
      double pb = 1.0;
      for (int t = H; t >= 0; --t) {
        int ut = static_cast<int>(y % ix(k));
        y /= ix(k);
        pb *= std::clamp(identified.steps[ix(t)].policy(a[ix(t)], ut), options.floor, 1.0);
      }
      D(ui) = posterior.table(ui, tau) / pb;
    }
    Vector G = posterior.reward_kron * D;
    Vector gamma = Vector::Zero(nv);
    for (Eigen::Index rho = 0; rho < G.size(); ++rho) gamma(atoms.of_rho[static_cast<std::size_t>(rho)]) += G(rho);
    for (Eigen::Index v = 0; v < nv; ++v)
      if (pv(v, tau) > 0) out.weights(v, tau) = pe * gamma(v) / pv(v, tau);
  }

  std::vector<double> terms, w;
  terms.reserve(batch.size());
  w.reserve(batch.size());
  for (std::size_t r = 0; r < batch.size(); ++r) {
    double v = return_of(batch, r, H, tables.reward_support);
    std::size_t rho = tables.rho_index(batch, r);
    auto tau = static_cast<Eigen::Index>(tables.tau_index(batch, r));
    terms.push_back(v * out.weights(atoms.of_rho[rho], tau));
    w.push_back(batch.weight(r));
  }
  finish_mean(out, terms, w, batch.weighted());
  return out;
}

IsResult is_naive_baseline(const TrajectoryBatch& batch, const EvaluationPolicy& eval, int H,
                           const std::vector<double>& reward_support, const IsOptions& options) {
  if (batch.horizon() < H) throw UsageError("batch is shorter than the evaluation horizon");
  const HistoryIndexer& idx = eval.indexer();
  check_eval(eval, H, idx.n_obs, idx.n_actions);
  const std::size_t A = ix(idx.n_actions);
  std::vector<std::map<std::size_t, double>> hist(ix(H + 1)), hist_a(ix(H + 1));
  auto histories = [&](std::size_t k) {
    std::vector<std::size_t> h(ix(H + 1));
    h[0] = idx.root(batch.obs(k, 0));
    for (int t = 1; t <= H; ++t) h[ix(t)] = idx.extend(h[ix(t - 1)], batch.action(k, t - 1), batch.obs(k, t));
    return h;
  };
  for (std::size_t k = 0; k < batch.size(); ++k) {
    auto h = histories(k);
    for (int t = 0; t <= H; ++t) {
      hist[ix(t)][h[ix(t)]] += batch.weight(k);
      hist_a[ix(t)][h[ix(t)] * A + ix(batch.action(k, t))] += batch.weight(k);
    }
  }
  IsResult out;
  out.estimator = "naive_is";
  std::vector<double> terms, w;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    auto h = histories(k);
    double W = 1.0;
    for (int t = 0; t <= H; ++t) {
      int a = batch.action(k, t);
      double pb = hist_a[ix(t)][h[ix(t)] * A + ix(a)] / hist[ix(t)][h[ix(t)]];
      if (pb < options.floor) {
        pb = options.floor;
        ++out.floored;
      }
      W *= eval.prob(t, h[ix(t)], a) / pb;
    }
    terms.push_back(return_of(batch, k, H, reward_support) * W);
    w.push_back(batch.weight(k));
  }
  finish_mean(out, terms, w, batch.weighted());
  return out;
}

} // namespace pope
