#include "pope/estimators.hpp"

#include "pope/errors.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace pope {

double EstimateReport::clipped(int t, int r) const {
  return std::clamp(reward_probs.at(static_cast<std::size_t>(t))(r), 0.0, 1.0);
}

double value_from_marginals(const std::vector<Vector>& probs, const std::vector<double>& support) {
  double v = 0.0;
  for (const auto& p : probs)
    for (Eigen::Index r = 0; r < p.size(); ++r) v += support[static_cast<std::size_t>(r)] * p(r);
  return v;
}

namespace {

std::size_t ix(int i) { return static_cast<std::size_t>(i); }

EventSpace act_space(const PomdpSpec& s, int t) { return build_event_space(s, EventKind::action, t); }
EventSpace obs_space(const PomdpSpec& s, int t) {
  return build_event_space(s, EventKind::single_observation, t);
}

EventSpace past_space(const PomdpSpec& spec, PastKind kind, int i) {
  return kind == PastKind::history ? estimator_history(spec, i) : previous_observation(spec, i);
}

std::vector<RowVector> reward_rows(const TrajectoryBatch& batch, const PomdpSpec& spec, int t,
                                   const EventSpace& past) {
  EventSpace slice = EventSpace::concat(
      EventSpace::concat(build_event_space(spec, EventKind::reward, t), obs_space(spec, t)),
      act_space(spec, t));
  MomentTable m = estimate_moment(batch, {empty_space(), past, slice});
  std::vector<RowVector> out;
  for (const auto& e : m.entries) out.push_back(e.row(0));
  return out;
}

void check_batch_reach(const TrajectoryBatch& batch, const PomdpSpec& spec, int needed) {
  if (batch.horizon() < needed)
    throw UsageError("batch horizon " + std::to_string(batch.horizon()) + " is shorter than the " +
                     std::to_string(needed) + " steps the estimator needs");
  if (spec.horizon < needed)
    throw UsageError("spec horizon " + std::to_string(spec.horizon) + " is shorter than " +
                     std::to_string(needed));
}

Vector colsum(const Matrix& m) { return m.colwise().sum().transpose(); }

// Divides columns by the given masses; zero masses give zero columns.
Matrix divide_columns(const Matrix& m, const Vector& mass, int* zero_count = nullptr) {
  Matrix out = m;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    if (mass(c) == 0.0) {
      out.col(c).setZero();
      if (zero_count) ++*zero_count;
    } else {
      out.col(c) /= mass(c);
    }
  }
  return out;
}

RowVector divide_columns(const RowVector& v, const Vector& mass) {
  RowVector out = v;
  for (Eigen::Index c = 0; c < v.size(); ++c) out(c) = mass(c) == 0.0 ? 0.0 : v(c) / mass(c);
  return out;
}

EstimateReport make_report(const std::string& name, const std::vector<Vector>& probs,
                           const std::vector<double>& support, std::vector<StepDiagnostics> diag) {
  EstimateReport r;
  r.estimator = name;
  r.reward_support = support;
  r.reward_probs = probs;
  r.value = value_from_marginals(probs, support);
  r.diagnostics = std::move(diag);
  return r;
}

} // namespace

SpectralTables build_spectral_tables(const TrajectoryBatch& batch, const PomdpSpec& spec,
                                     PastKind past, int eval_horizon) {
  check_batch_reach(batch, spec, eval_horizon);
  SpectralTables t;
  t.past = past;
  t.horizon = eval_horizon;
  t.n_obs = spec.n_obs;
  t.n_actions = spec.n_actions;
  t.n_rewards = spec.n_rewards();
  t.reward_support = spec.reward_support;
  for (int i = 0; i <= eval_horizon; ++i) {
    EventSpace p = past_space(spec, past, i);
    t.past_spaces.push_back(p);
    t.current.push_back(estimate_moment(batch, {obs_space(spec, i), p, act_space(spec, i)}).entries);
    if (i < eval_horizon) {
      EventSpace slice = EventSpace::concat(obs_space(spec, i), act_space(spec, i));
      t.transfer.push_back(estimate_moment(batch, {obs_space(spec, i + 1), p, slice}).entries);
    }
    t.reward.push_back(reward_rows(batch, spec, i, p));
  }
  t.initial_obs = estimate_moment(batch, {obs_space(spec, 0), empty_space(), empty_space()}).at(0).col(0);
  return t;
}

SpectralTables marginalize_to_one_step(const SpectralTables& h) {
  if (h.past == PastKind::previous_observation) return h;
  SpectralTables o = h;
  o.past = PastKind::previous_observation;
  const int Z = h.n_obs;
  for (int i = 1; i <= h.horizon; ++i) {
    const EventSpace& hs = h.past_spaces[ix(i)];
    // Field 2(i-1) of the history is z_{i-1}.
    Matrix S = Matrix::Zero(static_cast<Eigen::Index>(hs.size()), Z);
    for (std::size_t a = 0; a < hs.size(); ++a) S(static_cast<Eigen::Index>(a), hs.decode_raw(a)[ix(2 * (i - 1))]) = 1.0;
    o.past_spaces[ix(i)] = EventSpace(EventKind::single_observation, {{FieldKind::obs, i - 1, Z}});
    for (auto& m : o.current[ix(i)]) m = m * S;
    if (i < h.horizon)
      for (auto& m : o.transfer[ix(i)]) m = m * S;
    for (auto& v : o.reward[ix(i)]) v = v * S;
  }
  return o;
}

std::vector<Vector> evaluate_chain(const ChainModel& c, const EvaluationPolicy& eval) {
  if (eval.horizon() < c.horizon)
    throw UsageError("evaluation policy covers fewer steps than the estimator horizon");
  const int Z = c.n_obs, A = c.n_actions, R = c.n_rewards;
  const HistoryIndexer& idx = eval.indexer();
  std::vector<Vector> out(ix(c.horizon + 1), Vector::Zero(R));
  struct Frame {
    const ChainModel& c;
    const EvaluationPolicy& eval;
    const HistoryIndexer& idx;
    std::vector<Vector>& out;
    int Z, A, R;
    void visit(int t, std::size_t h, int z, double w, const Vector* prev, int prev_za) {
      for (int a = 0; a < A; ++a) {
        const double p = eval.prob(t, h, a);
        if (p == 0.0) continue;
        Vector s = t == 0 ? c.start[ix(a)] : Vector(c.K[ix(t - 1)][ix(prev_za)][ix(a)] * *prev);
        const double wp = w * p;
        for (int r = 0; r < R; ++r) out[ix(t)](r) += wp * c.rho[ix(t)][ix((r * Z + z) * A + a)].dot(s);
        if (t < c.horizon)
          for (int zn = 0; zn < Z; ++zn) visit(t + 1, idx.extend(h, a, zn), zn, wp, &s, z * A + a);
      }
    }
  } frame{c, eval, idx, out, Z, A, R};
  for (int z0 = 0; z0 < Z; ++z0) frame.visit(0, idx.root(z0), z0, 1.0, nullptr, -1);
  return out;
}

EstimateReport ope_baseline(const SpectralTables& tables, const EvaluationPolicy& eval,
                            const EstimatorOptions&) {
  if (tables.past != PastKind::previous_observation)
    throw UsageError("the baseline needs one-step tables");
  const int H = tables.horizon, Z = tables.n_obs, A = tables.n_actions, R = tables.n_rewards;
  std::vector<StepDiagnostics> diag(ix(H + 1));
  std::vector<std::vector<Matrix>> Cinv(ix(H + 1));
  std::vector<std::vector<Vector>> mass(ix(H + 1));
  for (int i = 0; i <= H; ++i) {
    diag[ix(i)].t = i;
    for (int a = 0; a < A; ++a) {
      Vector m = colsum(tables.current[ix(i)][ix(a)]);
      Matrix C = divide_columns(tables.current[ix(i)][ix(a)], m, &diag[ix(i)].zero_mass_columns);
      diag[ix(i)].condition = std::max(diag[ix(i)].condition, condition_number(C));
      Eigen::FullPivLU<Matrix> lu(C);
      if (!lu.isInvertible())
        throw SingularMatrixError("P(Z_" + std::to_string(i) + " | a_" + std::to_string(i) + "=" +
                                  std::to_string(a) + ", Z_" + std::to_string(i - 1) +
                                  ") is singular at step " + std::to_string(i));
      Cinv[ix(i)].push_back(lu.inverse());
      mass[ix(i)].push_back(m);
    }
  }
  ChainModel c{H, Z, A, R, {}, {}, {}};
  for (int a = 0; a < A; ++a) c.start.push_back(Cinv[0][ix(a)] * tables.initial_obs);
  for (int i = 0; i < H; ++i) {
    c.K.emplace_back(ix(Z * A));
    for (int z = 0; z < Z; ++z)
      for (int a = 0; a < A; ++a) {
        Matrix B = divide_columns(tables.transfer[ix(i)][ix(z * A + a)], mass[ix(i)][ix(a)]);
        for (int an = 0; an < A; ++an) c.K[ix(i)][ix(z * A + a)].push_back(Cinv[ix(i + 1)][ix(an)] * B);
      }
  }
  for (int t = 0; t <= H; ++t) {
    c.rho.emplace_back();
    for (int r = 0; r < R; ++r)
      for (int z = 0; z < Z; ++z)
        for (int a = 0; a < A; ++a)
          c.rho[ix(t)].push_back(divide_columns(tables.reward[ix(t)][ix((r * Z + z) * A + a)], mass[ix(t)][ix(a)]));
  }
  if (static_cast<int>(c.rho.size()) != H + 1) throw UsageError("malformed tables");
  auto probs = evaluate_chain(c, eval);
  return make_report("baseline", probs, tables.reward_support, std::move(diag));
}

namespace {

EstimateReport spectral_generic(const SpectralTables& tables, const EvaluationPolicy& eval, int k,
                                const EstimatorOptions& options, const std::string& name) {
  const int H = tables.horizon, Z = tables.n_obs, A = tables.n_actions, R = tables.n_rewards;
  if (k < 1 || k > Z) throw UsageError("latent count must lie in 1..|Z|");
  std::vector<StepDiagnostics> diag(ix(H + 1));
  std::vector<std::vector<Matrix>> M(ix(H + 1)), Mp(ix(H + 1));
  std::vector<std::vector<Vector>> mass(ix(H + 1));
  for (int i = 0; i <= H; ++i) {
    StepDiagnostics& d = diag[ix(i)];
    d.t = i;
    for (int a = 0; a < A; ++a) {
      Vector m = colsum(tables.current[ix(i)][ix(a)]);
      Matrix P = options.conditional ? divide_columns(tables.current[ix(i)][ix(a)], m, &d.zero_mass_columns)
                                     : tables.current[ix(i)][ix(a)];
      Projection proj = options.projection == ProjectionStrategy::random
                            ? random_projection(P, k, options.projection_seed + static_cast<std::uint64_t>(i * A + a))
                            : svd_projection(P, k);
      Matrix G = proj.M * P;
      d.sigma_ratio = std::min(d.sigma_ratio, proj.sigma_ratio);
      d.condition = std::max(d.condition, condition_number(G));
      M[ix(i)].push_back(proj.M);
      Mp[ix(i)].push_back(pinv_tol(G, options.pinv_tol));
      mass[ix(i)].push_back(options.conditional ? m : Vector::Ones(m.size()));
    }
  }
  ChainModel c{H, Z, A, R, {}, {}, {}};
  for (int a = 0; a < A; ++a) c.start.push_back(M[0][ix(a)] * tables.initial_obs);
  for (int i = 0; i < H; ++i) {
    c.K.emplace_back(ix(Z * A));
    for (int z = 0; z < Z; ++z)
      for (int a = 0; a < A; ++a) {
        Matrix BM = divide_columns(tables.transfer[ix(i)][ix(z * A + a)], mass[ix(i)][ix(a)]) * Mp[ix(i)][ix(a)];
        for (int an = 0; an < A; ++an) c.K[ix(i)][ix(z * A + a)].push_back(M[ix(i + 1)][ix(an)] * BM);
      }
  }
  for (int t = 0; t <= H; ++t) {
    c.rho.emplace_back();
    for (int r = 0; r < R; ++r)
      for (int z = 0; z < Z; ++z)
        for (int a = 0; a < A; ++a)
          c.rho[ix(t)].push_back(
              divide_columns(tables.reward[ix(t)][ix((r * Z + z) * A + a)], mass[ix(t)][ix(a)]) * Mp[ix(t)][ix(a)]);
  }
  auto probs = evaluate_chain(c, eval);
  return make_report(name, probs, tables.reward_support, std::move(diag));
}

} // namespace

EstimateReport ope_spectral_onestep(const SpectralTables& tables, const EvaluationPolicy& eval,
                                    int n_latent, const EstimatorOptions& options) {
  if (tables.past != PastKind::previous_observation)
    throw UsageError("the one-step estimator needs one-step tables");
  EstimatorOptions o = options;
  if (o.projection == ProjectionStrategy::marginalize_then_project) o.projection = ProjectionStrategy::svd_top_k;
  return spectral_generic(tables, eval, n_latent, o, "onestep");
}

EstimateReport ope_spectral_history(const SpectralTables& tables, const EvaluationPolicy& eval,
                                    int n_latent, const EstimatorOptions& options) {
  if (options.projection == ProjectionStrategy::marginalize_then_project) {
    EstimateReport r = ope_spectral_onestep(marginalize_to_one_step(tables), eval, n_latent, options);
    r.estimator = "history";
    return r;
  }
  if (tables.past != PastKind::history) throw UsageError("the history estimator needs history tables");
  return spectral_generic(tables, eval, n_latent, options, "history");
}

FutureTables build_future_tables(const TrajectoryBatch& batch, const PomdpSpec& spec,
                                 int eval_horizon, const EstimatorOptions& options) {
  const int d = options.future_depth;
  if (d < 0) throw UsageError("future depth must be non-negative");
  check_batch_reach(batch, spec, eval_horizon + d);
  FutureTables t;
  t.horizon = eval_horizon;
  t.n_obs = spec.n_obs;
  t.n_actions = spec.n_actions;
  t.n_rewards = spec.n_rewards();
  t.reward_support = spec.reward_support;
  for (int j = 0; j <= eval_horizon; ++j) {
    EventSpace past = estimator_history(spec, j, true);
    EventSpaceOptions fo;
    fo.depth = d;
    EventSpace F = build_event_space(spec, EventKind::future_window, j, fo);
    if (options.coarsen_future_to_next_action && d >= 1) F = F.coarsen_to_field(2);
    t.past_spaces.push_back(past);
    t.future_spaces.push_back(F);
    t.future_joint.push_back(estimate_moment(batch, {F, past, act_space(spec, j)}).entries);
    t.augmented.emplace_back();
    for (int a = 0; a < spec.n_actions; ++a)
      t.augmented.back().push_back(augmented_future(batch, spec, j, a, past, F));
    t.reward.push_back(reward_rows(batch, spec, j, past));
  }
  return t;
}

namespace {

std::vector<int> best_alignment(const Matrix& ref, const Matrix& other) {
  const int k = static_cast<int>(ref.rows());
  std::vector<int> perm(ix(k));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_score = -std::numeric_limits<double>::infinity();
  do {
    double score = 0.0;
    for (int u = 0; u < k; ++u) {
      double n = ref.row(u).norm() * other.row(perm[ix(u)]).norm();
      score += n > 0 ? ref.row(u).dot(other.row(perm[ix(u)])) / n : 0.0;
    }
    if (score > best_score) {
      best_score = score;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

} // namespace

FutureSystem identify_future_system(const FutureTables& tables, int j, int k,
                                    const EstimatorOptions& options) {
  const int A = tables.n_actions;
  FutureSystem sys;
  std::vector<Matrix> G(ix(A));
  for (int a = 0; a < A; ++a) {
    const AugmentedPair& pair = tables.augmented[ix(j)][ix(a)];
    ColumnSelection sel = select_columns(pair.P, k);
    sys.condition = std::max(sys.condition, sel.condition);
    Matrix PLp = pinv_tol(pair.P * sel.selector, options.pinv_tol);
    std::optional<EigenIdentification> best;
    int best_r = -1;
    std::ostringstream failures;
    for (std::size_t r = 0; r < pair.Q.size(); ++r) {
      try {
        EigenIdentification id = eigendecompose_normalized(PLp * pair.Q[r] * sel.selector, options.eigen);
        if (!best || id.gap > best->gap) {
          best = id;
          best_r = static_cast<int>(r);
        }
      } catch (const NumericalError& e) {
        failures << " r=" << r << ": " << e.what() << ";";
      }
    }
    if (!best)
      throw DistinctnessError("no reward slice identifies the future system at step " +
                              std::to_string(j) + ", action " + std::to_string(a) + ":" + failures.str());
    sys.reward_slice.push_back(best_r);
    sys.eigen_gap = std::min(sys.eigen_gap, best->gap);
    Extension ext = extend_columns(pair.P, sel.columns, best->U, options.extension_tol);
    Matrix Y = distribution_from_bordered(ext.U);
    G[ix(a)] = pinv_tol(Y, options.pinv_tol) * tables.future_joint[ix(j)][ix(a)];
    sys.emission.push_back(Y);
  }
  // Eigen orderings are per action; align every action's latent order with action 0.
  sys.latent_joint = G[0];
  for (int a = 1; a < A; ++a) {
    std::vector<int> perm = best_alignment(G[0], G[ix(a)]);
    Matrix Gp(G[ix(a)].rows(), G[ix(a)].cols());
    Matrix Yp(sys.emission[ix(a)].rows(), sys.emission[ix(a)].cols());
    for (int u = 0; u < k; ++u) {
      Gp.row(u) = G[ix(a)].row(perm[ix(u)]);
      Yp.col(u) = sys.emission[ix(a)].col(perm[ix(u)]);
    }
    sys.latent_joint += Gp;
    sys.emission[ix(a)] = Yp;
  }
  return sys;
}

EstimateReport ope_spectral_future(const FutureTables& tables, const EvaluationPolicy& eval,
                                   int k, const EstimatorOptions& options) {
  const int H = tables.horizon, Z = tables.n_obs, A = tables.n_actions, R = tables.n_rewards;
  std::vector<StepDiagnostics> diag(ix(H + 1));
  std::vector<FutureSystem> sys;
  std::vector<std::vector<Matrix>> M(ix(H + 1)), Mp(ix(H + 1));
  for (int j = 0; j <= H; ++j) {
    StepDiagnostics& d = diag[ix(j)];
    d.t = j;
    try {
      sys.push_back(identify_future_system(tables, j, k, options));
    } catch (NumericalError& e) {
      throw NumericalError("future system at step " + std::to_string(j) + ": " + e.what());
    }
    d.eigen_gap = sys.back().eigen_gap;
    d.condition = sys.back().condition;
    for (int a = 0; a < A; ++a) {
      const Matrix& P = tables.future_joint[ix(j)][ix(a)];
      Projection proj = options.projection == ProjectionStrategy::random
                            ? random_projection(P, k, options.projection_seed + static_cast<std::uint64_t>(j * A + a))
                            : svd_projection(P, k);
      Matrix G = proj.M * P;
      d.sigma_ratio = std::min(d.sigma_ratio, proj.sigma_ratio);
      d.condition = std::max(d.condition, condition_number(G));
      M[ix(j)].push_back(proj.M);
      Mp[ix(j)].push_back(pinv_tol(G, options.pinv_tol));
    }
  }
  ChainModel c{H, Z, A, R, {}, {}, {}};
  Vector p_u0 = sys[0].latent_joint.rowwise().sum();
  for (int a = 0; a < A; ++a) c.start.push_back(M[0][ix(a)] * sys[0].emission[ix(a)] * p_u0);
  for (int i = 0; i < H; ++i) {
    const Eigen::Index np = static_cast<Eigen::Index>(tables.past_spaces[ix(i)].size());
    const Matrix& S = sys[ix(i + 1)].latent_joint;
    c.K.emplace_back(ix(Z * A));
    for (int z = 0; z < Z; ++z)
      for (int a = 0; a < A; ++a) {
        // Columns of S whose history ends with (z_i = z, a_i = a).
        Matrix Sza(S.rows(), np);
        for (Eigen::Index h = 0; h < np; ++h) Sza.col(h) = S.col((h * Z + z) * A + a);
        Matrix right = Sza * Mp[ix(i)][ix(a)];
        for (int an = 0; an < A; ++an)
          c.K[ix(i)][ix(z * A + a)].push_back(M[ix(i + 1)][ix(an)] * sys[ix(i + 1)].emission[ix(an)] * right);
      }
  }
  for (int t = 0; t <= H; ++t) {
    c.rho.emplace_back();
    for (int r = 0; r < R; ++r)
      for (int z = 0; z < Z; ++z)
        for (int a = 0; a < A; ++a)
          c.rho[ix(t)].push_back(tables.reward[ix(t)][ix((r * Z + z) * A + a)] * Mp[ix(t)][ix(a)]);
  }
  auto probs = evaluate_chain(c, eval);
  return make_report("future", probs, tables.reward_support, std::move(diag));
}

std::string report_csv_header(const EstimateReport& report, bool with_truth) {
  std::ostringstream os;
  os << "estimator,t";
  for (std::size_t r = 0; r < report.reward_support.size(); ++r) os << ",p_r" << r;
  for (std::size_t r = 0; r < report.reward_support.size(); ++r) os << ",p_r" << r << "_clipped";
  os << ",expected_reward";
  if (with_truth) os << ",true_p_r1,residual";
  os << ",condition,sigma_ratio,eigen_gap,zero_mass_columns,note\n";
  return os.str();
}

std::string report_csv_rows(const EstimateReport& report, const std::optional<std::vector<Vector>>& truth) {
  std::ostringstream os;
  os.precision(17);
  const int R = static_cast<int>(report.reward_support.size());
  for (int t = 0; t <= report.horizon(); ++t) {
    const Vector& p = report.reward_probs[ix(t)];
    os << report.estimator << "," << t;
    for (int r = 0; r < R; ++r) os << "," << p(r);
    for (int r = 0; r < R; ++r) os << "," << report.clipped(t, r);
    double e = 0.0;
    for (int r = 0; r < R; ++r) e += report.reward_support[ix(r)] * p(r);
    os << "," << e;
    if (truth) {
      const int r1 = R > 1 ? 1 : 0;
      double want = (*truth)[ix(t)](r1);
      os << "," << want << "," << std::abs(p(r1) - want);
    }
    const StepDiagnostics& d = report.diagnostics[ix(t)];
    os << "," << d.condition << "," << d.sigma_ratio << "," << d.eigen_gap << "," << d.zero_mass_columns
       << "," << d.note << "\n";
  }
  return os.str();
}

} // namespace pope
