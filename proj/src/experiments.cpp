#include "pope/experiments.hpp"

#include "pope/errors.hpp"
#include "pope/oracle.hpp"
#include "pope/serialize.hpp"
#include "pope/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace pope {

namespace {

std::size_t ix(int i) { return static_cast<std::size_t>(i); }

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix(mix(mix(seed) ^ a) ^ (b + 0x51ed27ULL));
}

// Consumes unit-cube parameters in a fixed order. Without a theta it only counts.
class ThetaReader {
public:
  explicit ThetaReader(const std::vector<double>* theta) : theta_(theta) {}
  double next() {
    double x = theta_ ? theta_->at(pos_) : 0.5;
    ++pos_;
    return x;
  }
  Matrix stochastic(int rows, int cols) {
    Matrix m(rows, cols);
    for (int c = 0; c < cols; ++c) {
      for (int r = 0; r < rows; ++r) m(r, c) = next();
      double s = m.col(c).sum();
      if (s > 0) m.col(c) /= s;
      else m.col(c).setConstant(1.0 / rows);
    }
    return m;
  }
  std::size_t used() const { return pos_; }

private:
  const std::vector<double>* theta_;
  std::size_t pos_ = 0;
};

std::vector<Matrix> stochastic_list(ThetaReader& r, int count, int rows, int cols) {
  std::vector<Matrix> out;
  for (int i = 0; i < count; ++i) out.push_back(r.stochastic(rows, cols));
  return out;
}

PomdpSpec base_spec(const EnvSizes& s) {
  PomdpSpec spec;
  spec.n_states = s.n_states;
  spec.n_obs = s.n_obs;
  spec.n_actions = s.n_actions;
  spec.reward_support = s.reward_support;
  spec.horizon = s.horizon;
  return spec;
}

EnvSizes family_sizes(EnvFamily f, const EnvSizes& s) {
  EnvSizes out = s;
  if (f == EnvFamily::violate_invertibility) {
    out.n_states = out.n_obs = out.n_actions = 2;
  }
  if (f == EnvFamily::is_wellconditioned) out.n_states = static_cast<int>(out.reward_support.size());
  return out;
}

std::optional<GeneratedEnv> build(EnvFamily family, const EnvSizes& in, ThetaReader& r) {
  const EnvSizes s = family_sizes(family, in);
  const int U = s.n_states, Z = s.n_obs, A = s.n_actions, H = s.horizon;
  const int R = static_cast<int>(s.reward_support.size());
  GeneratedEnv env;
  env.family = family;
  PomdpSpec spec = base_spec(s);
  std::vector<Matrix> behavior;
  switch (family) {
  case EnvFamily::random:
    spec.transition = stochastic_list(r, A, U, U);
    spec.emission = r.stochastic(Z, U);
    spec.reward_model = stochastic_list(r, A, R, U);
    spec.initial = r.stochastic(U, 1).col(0);
    behavior = stochastic_list(r, H + 1, A, U);
    break;
  case EnvFamily::violate_invertibility: {
    const double rho0 = r.next(), rho1 = r.next(), a = r.next(), b = r.next(), c = r.next();
    const double eps = r.next(), delta = r.next(), s0 = r.next();
    // Equal marginal transition rows make z_{i-1} independent of u_i.
    const double d = (a * eps + b * (1 - eps) - c * delta) / (1 - delta);
    env.params = {{"rho0", rho0}, {"rho1", rho1}, {"a", a},         {"b", b},  {"c", c},
                  {"d", d},       {"eps", eps},   {"delta", delta}, {"s0", s0}};
    spec.emission = (Matrix(2, 2) << rho0, rho1, 1 - rho0, 1 - rho1).finished();
    spec.transition = {(Matrix(2, 2) << a, c, 1 - a, 1 - c).finished(),
                       (Matrix(2, 2) << b, d, 1 - b, 1 - d).finished()};
    spec.initial = (Vector(2) << s0, 1 - s0).finished();
    spec.reward_model = stochastic_list(r, A, R, U);
    behavior.assign(ix(H + 1), (Matrix(2, 2) << eps, delta, 1 - eps, 1 - delta).finished());
    if (!(d >= 0.0 && d <= 1.0) || !std::isfinite(d)) {
      stochastic_list(r, H + 1, A, Z);
      return std::nullopt;
    }
    break;
  }
  case EnvFamily::violate_history_rank: {
    Vector col = r.stochastic(Z, 1).col(0);
    spec.emission = col.replicate(1, U);
    spec.pre_emission = r.stochastic(Z, U);
    spec.transition = stochastic_list(r, A, U, U);
    spec.reward_model = stochastic_list(r, A, R, U);
    spec.initial = r.stochastic(U, 1).col(0);
    behavior = stochastic_list(r, H + 1, A, U);
    env.params = {{"rho", col(0)}};
    break;
  }
  case EnvFamily::is_wellconditioned: {
    Matrix T = r.stochastic(U, U);
    spec.transition.assign(ix(A), T);
    spec.emission = r.stochastic(Z, U);
    Matrix Rm = r.stochastic(R, U);
    spec.reward_model.assign(ix(A), Rm);
    spec.initial = r.stochastic(U, 1).col(0);
    behavior = stochastic_list(r, H + 1, A, U);
    break;
  }
  }
  env.evaluation = EvaluationPolicy::reactive(stochastic_list(r, H + 1, A, Z), Z, A);
  behavior.push_back(behavior.back());
  env.behavior.steps = std::move(behavior);
  env.spec = std::move(spec);
  return env;
}

double sigma(const Matrix& m, int i) {
  Vector s = singular_values(m);
  return i < s.size() ? s(i) : 0.0;
}

void add(GeneratedEnv& env, std::string name, double value, bool passed) {
  env.checks.push_back({std::move(name), value, passed});
}

std::string step_name(const char* what, int i, int a) {
  return std::string(what) + "[i=" + std::to_string(i) + ",a=" + std::to_string(a) + "]";
}

BehaviorPolicy truncated_behavior(const BehaviorPolicy& b, int H) {
  BehaviorPolicy out;
  out.steps.assign(b.steps.begin(), b.steps.begin() + H + 1);
  return out;
}

} // namespace

const char* to_string(EnvFamily f) {
  switch (f) {
  case EnvFamily::random: return "random";
  case EnvFamily::violate_invertibility: return "violate-invertibility";
  case EnvFamily::violate_history_rank: return "violate-history-rank";
  case EnvFamily::is_wellconditioned: return "is-wellconditioned";
  }
  return "random";
}

EnvFamily env_family_from_string(const std::string& s) {
  for (EnvFamily f : {EnvFamily::random, EnvFamily::violate_invertibility, EnvFamily::violate_history_rank,
                      EnvFamily::is_wellconditioned})
    if (s == to_string(f)) return f;
  throw UsageError("unknown environment family '" + s +
                   "' (random, violate-invertibility, violate-history-rank, is-wellconditioned)");
}

bool GeneratedEnv::verified() const {
  return std::all_of(checks.begin(), checks.end(), [](const VerificationCheck& c) { return c.passed; });
}

std::size_t theta_size(EnvFamily family, const EnvSizes& sizes) {
  ThetaReader r(nullptr);
  build(family, sizes, r);
  return r.used();
}

std::optional<GeneratedEnv> build_env(EnvFamily family, const EnvSizes& sizes, const std::vector<double>& theta) {
  if (theta.size() != theta_size(family, sizes))
    throw UsageError("family " + std::string(to_string(family)) + " needs " +
                     std::to_string(theta_size(family, sizes)) + " parameters, got " + std::to_string(theta.size()));
  ThetaReader r(&theta);
  auto env = build(family, sizes, r);
  if (env) env->theta = theta;
  return env;
}

Zeta invertibility_zeta(double rho0, double rho1, double a, double b, double c, double d, double eps,
                        double delta, double s) {
  const double p0 = a * eps * s + b * (1 - eps) * s;             // P(u_{i-1}=0, u_i=0)
  const double p1 = c * delta * (1 - s) + d * (1 - delta) * (1 - s); // P(u_{i-1}=1, u_i=0)
  const double q0 = (1 - a) * eps * s + (1 - b) * (1 - eps) * s;
  const double q1 = (1 - c) * delta * (1 - s) + (1 - d) * (1 - delta) * (1 - s);
  return {(rho0 * p0 + rho1 * p1) / (p0 + p1), (rho0 * q0 + rho1 * q1) / (q0 + q1)};
}

void verify_env(GeneratedEnv& env) {
  env.checks.clear();
  const PomdpSpec& spec = env.spec;
  const int H = spec.horizon, U = spec.n_states, A = spec.n_actions;
  add(env, "spec_valid", 0.0, !has_errors(validate_spec(spec)) &&
                                  !has_errors(validate_behavior(env.data_spec(), env.behavior)));
  if (!env.checks.back().passed) return;
  switch (env.family) {
  case EnvFamily::random: {
    auto exact = enumerate_behavior(spec, truncated_behavior(env.behavior, H));
    auto t = build_spectral_tables(exact, spec, PastKind::previous_observation, H);
    for (int i = 0; i <= H; ++i)
      for (int a = 0; a < A; ++a) {
        int rank = numerical_rank(t.current[ix(i)][ix(a)]);
        add(env, step_name("rank P(Z_i,a_i,Z_{i-1})", i, a), rank, rank == U);
      }
    break;
  }
  case EnvFamily::violate_invertibility: {
    auto exact = enumerate_behavior(spec, truncated_behavior(env.behavior, H));
    auto one = build_spectral_tables(exact, spec, PastKind::previous_observation, H);
    auto hist = build_spectral_tables(exact, spec, PastKind::history, H);
    for (int i = 1; i <= H; ++i)
      for (int a = 0; a < A; ++a) {
        Matrix cond = one.current[ix(i)][ix(a)];
        for (Eigen::Index c = 0; c < cond.cols(); ++c)
          if (cond.col(c).sum() > 0) cond.col(c) /= cond.col(c).sum();
        double s2 = sigma(cond, 1);
        add(env, step_name("sigma2 P(Z_i|a_i,Z_{i-1})", i, a), s2, s2 < 1e-10);
      }
    for (int i = 0; i <= H; ++i)
      for (int a = 0; a < A; ++a) {
        int rank = numerical_rank(hist.current[ix(i)][ix(a)]);
        add(env, step_name("rank P(Z_i,a_i,H_{i-1})", i, a), rank, rank == U);
      }
    const auto& p = env.params;
    double s = p.at("s0");
    for (int i = 1; i <= H; ++i) {
      Zeta z = invertibility_zeta(p.at("rho0"), p.at("rho1"), p.at("a"), p.at("b"), p.at("c"), p.at("d"),
                                  p.at("eps"), p.at("delta"), s);
      add(env, "|zeta0-zeta1| at i=" + std::to_string(i), std::abs(z.zeta0 - z.zeta1),
          std::abs(z.zeta0 - z.zeta1) < 1e-12);
      s = s * (p.at("a") * p.at("eps") + p.at("b") * (1 - p.at("eps"))) +
          (1 - s) * (p.at("c") * p.at("delta") + p.at("d") * (1 - p.at("delta")));
    }
    break;
  }
  case EnvFamily::violate_history_rank: {
    const PomdpSpec data = env.data_spec();
    auto exact = enumerate_behavior(data, env.behavior);
    auto hist = build_spectral_tables(exact, data, PastKind::history, H);
    for (int i = 0; i <= H; ++i)
      for (int a = 0; a < A; ++a) {
        double s2 = sigma(hist.current[ix(i)][ix(a)], 1);
        add(env, step_name("sigma2 P(Z_i,a_i,H_{i-1})", i, a), s2, s2 < 1e-10);
      }
    auto fut = build_future_tables(exact, data, H);
    for (int j = 0; j <= H; ++j)
      for (int a = 0; a < A; ++a) {
        int rank = numerical_rank(fut.future_joint[ix(j)][ix(a)]);
        add(env, step_name("rank P(A_{i+1},a_i,past_i)", j, a), rank, rank == U);
      }
    double spread = 0.0;
    for (int u = 1; u < U; ++u) spread = std::max(spread, (spec.emission.col(u) - spec.emission.col(0)).norm());
    add(env, "emission column spread", spread, spread == 0.0);
    break;
  }
  case EnvFamily::is_wellconditioned: {
    Matrix next_obs = spec.emission * spec.transition[0]; // P(z_{i+1} | u_i)
    double gap = std::numeric_limits<double>::infinity();
    for (Eigen::Index z = 0; z < next_obs.rows(); ++z) {
      for (int u = 0; u < U; ++u)
        for (int v = u + 1; v < U; ++v) gap = std::min(gap, std::abs(next_obs(z, u) - next_obs(z, v)));
    }
    add(env, "min distinctness gap of P(z_{i+1}|u_i)", gap, gap > 1e-6);
    int rank = numerical_rank(spec.reward_model[0]);
    add(env, "rank P(R|U)", rank, rank == U);
    double pos = 1.0;
    for (const auto& m : env.behavior.steps) pos = std::min(pos, m.minCoeff());
    add(env, "min behavior probability", pos, pos > 0.0);
    add(env, "|A| >= |U|", A, A >= U);
    add(env, "|Z| >= |U|", spec.n_obs, spec.n_obs >= U);
    break;
  }
  }
}

namespace {

GeneratedEnv draw_verified(EnvFamily family, const EnvSizes& sizes, std::uint64_t seed) {
  const std::size_t d = theta_size(family, sizes);
  std::optional<GeneratedEnv> last;
  for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
    std::mt19937_64 gen(derive(seed, attempt, 7));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> theta(d);
    for (double& x : theta) x = unif(gen);
    auto env = build_env(family, sizes, theta);
    if (!env) continue;
    verify_env(*env);
    if (env->verified()) return *env;
    last = std::move(env);
  }
  if (last) return *last;
  throw ValidationError(std::string("no feasible ") + to_string(family) + " environment in 1000 draws");
}

} // namespace

GeneratedEnv gen_random_env(const EnvSizes& sizes, std::uint64_t seed) {
  return draw_verified(EnvFamily::random, sizes, seed);
}

GeneratedEnv gen_env_violating_invertibility(std::uint64_t seed, int horizon) {
  EnvSizes s;
  s.horizon = horizon;
  return draw_verified(EnvFamily::violate_invertibility, s, seed);
}

GeneratedEnv gen_env_violating_history_rank(std::uint64_t seed, int horizon) {
  EnvSizes s;
  s.horizon = horizon;
  return draw_verified(EnvFamily::violate_history_rank, s, seed);
}

GeneratedEnv gen_is_env(std::uint64_t seed, int horizon) {
  EnvSizes s;
  s.horizon = horizon;
  return draw_verified(EnvFamily::is_wellconditioned, s, seed);
}

// Perturbs each exact record weight by Gaussian noise of its sampling scale at n draws and
// reruns the full IS pipeline.
double is_spread(const TrajectoryBatch& exact, const GeneratedEnv& env, double truth, const SearchOptions& options) {
  const int H = env.spec.horizon, U = env.spec.n_states;
  const double n = static_cast<double>(options.sensitivity_n);
  std::mt19937_64 gen(derive(options.sensitivity_n, 0x5e75));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double total = exact.total_weight();
  double sq = 0.0;
  for (int rep = 0; rep < options.sensitivity_reps; ++rep) {
    std::vector<double> w(exact.size());
    for (std::size_t k = 0; k < exact.size(); ++k) {
      const double p = exact.weight(k) / total;
      w[k] = std::max(0.0, p + std::sqrt(p * (1.0 - p) / n) * normal(gen));
    }
    auto noisy = TrajectoryBatch::from_raw(exact.horizon(), true, exact.raw(), std::move(w));
    double err = std::numeric_limits<double>::infinity();
    try {
      auto t = build_is_tables(noisy, env.data_spec(), H);
      auto id = identify_latents(t, U);
      auto post = identify_latent_posterior(id, t);
      err = is_estimate(noisy, t, id, post, env.evaluation).value - truth;
    } catch (const Error&) {
    }
    if (!std::isfinite(err)) return std::numeric_limits<double>::infinity();
    sq += err * err;
  }
  return std::sqrt(sq / options.sensitivity_reps);
}

// Baseline and history on sampled batches; seeds are disjoint from the experiment's trial seeds.
double pilot_rate(const GeneratedEnv& env, const SearchOptions& options) {
  const int H = env.spec.horizon, U = env.spec.n_states;
  const PomdpSpec data = env.data_spec();
  int hits = 0;
  for (int rep = 0; rep < options.pilot_reps; ++rep) {
    auto batch = sample_batch(data, env.behavior, options.pilot_n, derive(options.pilot_n, static_cast<std::uint64_t>(rep), 0x9170));
    bool history_ok = true, baseline_broken = false;
    try {
      auto rep_h = ope_spectral_history(build_spectral_tables(batch, data, PastKind::history, H), env.evaluation, U);
      for (const auto& p : rep_h.reward_probs)
        if (!(p(1) >= -0.05 && p(1) <= 1.05)) history_ok = false;
    } catch (const Error&) {
      history_ok = false;
    }
    try {
      auto rep_b = ope_baseline(build_spectral_tables(batch, data, PastKind::previous_observation, H), env.evaluation);
      for (const auto& p : rep_b.reward_probs)
        if (!(p(1) >= 0.0 && p(1) <= 1.0)) baseline_broken = true;
    } catch (const Error&) {
      baseline_broken = true;
    }
    hits += history_ok && baseline_broken;
  }
  return static_cast<double>(hits) / options.pilot_reps;
}

SearchScore score_env(const GeneratedEnv& env, const SearchOptions& options) {
  SearchScore sc;
  const int H = env.spec.horizon, U = env.spec.n_states;
  try {
    switch (env.family) {
    case EnvFamily::random:
    case EnvFamily::violate_invertibility: {
      auto exact = enumerate_behavior(env.spec, truncated_behavior(env.behavior, H));
      auto t = build_spectral_tables(exact, env.spec, PastKind::history, H);
      auto rep = ope_spectral_history(t, env.evaluation, U);
      sc.condition = 0.0;
      for (const auto& d : rep.diagnostics) sc.condition = std::max(sc.condition, d.condition);
      sc.inverse_gap = 0.0;
      // The pilot only runs where the history estimator is conditioned well enough to be worth it.
      if (env.family == EnvFamily::violate_invertibility && options.pilot_reps > 0 &&
          sc.condition <= options.thresholds.max_condition)
        sc.pilot_rate = pilot_rate(env, options);
      break;
    }
    case EnvFamily::violate_history_rank: {
      auto exact = enumerate_behavior(env.data_spec(), env.behavior);
      auto t = build_future_tables(exact, env.data_spec(), H);
      sc.condition = 0.0;
      sc.inverse_gap = 0.0;
      for (int j = 0; j <= H; ++j) {
        auto sys = identify_future_system(t, j, U);
        sc.condition = std::max(sc.condition, sys.condition);
        sc.inverse_gap = std::max(sc.inverse_gap, 1.0 / sys.eigen_gap);
      }
      break;
    }
    case EnvFamily::is_wellconditioned: {
      auto exact = enumerate_behavior(env.data_spec(), env.behavior);
      auto t = build_is_tables(exact, env.data_spec(), H);
      auto id = identify_latents(t, U);
      sc.condition = std::pow(condition_number(env.spec.reward_model[0]), H + 1);
      sc.inverse_gap = 0.0;
      double min_pi = 1.0;
      for (const auto& s : id.steps) {
        sc.condition = std::max(sc.condition, s.condition);
        sc.inverse_gap = std::max(sc.inverse_gap, 1.0 / s.eigen_gap);
      }
      for (int i = 0; i <= H; ++i) min_pi = std::min(min_pi, env.behavior.at(i).minCoeff());
      sc.condition = std::max(sc.condition, 1.0 / min_pi);
      auto naive = is_naive_baseline(exact, env.evaluation, H, env.spec.reward_support);
      const double truth = exact_value(env.spec, env.evaluation);
      sc.naive_bias = std::abs(naive.value - truth);
      sc.is_spread = is_spread(exact, env, truth, options) / std::max(sc.naive_bias, 1e-12);
      break;
    }
    }
    sc.feasible = std::isfinite(sc.condition) && std::isfinite(sc.inverse_gap);
  } catch (const Error&) {
    sc.feasible = false;
  }
  return sc;
}

SearchResult adaptive_search(EnvFamily family, const EnvSizes& sizes, const SearchOptions& options,
                             std::uint64_t seed) {
  const std::size_t d = theta_size(family, sizes);
  std::mt19937_64 gen(derive(seed, 0x5ea6c4));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  SearchResult best;
  bool have = false;
  auto meets = [&](const SearchScore& s, double scale) {
    const auto& t = options.thresholds;
    return s.feasible && s.condition <= t.max_condition * scale && s.inverse_gap <= t.max_inverse_gap * scale &&
           s.naive_bias >= t.min_naive_bias && s.is_spread <= t.max_is_spread * scale &&
           s.pilot_rate.value_or(1.0) >= t.min_pilot_rate;
  };
  auto consider = [&](std::vector<double> theta) {
    ++best.draws;
    auto env = build_env(family, sizes, theta);
    if (!env) return;
    verify_env(*env);
    if (!env->verified()) return;
    SearchScore s = score_env(*env, options);
    if (!s.feasible || s.naive_bias < options.thresholds.min_naive_bias) return;
    if (family == EnvFamily::violate_invertibility && options.pilot_reps > 0 && !s.pilot_rate) return;
    if (!have || s.merit() < best.score.merit()) {
      best.env = std::move(*env);
      best.score = s;
      have = true;
    }
  };
  const auto phase_one = static_cast<std::size_t>(std::ceil(options.phase_one_share * static_cast<double>(options.budget)));
  while (best.draws < std::max<std::size_t>(phase_one, 1) && !(have && meets(best.score, 1.0))) {
    std::vector<double> theta(d);
    for (double& x : theta) x = unif(gen);
    consider(std::move(theta));
  }
  const double scale = have && meets(best.score, 1.0) ? options.tighten : 1.0;
  while (have && best.draws < options.budget && !meets(best.score, scale)) {
    std::vector<double> theta(d);
    for (std::size_t i = 0; i < d; ++i) {
      double c = best.env.theta[i];
      theta[i] = c >= 0.5 ? c + (1.0 - c) * unif(gen) : c * unif(gen);
    }
    consider(std::move(theta));
  }
  // Uniform draws continue while nothing feasible has been found.
  while (!have && best.draws < options.budget) {
    std::vector<double> theta(d);
    for (double& x : theta) x = unif(gen);
    consider(std::move(theta));
  }
  if (!have)
    throw ValidationError(std::string("adaptive search found no feasible ") + to_string(family) + " environment in " +
                          std::to_string(options.budget) + " draws");
  best.below_threshold = !meets(best.score, 1.0);
  return best;
}

const char* to_string(EstimatorKind k) {
  switch (k) {
  case EstimatorKind::baseline: return "baseline";
  case EstimatorKind::onestep: return "onestep";
  case EstimatorKind::history: return "history";
  case EstimatorKind::future: return "future";
  case EstimatorKind::is: return "is";
  case EstimatorKind::naive_is: return "naive_is";
  }
  return "baseline";
}

EstimatorKind estimator_from_string(const std::string& s) {
  for (EstimatorKind k : {EstimatorKind::baseline, EstimatorKind::onestep, EstimatorKind::history,
                          EstimatorKind::future, EstimatorKind::is, EstimatorKind::naive_is})
    if (s == to_string(k)) return k;
  throw UsageError("unknown estimator '" + s + "' (baseline, onestep, history, future, is, naive_is)");
}

bool is_value_estimator(EstimatorKind k) { return k == EstimatorKind::is || k == EstimatorKind::naive_is; }

namespace {

GeneratedEnv fixed_environment(const ExperimentConfig& c) {
  if (c.environment) return *c.environment;
  if (c.search) return adaptive_search(c.family, c.sizes, c.search_options, c.seed).env;
  return draw_verified(c.family, c.sizes, c.seed);
}

struct TrialContext {
  const GeneratedEnv& env;
  const std::vector<Vector>& truth;
  double value;
  int trial;
  std::size_t n;
};

template <class F>
void guarded(std::vector<TrialRow>& rows, const TrialContext& ctx, EstimatorKind kind, F&& run) {
  const int H = ctx.env.spec.horizon;
  const int r1 = ctx.env.spec.n_rewards() > 1 ? 1 : 0;
  const std::string name = to_string(kind);
  auto fail = [&](const std::string& note) {
    if (is_value_estimator(kind)) {
      rows.push_back({ctx.trial, name, ctx.n, -1, 0.0, ctx.value, 0.0, true, note});
      return;
    }
    for (int t = 0; t <= H; ++t)
      rows.push_back({ctx.trial, name, ctx.n, t, 0.0, ctx.truth[ix(t)](r1), 0.0, true, note});
  };
  try {
    std::vector<double> est = run(); // per-step P(r_t = r1), or a single value
    bool finite = std::all_of(est.begin(), est.end(), [](double x) { return std::isfinite(x); });
    if (!finite) return fail("non-finite estimate");
    if (is_value_estimator(kind)) {
      rows.push_back({ctx.trial, name, ctx.n, -1, est[0], ctx.value, std::abs(est[0] - ctx.value), false, ""});
      return;
    }
    for (int t = 0; t <= H; ++t) {
      double want = ctx.truth[ix(t)](r1);
      rows.push_back({ctx.trial, name, ctx.n, t, est[ix(t)], want, std::abs(est[ix(t)] - want), false, ""});
    }
  } catch (const Error& e) {
    std::string note = e.what();
    std::replace(note.begin(), note.end(), ',', ';');
    std::replace(note.begin(), note.end(), '\n', ' ');
    fail(note);
  }
}

std::vector<double> r1_series(const EstimateReport& rep) {
  const int r1 = rep.reward_support.size() > 1 ? 1 : 0;
  std::vector<double> out;
  for (const auto& p : rep.reward_probs) out.push_back(p(r1));
  return out;
}

void run_estimators(std::vector<TrialRow>& rows, const TrialContext& ctx, const TrajectoryBatch& batch,
                    const ExperimentConfig& c) {
  const GeneratedEnv& env = ctx.env;
  const PomdpSpec data = env.data_spec();
  const int H = env.spec.horizon, U = env.spec.n_states;
  const EstimatorOptions& o = c.estimator_options;
  std::optional<SpectralTables> one, hist;
  std::optional<FutureTables> fut;
  std::optional<IsTables> ist;
  for (EstimatorKind k : c.estimators) {
    guarded(rows, ctx, k, [&]() -> std::vector<double> {
      switch (k) {
      case EstimatorKind::baseline:
        if (!one) one = build_spectral_tables(batch, data, PastKind::previous_observation, H);
        return r1_series(ope_baseline(*one, env.evaluation, o));
      case EstimatorKind::onestep:
        if (!one) one = build_spectral_tables(batch, data, PastKind::previous_observation, H);
        return r1_series(ope_spectral_onestep(*one, env.evaluation, U, o));
      case EstimatorKind::history:
        if (!hist) hist = build_spectral_tables(batch, data, PastKind::history, H);
        return r1_series(ope_spectral_history(*hist, env.evaluation, U, o));
      case EstimatorKind::future:
        if (!fut) fut = build_future_tables(batch, data, H, o);
        return r1_series(ope_spectral_future(*fut, env.evaluation, U, o));
      case EstimatorKind::is: {
        if (!ist) ist = build_is_tables(batch, data, H, c.is_options);
        auto id = identify_latents(*ist, U, o);
        auto post = identify_latent_posterior(id, *ist, c.is_options);
        return {is_estimate(batch, *ist, id, post, env.evaluation, c.is_options).value};
      }
      case EstimatorKind::naive_is:
        return {is_naive_baseline(batch, env.evaluation, H, env.spec.reward_support, c.is_options).value};
      }
      return {};
    });
  }
}

} // namespace

GeneratedEnv trial_environment(const ExperimentConfig& c, int trial) {
  if (c.family == EnvFamily::random && !c.environment)
    return gen_random_env(c.sizes, derive(c.seed, static_cast<std::uint64_t>(trial), 1));
  return fixed_environment(c);
}

std::uint64_t batch_seed(const ExperimentConfig& c, int trial, std::size_t size_index) {
  return derive(c.seed, static_cast<std::uint64_t>(trial), 100 + size_index);
}

ExperimentResult run_experiment(const ExperimentConfig& c) {
  if (c.trials < 1) throw UsageError("trials must be at least 1");
  if (c.ns.empty() && !c.exact_tables) throw UsageError("at least one trajectory count is needed");
  for (std::size_t i = 0; i < c.ns.size(); ++i)
    if (c.ns[i] == 0 || (i > 0 && c.ns[i] <= c.ns[i - 1]))
      throw UsageError("trajectory counts must be positive and strictly increasing");
  ExperimentResult res;
  res.config = c;
  std::optional<GeneratedEnv> fixed;
  if (c.family != EnvFamily::random || c.environment) {
    fixed = fixed_environment(c);
    if (!fixed->verified()) verify_env(*fixed);
    if (!fixed->verified()) throw ValidationError("the experiment environment failed verification");
  }
  const std::vector<std::size_t> ns = c.exact_tables ? std::vector<std::size_t>{0} : c.ns;
  for (int trial = 0; trial < c.trials; ++trial) {
    GeneratedEnv env = fixed ? *fixed : trial_environment(c, trial);
    if (!env.verified()) throw ValidationError("trial " + std::to_string(trial) + " environment failed verification");
    res.env_digests.push_back(spec_digest(env.spec));
    auto truth = exact_reward_marginals(env.spec, env.evaluation);
    double value = value_from_marginals(truth, env.spec.reward_support);
    for (std::size_t ni = 0; ni < ns.size(); ++ni) {
      TrajectoryBatch batch = c.exact_tables
                                  ? enumerate_behavior(env.data_spec(), env.behavior)
                                  : sample_batch(env.data_spec(), env.behavior, ns[ni], batch_seed(c, trial, ni));
      TrialContext ctx{env, truth, value, trial, ns[ni]};
      run_estimators(res.trials, ctx, batch, c);
    }
  }
  res.summary = summarize(res.trials);
  return res;
}

std::vector<SummaryRow> summarize(const std::vector<TrialRow>& rows) {
  std::vector<SummaryRow> out;
  std::map<std::tuple<std::string, std::size_t, int>, std::size_t> where;
  std::vector<std::vector<const TrialRow*>> groups;
  for (const auto& r : rows) {
    auto key = std::make_tuple(r.estimator, r.n, r.t);
    auto it = where.find(key);
    if (it == where.end()) {
      it = where.emplace(key, out.size()).first;
      SummaryRow s;
      s.estimator = r.estimator;
      s.n = r.n;
      s.t = r.t;
      out.push_back(s);
      groups.emplace_back();
    }
    groups[it->second].push_back(&r);
  }
  for (std::size_t g = 0; g < out.size(); ++g) {
    SummaryRow& s = out[g];
    double sum = 0.0, sum_est = 0.0;
    for (const TrialRow* r : groups[g]) {
      if (r->failed) {
        ++s.failures;
        continue;
      }
      ++s.completed;
      sum += r->residual;
      sum_est += r->estimate;
    }
    if (s.completed == 0) {
      s.mean_abs_residual = s.std_err = s.mean_estimate = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    s.mean_abs_residual = sum / s.completed;
    s.mean_estimate = sum_est / s.completed;
    if (s.completed > 1) {
      double ss = 0.0;
      for (const TrialRow* r : groups[g])
        if (!r->failed) ss += (r->residual - s.mean_abs_residual) * (r->residual - s.mean_abs_residual);
      s.std_err = std::sqrt(ss / (s.completed - 1)) / std::sqrt(static_cast<double>(s.completed));
    }
  }
  return out;
}

namespace {

std::ostringstream csv_stream() {
  std::ostringstream os;
  os.precision(17);
  return os;
}

} // namespace

std::string summary_csv(const ExperimentResult& r) {
  auto os = csv_stream();
  os << "estimator,n,t,mean_abs_residual,std_err,failures\n";
  for (const auto& s : r.summary)
    os << s.estimator << "," << s.n << "," << s.t << "," << s.mean_abs_residual << "," << s.std_err << ","
       << s.failures << "\n";
  return os.str();
}

std::string trials_csv(const ExperimentResult& r) {
  auto os = csv_stream();
  os << "trial,estimator,n,t,estimate,truth,residual,failed,note\n";
  for (const auto& t : r.trials)
    os << t.trial << "," << t.estimator << "," << t.n << "," << t.t << "," << t.estimate << "," << t.truth << ","
       << t.residual << "," << (t.failed ? 1 : 0) << "," << t.note << "\n";
  return os.str();
}

std::string plot_data_csv(const ExperimentResult& r) {
  auto os = csv_stream();
  os << "series,estimator,n,t,mean_estimate,mean_abs_residual,std_err,completed\n";
  for (const auto& s : r.summary)
    os << s.estimator << "@" << s.n << "," << s.estimator << "," << s.n << "," << s.t << "," << s.mean_estimate
       << "," << s.mean_abs_residual << "," << s.std_err << "," << s.completed << "\n";
  return os.str();
}

void emit_report(const ExperimentResult& r, const std::filesystem::path& dir) {
  write_text_file(dir / "summary.csv", summary_csv(r));
  write_text_file(dir / "trials.csv", trials_csv(r));
  write_text_file(dir / "plot_data.csv", plot_data_csv(r));
}

} // namespace pope
