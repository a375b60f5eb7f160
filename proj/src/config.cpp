#include "pope/config.hpp"

#include "pope/errors.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace pope {

namespace {

const Json* find(const Json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

template <class T>
T as(const Json& v, const std::string& where) {
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(where + " has the wrong type");
  }
}

template <class T>
void read(const Json& j, const char* key, T& into, const std::string& where) {
  if (const Json* v = find(j, key)) into = as<T>(*v, where + "." + key);
}

// null stands for an unbounded threshold.
void read_bound(const Json& j, const char* key, double& into, const std::string& where) {
  if (const Json* v = find(j, key))
    into = v->is_null() ? std::numeric_limits<double>::infinity() : as<double>(*v, where + "." + key);
}

Json bound(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

void require_object(const Json& j, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be an object");
}

EnvSizes sizes_from_json(const Json& j) {
  require_object(j, "sizes");
  require_keys(j, {"n_states", "n_obs", "n_actions", "horizon", "reward_support"}, "sizes");
  EnvSizes s;
  read(j, "n_states", s.n_states, "sizes");
  read(j, "n_obs", s.n_obs, "sizes");
  read(j, "n_actions", s.n_actions, "sizes");
  read(j, "horizon", s.horizon, "sizes");
  read(j, "reward_support", s.reward_support, "sizes");
  if (s.n_states < 1 || s.n_obs < 1 || s.n_actions < 1 || s.horizon < 0 || s.reward_support.empty())
    throw ValidationError("sizes must be positive with a nonnegative horizon and a nonempty reward support");
  return s;
}

Json sizes_to_json(const EnvSizes& s) {
  return Json{{"n_states", s.n_states},
              {"n_obs", s.n_obs},
              {"n_actions", s.n_actions},
              {"horizon", s.horizon},
              {"reward_support", s.reward_support}};
}

SearchOptions search_from_json(const Json& j) {
  require_object(j, "search_options");
  require_keys(j,
               {"budget", "phase_one_share", "tighten", "max_condition", "max_inverse_gap", "min_naive_bias",
                "max_is_spread", "min_pilot_rate", "sensitivity_n", "sensitivity_reps", "pilot_reps", "pilot_n"},
               "search_options");
  SearchOptions o;
  const std::string w = "search_options";
  read(j, "budget", o.budget, w);
  read(j, "phase_one_share", o.phase_one_share, w);
  read(j, "tighten", o.tighten, w);
  read_bound(j, "max_condition", o.thresholds.max_condition, w);
  read_bound(j, "max_inverse_gap", o.thresholds.max_inverse_gap, w);
  read(j, "min_naive_bias", o.thresholds.min_naive_bias, w);
  read_bound(j, "max_is_spread", o.thresholds.max_is_spread, w);
  read(j, "sensitivity_n", o.sensitivity_n, w);
  read(j, "sensitivity_reps", o.sensitivity_reps, w);
  read(j, "min_pilot_rate", o.thresholds.min_pilot_rate, w);
  read(j, "pilot_reps", o.pilot_reps, w);
  read(j, "pilot_n", o.pilot_n, w);
  if (o.pilot_reps < 0 || o.pilot_n == 0) throw ValidationError("pilot_reps must be nonnegative and pilot_n positive");
  if (o.budget == 0 || o.sensitivity_n == 0 || o.sensitivity_reps < 1)
    throw ValidationError("search budget, sensitivity_n and sensitivity_reps must be positive");
  return o;
}

Json search_to_json(const SearchOptions& o) {
  return Json{{"budget", o.budget},
              {"phase_one_share", o.phase_one_share},
              {"tighten", o.tighten},
              {"max_condition", bound(o.thresholds.max_condition)},
              {"max_inverse_gap", bound(o.thresholds.max_inverse_gap)},
              {"min_naive_bias", o.thresholds.min_naive_bias},
              {"max_is_spread", bound(o.thresholds.max_is_spread)},
              {"sensitivity_n", o.sensitivity_n},
              {"sensitivity_reps", o.sensitivity_reps},
              {"min_pilot_rate", o.thresholds.min_pilot_rate},
              {"pilot_reps", o.pilot_reps},
              {"pilot_n", o.pilot_n}};
}

void tolerances_from_json(const Json& j, EstimatorOptions& o) {
  require_object(j, "tolerances");
  require_keys(j, {"pinv_tol", "eigen_imag_tol", "eigen_distinctness_tol", "force_real_eigen"}, "tolerances");
  if (const Json* v = find(j, "pinv_tol"))
    o.pinv_tol = v->is_null() ? std::nullopt : std::optional<double>(as<double>(*v, "tolerances.pinv_tol"));
  read(j, "eigen_imag_tol", o.eigen.imag_tol, "tolerances");
  read(j, "eigen_distinctness_tol", o.eigen.distinctness_tol, "tolerances");
  read(j, "force_real_eigen", o.eigen.force_real, "tolerances");
}

Json tolerances_to_json(const EstimatorOptions& o) {
  return Json{{"pinv_tol", o.pinv_tol ? Json(*o.pinv_tol) : Json(nullptr)},
              {"eigen_imag_tol", o.eigen.imag_tol},
              {"eigen_distinctness_tol", o.eigen.distinctness_tol},
              {"force_real_eigen", o.eigen.force_real}};
}

IsOptions is_from_json(const Json& j) {
  require_object(j, "is");
  require_keys(j, {"floor", "negativity_tol", "rank_tol", "budget"}, "is");
  IsOptions o;
  read(j, "floor", o.floor, "is");
  read(j, "negativity_tol", o.negativity_tol, "is");
  read(j, "rank_tol", o.rank_tol, "is");
  read(j, "budget", o.budget, "is");
  return o;
}

Json is_to_json(const IsOptions& o) {
  return Json{{"floor", o.floor}, {"negativity_tol", o.negativity_tol}, {"rank_tol", o.rank_tol}, {"budget", o.budget}};
}

} // namespace

RunConfig run_config_from_json(const Json& j) {
  require_object(j, "config");
  require_keys(j,
               {"family", "sizes", "environment", "seed", "n", "trials", "estimators", "exact_tables", "search",
                "search_options", "tolerances", "is", "batch", "out"},
               "config");
  RunConfig rc;
  ExperimentConfig& c = rc.experiment;
  if (const Json* v = find(j, "family")) c.family = env_family_from_string(as<std::string>(*v, "config.family"));
  if (const Json* v = find(j, "sizes")) c.sizes = sizes_from_json(*v);
  if (const Json* v = find(j, "environment")) c.environment = environment_from_json(*v);
  read(j, "seed", c.seed, "config");
  if (const Json* v = find(j, "n"))
    c.ns = v->is_array() ? as<std::vector<std::size_t>>(*v, "config.n")
                         : std::vector<std::size_t>{as<std::size_t>(*v, "config.n")};
  read(j, "trials", c.trials, "config");
  if (const Json* v = find(j, "estimators")) {
    c.estimators.clear();
    for (const auto& name : as<std::vector<std::string>>(*v, "config.estimators"))
      c.estimators.push_back(estimator_from_string(name));
  }
  read(j, "exact_tables", c.exact_tables, "config");
  read(j, "search", c.search, "config");
  if (const Json* v = find(j, "search_options")) c.search_options = search_from_json(*v);
  if (const Json* v = find(j, "tolerances")) tolerances_from_json(*v, c.estimator_options);
  if (const Json* v = find(j, "is")) c.is_options = is_from_json(*v);
  if (const Json* v = find(j, "batch")) rc.batch = as<std::string>(*v, "config.batch");
  if (const Json* v = find(j, "out")) rc.out = as<std::string>(*v, "config.out");
  return rc;
}

Json run_config_to_json(const RunConfig& rc) {
  const ExperimentConfig& c = rc.experiment;
  Json j;
  j["family"] = to_string(c.family);
  j["sizes"] = sizes_to_json(c.sizes);
  if (c.environment) j["environment"] = environment_to_json(*c.environment);
  j["seed"] = c.seed;
  j["n"] = c.ns;
  j["trials"] = c.trials;
  Json names = Json::array();
  for (EstimatorKind k : c.estimators) names.push_back(to_string(k));
  j["estimators"] = names;
  j["exact_tables"] = c.exact_tables;
  j["search"] = c.search;
  j["search_options"] = search_to_json(c.search_options);
  j["tolerances"] = tolerances_to_json(c.estimator_options);
  j["is"] = is_to_json(c.is_options);
  if (rc.batch) j["batch"] = rc.batch->string();
  if (rc.out) j["out"] = rc.out->string();
  return j;
}

Json environment_to_json(const GeneratedEnv& env) {
  Json j;
  if (!env.checks.empty()) j["family"] = to_string(env.family);
  j["spec"] = spec_to_json(env.spec);
  j["behavior"] = behavior_to_json(env.behavior);
  j["evaluation"] = evaluation_to_json(env.evaluation);
  if (!env.theta.empty()) j["theta"] = env.theta;
  if (!env.params.empty()) {
    Json p = Json::object();
    for (const auto& [k, v] : env.params) p[k] = v;
    j["params"] = p;
  }
  if (!env.checks.empty()) {
    Json checks = Json::array();
    for (const auto& c : env.checks) checks.push_back(Json{{"name", c.name}, {"value", c.value}, {"passed", c.passed}});
    j["checks"] = checks;
  }
  return j;
}

GeneratedEnv environment_from_json(const Json& j) {
  require_object(j, "environment");
  require_keys(j, {"family", "spec", "behavior", "evaluation", "theta", "params", "checks"}, "environment");
  GeneratedEnv env;
  if (const Json* v = find(j, "family")) env.family = env_family_from_string(as<std::string>(*v, "environment.family"));
  if (!find(j, "spec") || !find(j, "behavior") || !find(j, "evaluation"))
    throw ValidationError("environment needs spec, behavior and evaluation");
  env.spec = spec_from_json(j.at("spec"));
  env.behavior = behavior_from_json(j.at("behavior"));
  env.evaluation = evaluation_from_json(j.at("evaluation"));
  read(j, "theta", env.theta, "environment");
  if (const Json* v = find(j, "params")) env.params = as<std::map<std::string, double>>(*v, "environment.params");
  if (static_cast<int>(env.behavior.steps.size()) != env.spec.horizon + 2)
    throw ValidationError("environment behavior needs horizon + 2 steps, the last one for the lookahead step");
  auto violations = validate_behavior(env.data_spec(), env.behavior);
  auto ev = validate_evaluation(env.spec, env.evaluation);
  violations.insert(violations.end(), ev.begin(), ev.end());
  if (has_errors(violations)) throw ValidationError("environment: " + describe(violations));
  // Checks in the file are informational; they are recomputed for the stated family.
  // Without a stated family only the spec and policies are validated.
  if (!find(j, "family")) return env;
  if (env.family == EnvFamily::violate_invertibility)
    for (const char* k : {"rho0", "rho1", "a", "b", "c", "d", "eps", "delta", "s0"})
      if (!env.params.count(k)) throw ValidationError(std::string("environment.params needs '") + k + "'");
  verify_env(env);
  if (!env.verified()) {
    std::string failed;
    for (const auto& c : env.checks)
      if (!c.passed) failed += " " + c.name + "=" + std::to_string(c.value) + ";";
    throw ValidationError(std::string("environment fails the ") + to_string(env.family) + " checks:" + failed);
  }
  return env;
}

int exit_code(ErrorCategory c) {
  switch (c) {
  case ErrorCategory::usage: return 2;
  case ErrorCategory::validation: return 3;
  case ErrorCategory::numerical: return 4;
  case ErrorCategory::io: return 5;
  case ErrorCategory::budget: return 6;
  }
  return 1;
}

const char* category_name(ErrorCategory c) {
  switch (c) {
  case ErrorCategory::usage: return "usage";
  case ErrorCategory::validation: return "validation";
  case ErrorCategory::numerical: return "numerical";
  case ErrorCategory::io: return "io";
  case ErrorCategory::budget: return "budget";
  }
  return "unknown";
}

std::string estimates_header() {
  return "estimator,t,estimate,clipped,truth,residual,condition,sigma_ratio,eigen_gap,zero_mass_columns,note\n";
}

std::string estimate_rows(const EstimateReport& rep, const std::vector<Vector>& truth) {
  std::ostringstream os;
  os.precision(17);
  const int r1 = rep.reward_support.size() > 1 ? 1 : 0;
  for (int t = 0; t <= rep.horizon(); ++t) {
    const auto ti = static_cast<std::size_t>(t);
    const double est = rep.reward_probs[ti](r1), want = truth[ti](r1);
    StepDiagnostics d;
    for (const auto& s : rep.diagnostics)
      if (s.t == t) d = s;
    std::string note = d.note;
    for (char& ch : note)
      if (ch == ',' || ch == '\n') ch = ';';
    os << rep.estimator << "," << t << "," << est << "," << rep.clipped(t, r1) << "," << want << ","
       << std::abs(est - want) << "," << d.condition << "," << d.sigma_ratio << "," << d.eigen_gap << ","
       << d.zero_mass_columns << "," << note << "\n";
  }
  return os.str();
}

} // namespace pope
