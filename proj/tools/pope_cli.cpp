#include "pope/config.hpp"
#include "pope/errors.hpp"
#include "pope/experiments.hpp"
#include "pope/oracle.hpp"
#include "pope/serialize.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace pope;

namespace {

constexpr const char* kOutputRootVar = "POPE_OUTPUT_ROOT";

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::size_t> n;
  std::vector<std::string> estimators;
  std::optional<std::string> out;
  bool exact_tables = false;
  std::optional<double> pinv_tol;
  std::optional<double> eigen_imag_tol;
  bool force_real_eigen = false;
  std::optional<int> trials;
};

// File values first, then flags.
RunConfig effective_config(const std::string& sub, const Overrides& o) {
  RunConfig rc = o.config.empty() ? RunConfig{} : run_config_from_json(read_json_file(o.config));
  ExperimentConfig& c = rc.experiment;
  if (o.seed) c.seed = *o.seed;
  if (!o.n.empty()) c.ns = o.n;
  if (!o.estimators.empty()) {
    c.estimators.clear();
    for (const auto& name : o.estimators) c.estimators.push_back(estimator_from_string(name));
  }
  if (o.out) rc.out = *o.out;
  if (o.exact_tables) c.exact_tables = true;
  if (o.pinv_tol) c.estimator_options.pinv_tol = *o.pinv_tol;
  if (o.eigen_imag_tol) c.estimator_options.eigen.imag_tol = *o.eigen_imag_tol;
  if (o.force_real_eigen) c.estimator_options.eigen.force_real = true;
  if (o.trials) c.trials = *o.trials;
  if (!rc.out) {
    const char* root = std::getenv(kOutputRootVar);
    rc.out = fs::path(root && *root ? root : "pope_out") / sub;
  }
  return rc;
}

void echo(const RunConfig& rc) { write_text_file(*rc.out / "config.json", dump_json(run_config_to_json(rc))); }

void write_environment(const RunConfig& rc, const GeneratedEnv& env) {
  write_text_file(*rc.out / "environment.json", dump_json(environment_to_json(env)));
}

TrajectoryBatch input_batch(const RunConfig& rc, const GeneratedEnv& env) {
  const ExperimentConfig& c = rc.experiment;
  if (c.exact_tables) return enumerate_behavior(env.data_spec(), env.behavior);
  if (rc.batch) {
    TrajectoryBatch b = batch_from_json(read_json_file(*rc.batch));
    const std::string want = spec_digest(env.data_spec());
    if (!b.provenance.spec_digest.empty() && b.provenance.spec_digest != want)
      throw ValidationError("batch " + rc.batch->string() + " was drawn from spec " + b.provenance.spec_digest +
                            ", the config describes " + want);
    return b;
  }
  if (c.ns.empty()) throw UsageError("no trajectory count given");
  return sample_batch(env.data_spec(), env.behavior, c.ns.front(), batch_seed(c, 0, 0));
}

void simulate(const RunConfig& rc) {
  const ExperimentConfig& c = rc.experiment;
  if (c.ns.empty()) throw UsageError("simulate needs --n");
  GeneratedEnv env = trial_environment(c, 0);
  TrajectoryBatch batch = sample_batch(env.data_spec(), env.behavior, c.ns.front(), batch_seed(c, 0, 0));
  echo(rc);
  write_environment(rc, env);
  write_text_file(*rc.out / "batch.json", dump_json(batch_to_json(batch)));
  std::cout << "wrote " << batch.size() << " trajectories to " << (*rc.out / "batch.json").string() << "\n";
}

void estimate(const RunConfig& rc) {
  const ExperimentConfig& c = rc.experiment;
  GeneratedEnv env = trial_environment(c, 0);
  TrajectoryBatch batch = input_batch(rc, env);
  const PomdpSpec data = env.data_spec();
  const int H = env.spec.horizon, U = env.spec.n_states;
  const EstimatorOptions& o = c.estimator_options;
  auto truth = exact_reward_marginals(env.spec, env.evaluation);
  const double value = value_from_marginals(truth, env.spec.reward_support);
  std::ostringstream rows, values;
  values.precision(17);
  values << "estimator,value,truth,residual\n";
  std::optional<SpectralTables> one, hist;
  for (EstimatorKind k : c.estimators) {
    EstimateReport rep;
    switch (k) {
    case EstimatorKind::baseline:
    case EstimatorKind::onestep:
      if (!one) one = build_spectral_tables(batch, data, PastKind::previous_observation, H);
      rep = k == EstimatorKind::baseline ? ope_baseline(*one, env.evaluation, o)
                                         : ope_spectral_onestep(*one, env.evaluation, U, o);
      break;
    case EstimatorKind::history:
      if (!hist) hist = build_spectral_tables(batch, data, PastKind::history, H);
      rep = ope_spectral_history(*hist, env.evaluation, U, o);
      break;
    case EstimatorKind::future:
      rep = ope_spectral_future(build_future_tables(batch, data, H, o), env.evaluation, U, o);
      break;
    case EstimatorKind::is:
    case EstimatorKind::naive_is: {
      double v = 0.0;
      if (k == EstimatorKind::is) {
        auto t = build_is_tables(batch, data, H, c.is_options);
        auto id = identify_latents(t, U, o);
        auto post = identify_latent_posterior(id, t, c.is_options);
        v = is_estimate(batch, t, id, post, env.evaluation, c.is_options).value;
      } else {
        v = is_naive_baseline(batch, env.evaluation, H, env.spec.reward_support, c.is_options).value;
      }
      values << to_string(k) << "," << v << "," << value << "," << std::abs(v - value) << "\n";
      continue;
    }
    }
    rows << estimate_rows(rep, truth);
    values << to_string(k) << "," << rep.value << "," << value << "," << std::abs(rep.value - value) << "\n";
  }
  echo(rc);
  write_environment(rc, env);
  write_text_file(*rc.out / "estimates.csv", estimates_header() + rows.str());
  write_text_file(*rc.out / "values.csv", values.str());
  std::cout << estimates_header() << rows.str();
}

void identify(const RunConfig& rc) {
  const ExperimentConfig& c = rc.experiment;
  GeneratedEnv env = trial_environment(c, 0);
  TrajectoryBatch batch = input_batch(rc, env);
  auto t = build_is_tables(batch, env.data_spec(), env.spec.horizon, c.is_options);
  auto id = identify_latents(t, env.spec.n_states, c.estimator_options);
  echo(rc);
  write_environment(rc, env);
  write_text_file(*rc.out / "latents.json", dump_json(latents_to_json(id)));
  std::cout << "identified " << id.steps.size() << " steps into " << (*rc.out / "latents.json").string() << "\n";
}

void experiment(const RunConfig& rc) {
  ExperimentResult r = run_experiment(rc.experiment);
  echo(rc);
  if (rc.experiment.family != EnvFamily::random || rc.experiment.environment)
    write_environment(rc, trial_environment(rc.experiment, 0));
  emit_report(r, *rc.out);
  std::cout << summary_csv(r);
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Off-policy evaluation in tabular POMDPs with latent confounders"};
  app.require_subcommand(1);
  Overrides o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--n", o.n, "trajectory counts, comma separated")->delimiter(',');
    sub->add_option("--estimators", o.estimators,
                    "baseline, onestep, history, future, is, naive_is; comma separated")
        ->delimiter(',');
    sub->add_option("--out", o.out, std::string("output directory (default $") + kOutputRootVar + "/<subcommand>)");
    sub->add_flag("--exact-tables", o.exact_tables, "use exact population tables instead of samples");
    sub->add_option("--pinv-tol", o.pinv_tol, "relative singular value cutoff for pseudo-inverses (default machine epsilon)");
    sub->add_option("--eigen-imag-tol", o.eigen_imag_tol, "largest imaginary part accepted in eigenvalues");
    sub->add_flag("--force-real-eigen", o.force_real_eigen, "project complex eigenvalues to their real part");
    sub->add_option("--trials", o.trials, "number of trials");
  };
  std::string chosen;
  for (const char* name : {"simulate", "estimate", "identify", "experiment"}) {
    auto* sub = app.add_subcommand(name);
    add_common(sub);
    sub->callback([&chosen, name] { chosen = name; });
  }
  app.get_subcommand("simulate")->description("sample a trajectory batch");
  app.get_subcommand("estimate")->description("run estimators on a batch or on exact tables");
  app.get_subcommand("identify")->description("identify the behavior policy and reward model per step");
  app.get_subcommand("experiment")->description("run repeated trials and write CSV reports");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : exit_code(ErrorCategory::usage);
  }
  try {
    RunConfig rc = effective_config(chosen, o);
    if (chosen == "simulate") simulate(rc);
    else if (chosen == "estimate") estimate(rc);
    else if (chosen == "identify") identify(rc);
    else experiment(rc);
  } catch (const Error& e) {
    Json err{{"error", category_name(e.category())}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    Json err{{"error", "internal"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
