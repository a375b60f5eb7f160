#pragma once

#include "pope/estimators.hpp"
#include "pope/is.hpp"
#include "pope/pomdp.hpp"
#include "pope/trajectory.hpp"

#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pope {

enum class EnvFamily { random, violate_invertibility, violate_history_rank, is_wellconditioned };

const char* to_string(EnvFamily f);
EnvFamily env_family_from_string(const std::string& s);

struct EnvSizes {
  int n_states = 2;
  int n_obs = 2;
  int n_actions = 2;
  int horizon = 4;
  std::vector<double> reward_support{0.0, 1.0};
};

struct VerificationCheck {
  std::string name;
  double value = 0.0;
  bool passed = false;
};

struct GeneratedEnv {
  EnvFamily family = EnvFamily::random;
  PomdpSpec spec;                // evaluation horizon
  BehaviorPolicy behavior;       // steps 0..H+1; the last one drives the lookahead step
  EvaluationPolicy evaluation;
  std::vector<double> theta;     // unit-cube parameters the environment was built from
  std::map<std::string, double> params; // named parameters, where the family has them
  std::vector<VerificationCheck> checks;
  bool verified() const;
  // Spec and behavior extended by one step, as the lookahead estimators need.
  PomdpSpec data_spec() const { return with_horizon(spec, spec.horizon + 1); }
};

// Number of unit-cube parameters a family consumes.
std::size_t theta_size(EnvFamily family, const EnvSizes& sizes);
// Deterministic map from theta to an environment. Returns nullopt when theta lands outside
// the family's feasible set (for example a solved parameter outside [0, 1]).
std::optional<GeneratedEnv> build_env(EnvFamily family, const EnvSizes& sizes, const std::vector<double>& theta);
// Fills in `checks` from exact behavior tables.
void verify_env(GeneratedEnv& env);

GeneratedEnv gen_random_env(const EnvSizes& sizes, std::uint64_t seed);
// Two latents, two observations, two actions; rank(P(U_i | a_i, Z_{i-1})) = 1 for i >= 1.
GeneratedEnv gen_env_violating_invertibility(std::uint64_t seed, int horizon = 4);
// Rank-one emission with an informative pre-observation.
GeneratedEnv gen_env_violating_history_rank(std::uint64_t seed, int horizon = 4);
// Action-independent transitions and rewards, |R| = |U| = 2.
GeneratedEnv gen_is_env(std::uint64_t seed, int horizon = 1);

struct Zeta {
  double zeta0 = 0.0;
  double zeta1 = 0.0;
};
// P(z_{i-1} = 0 | u_i) for the two latents, from the two-state parameterization and s_{i-1}.
Zeta invertibility_zeta(double rho0, double rho1, double a, double b, double c, double d, double eps,
                        double delta, double s_prev);

struct SearchThresholds {
  double max_condition = std::numeric_limits<double>::infinity();
  double max_inverse_gap = std::numeric_limits<double>::infinity();
  double min_naive_bias = 0.0; // IS family only
  double max_is_spread = std::numeric_limits<double>::infinity(); // IS family only
  double min_pilot_rate = 0.0;                                      // invertibility family only
};

struct SearchOptions {
  std::size_t budget = 200;        // total environment draws over both phases
  double phase_one_share = 0.5;
  double tighten = 0.5;            // phase-two thresholds are multiplied by this
  SearchThresholds thresholds;
  std::size_t sensitivity_n = 1000000; // sample size the IS spread is simulated at
  int sensitivity_reps = 8;
  // Invertibility family: sampled pilot batches per candidate (0 disables the pilot) and their size.
  int pilot_reps = 0;
  std::size_t pilot_n = 6000;
};

struct SearchScore {
  double condition = std::numeric_limits<double>::infinity();
  double inverse_gap = std::numeric_limits<double>::infinity();
  double naive_bias = 0.0;
  // Root-mean-square IS error under simulated sampling noise over the naive bias; IS family only.
  double is_spread = 0.0;
  // Share of pilot batches where the history estimate stays in [-0.05, 1.05] at every step while
  // the baseline leaves [0, 1] or fails; invertibility family with a pilot only.
  std::optional<double> pilot_rate;
  bool feasible = false;
  // Lower is better.
  double merit() const {
    if (!feasible) return std::numeric_limits<double>::infinity();
    if (is_spread > 0.0) return is_spread;
    if (pilot_rate) return (1.0 - *pilot_rate) * 1e6 + std::max(condition, inverse_gap);
    return std::max(condition, inverse_gap);
  }
};

struct SearchResult {
  GeneratedEnv env;
  SearchScore score;
  bool below_threshold = false; // budget ran out before the thresholds were met
  std::size_t draws = 0;
};

SearchScore score_env(const GeneratedEnv& env, const SearchOptions& options = {});
SearchResult adaptive_search(EnvFamily family, const EnvSizes& sizes, const SearchOptions& options,
                             std::uint64_t seed);

enum class EstimatorKind { baseline, onestep, history, future, is, naive_is };
const char* to_string(EstimatorKind k);
EstimatorKind estimator_from_string(const std::string& s);
bool is_value_estimator(EstimatorKind k);

struct ExperimentConfig {
  EnvFamily family = EnvFamily::random;
  EnvSizes sizes;
  int trials = 50;
  std::vector<std::size_t> ns{1000};
  std::vector<EstimatorKind> estimators{EstimatorKind::baseline, EstimatorKind::history};
  std::uint64_t seed = 0;
  bool exact_tables = false;
  bool search = false; // fixed-environment families: pick the environment by adaptive search
  SearchOptions search_options;
  std::optional<GeneratedEnv> environment; // overrides generation for fixed families
  EstimatorOptions estimator_options;
  IsOptions is_options;
};

// One estimator on one trial at one n; value estimators use t = -1.
struct TrialRow {
  int trial = 0;
  std::string estimator;
  std::size_t n = 0;
  int t = 0;
  double estimate = 0.0;
  double truth = 0.0;
  double residual = 0.0;
  bool failed = false;
  std::string note;
};

struct SummaryRow {
  std::string estimator;
  std::size_t n = 0;
  int t = 0;
  double mean_abs_residual = 0.0;
  double std_err = 0.0;
  double mean_estimate = 0.0;
  int failures = 0;
  int completed = 0;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<TrialRow> trials;
  std::vector<SummaryRow> summary;
  std::vector<std::string> env_digests; // per trial
};

// The environment trial `trial` runs on; fixed families ignore the trial index.
GeneratedEnv trial_environment(const ExperimentConfig& config, int trial);
// Sampling seed for one trial at the size_index-th trajectory count.
std::uint64_t batch_seed(const ExperimentConfig& config, int trial, std::size_t size_index);
ExperimentResult run_experiment(const ExperimentConfig& config);
std::vector<SummaryRow> summarize(const std::vector<TrialRow>& rows);

std::string summary_csv(const ExperimentResult& r);
std::string trials_csv(const ExperimentResult& r);
std::string plot_data_csv(const ExperimentResult& r);
// Writes summary.csv, trials.csv and plot_data.csv into dir.
void emit_report(const ExperimentResult& r, const std::filesystem::path& dir);

} // namespace pope
