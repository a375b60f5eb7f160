#pragma once

#include "pope/moments.hpp"
#include "pope/pomdp.hpp"
#include "pope/spectral.hpp"
#include "pope/trajectory.hpp"

#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pope {

struct StepDiagnostics {
  int t = 0;
  double condition = 0.0;   // worst condition number among the step's inverted matrices
  double sigma_ratio = std::numeric_limits<double>::infinity(); // worst sigma_k / sigma_{k+1}
  double eigen_gap = std::numeric_limits<double>::infinity();   // worst eigenvalue gap
  int zero_mass_columns = 0;
  std::string note;
};

struct EstimateReport {
  std::string estimator;
  std::string config_digest;
  std::vector<double> reward_support;
  std::vector<Vector> reward_probs; // [t], unclipped
  double value = 0.0;
  std::vector<StepDiagnostics> diagnostics;

  int horizon() const { return static_cast<int>(reward_probs.size()) - 1; }
  // The probability of the given reward atom at step t, clipped to [0, 1].
  double clipped(int t, int r) const;
};

// Value implied by per-step reward distributions.
double value_from_marginals(const std::vector<Vector>& probs, const std::vector<double>& support);

enum class PastKind { previous_observation, history };

// Moment tables in joint form for one choice of past proxy. Indices:
// current[i][a] = P(Z_i, a_i = a, past_i)                 (|Z| x |past_i|)
// transfer[i][z*A + a] = P(Z_{i+1}, z_i = z, a_i = a, past_i) (|Z| x |past_i|), i < H
// reward[t][(r*Z + z)*A + a] = P(r_t, z_t, a_t, past_t)     (1 x |past_t|)
struct SpectralTables {
  PastKind past = PastKind::previous_observation;
  int horizon = 0; // evaluation horizon
  int n_obs = 0;
  int n_actions = 0;
  int n_rewards = 0;
  std::vector<double> reward_support;
  std::vector<EventSpace> past_spaces;
  std::vector<std::vector<Matrix>> current;
  std::vector<std::vector<Matrix>> transfer;
  std::vector<std::vector<RowVector>> reward;
  Vector initial_obs; // P(Z_0)
};

SpectralTables build_spectral_tables(const TrajectoryBatch& batch, const PomdpSpec& spec,
                                     PastKind past, int eval_horizon);

// Sums history columns down to z_{i-1}.
SpectralTables marginalize_to_one_step(const SpectralTables& history_tables);

struct EstimatorOptions {
  ProjectionStrategy projection = ProjectionStrategy::svd_top_k;
  std::uint64_t projection_seed = 0;
  std::optional<double> pinv_tol;
  bool conditional = false; // conditional-table variant (baseline always uses conditionals)
  EigenOptions eigen;
  double extension_tol = std::numeric_limits<double>::infinity();
  int future_depth = 1;
  bool coarsen_future_to_next_action = true;
};

EstimateReport ope_baseline(const SpectralTables& one_step_tables, const EvaluationPolicy& eval,
                            const EstimatorOptions& options = {});
EstimateReport ope_spectral_onestep(const SpectralTables& one_step_tables,
                                    const EvaluationPolicy& eval, int n_latent,
                                    const EstimatorOptions& options = {});
// With the marginalize strategy the tables are first reduced to one-step form.
EstimateReport ope_spectral_history(const SpectralTables& history_tables,
                                    const EvaluationPolicy& eval, int n_latent,
                                    const EstimatorOptions& options = {});

// Tables for the extended-future estimator. Pasts include z_{-1}:
// past_j = (z_{-1}, z_0, a_0, ..., z_{j-1}, a_{j-1}).
struct FutureTables {
  int horizon = 0; // evaluation horizon; the batch must reach horizon + depth
  int n_obs = 0;
  int n_actions = 0;
  int n_rewards = 0;
  std::vector<double> reward_support;
  std::vector<EventSpace> past_spaces;
  std::vector<EventSpace> future_spaces;
  std::vector<std::vector<Matrix>> future_joint;      // [j][a] = P(F_j, a_j = a, past_j)
  std::vector<std::vector<AugmentedPair>> augmented;  // [j][a], tau family
  std::vector<std::vector<RowVector>> reward;         // as in SpectralTables
};

FutureTables build_future_tables(const TrajectoryBatch& batch, const PomdpSpec& spec,
                                 int eval_horizon, const EstimatorOptions& options = {});

struct FutureSystem {
  std::vector<Matrix> emission; // [a] = P(F_j | a_j = a, U_j), |F| x k, common latent order
  Matrix latent_joint;          // P(U_j, past_j), k x |past_j|, same order
  std::vector<int> reward_slice; // [a] slice used for the eigendecomposition
  double eigen_gap = std::numeric_limits<double>::infinity();
  double condition = 0.0;
};

FutureSystem identify_future_system(const FutureTables& tables, int step, int n_latent,
                                    const EstimatorOptions& options = {});

EstimateReport ope_spectral_future(const FutureTables& tables, const EvaluationPolicy& eval,
                                   int n_latent, const EstimatorOptions& options = {});

// Inputs of the chain evaluator. s_0 = start[a_0]; s_{i+1} = K[i][z_i*A + a_i][a_{i+1}] s_i;
// P(r_t) += Pi_e * rho[t][(r*Z + z_t)*A + a_t] s_t.
struct ChainModel {
  int horizon = 0;
  int n_obs = 0;
  int n_actions = 0;
  int n_rewards = 0;
  std::vector<Vector> start;
  std::vector<std::vector<std::vector<Matrix>>> K;
  std::vector<std::vector<RowVector>> rho;
};

std::vector<Vector> evaluate_chain(const ChainModel& chain, const EvaluationPolicy& eval);

// CSV with one row per timestep; `truth` adds true and residual columns.
std::string report_csv_header(const EstimateReport& report, bool with_truth);
std::string report_csv_rows(const EstimateReport& report,
                            const std::optional<std::vector<Vector>>& truth = std::nullopt);

} // namespace pope
