#pragma once

#include "pope/estimators.hpp"
#include "pope/moments.hpp"
#include "pope/pomdp.hpp"
#include "pope/trajectory.hpp"

#include <optional>
#include <string>
#include <vector>

namespace pope {

// Observable trajectory prefix tau = (z_0, a_0, ..., z_H, a_H), lexicographic, z_0 most
// significant. Reward sequences rho = (r_0, ..., r_H) use the same convention.
struct IsTables {
  int horizon = 0; // evaluation horizon; the batch must reach horizon + 1
  int n_obs = 0;
  int n_actions = 0;
  int n_rewards = 0;
  std::vector<double> reward_support;
  // [i][z_i]; empty when z_i was never observed at step i.
  std::vector<std::vector<std::optional<AugmentedPair>>> action_pairs;
  // [i][a_i][z_i]
  std::vector<std::vector<std::vector<std::optional<AugmentedPair>>>> reward_pairs;
  Matrix reward_joint; // (rho, tau) = P(R_{0:H} = rho, tau)

  std::size_t n_tau() const;
  std::size_t n_rho() const;
  std::size_t tau_index(const TrajectoryBatch& batch, std::size_t k) const;
  std::size_t rho_index(const TrajectoryBatch& batch, std::size_t k) const;
};

struct IsOptions {
  double floor = 1e-6;          // lower bound on each identified pi_b factor
  double negativity_tol = 1e-9; // posterior entries below -tol are counted
  double rank_tol = 1e-9;
  std::size_t budget = std::size_t{1} << 24;
};

IsTables build_is_tables(const TrajectoryBatch& batch, const PomdpSpec& spec, int eval_horizon,
                         const IsOptions& options = {});

// Identifies which eigenvalue diagonal fixed the latent order at one step. Every matrix
// carrying the same token lists latents in the same order.
struct OrderingToken {
  int step = 0;
  int obs = 0;      // z_i
  int next_obs = 0; // z_{i+1}
  Vector eigenvalues; // P(z_{i+1} | U_i), descending
};

struct PolicyIdentification {
  Matrix policy; // (a, u) = pi_b(a | u)
  OrderingToken token;
  double eigen_gap = 0.0;
  double condition = 0.0;
  bool state_independent = false; // P^a had rank 1; columns are identical
};

struct RewardIdentification {
  Matrix reward; // (r, u) = P(r | u)
  int action = 0; // a_i slice of the reward family
  double eigen_gap = 0.0;
  double condition = 0.0;
  OrderingToken token; // slice actually used
  double eigenvalue_mismatch = 0.0; // max |lambda - given token eigenvalue|
};

PolicyIdentification identify_behavior_policy(const IsTables& tables, int step, int n_latent,
                                              const EstimatorOptions& options = {});
// When the token is absent the best (z_i, z_{i+1}, a_i) triple is chosen by eigen gap.
RewardIdentification identify_reward_model(const IsTables& tables, int step, int n_latent,
                                           const std::optional<OrderingToken>& token,
                                           const EstimatorOptions& options = {});

struct LatentStep {
  Matrix policy; // (a, u)
  Matrix reward; // (r, u)
  OrderingToken token;
  double eigen_gap = 0.0;
  double condition = 0.0;
};

struct IdentifiedLatents {
  int horizon = 0;
  int n_latent = 0;
  std::vector<LatentStep> steps;
};

IdentifiedLatents identify_latents(const IsTables& tables, int n_latent,
                                   const EstimatorOptions& options = {});

struct LatentPosterior {
  Matrix table;       // (u_{0:H}, tau), u_0 most significant
  Matrix reward_kron; // (rho, u_{0:H})
  std::vector<bool> observed; // [tau] positive mass
  int negative_entries = 0;
  double min_entry = 0.0;
};

LatentPosterior identify_latent_posterior(const IdentifiedLatents& identified,
                                          const IsTables& tables, const IsOptions& options = {});

struct IsResult {
  std::string estimator;
  double value = 0.0;
  double std_err = 0.0;
  std::vector<double> return_support; // distinct values of sum_t r_t
  Matrix weights;                     // (v, tau); empty for the naive baseline
  int floored = 0;
  int negative_posterior = 0;
};

IsResult is_estimate(const TrajectoryBatch& batch, const IsTables& tables,
                     const IdentifiedLatents& identified, const LatentPosterior& posterior,
                     const EvaluationPolicy& eval, const IsOptions& options = {});

// Importance weights from observable action frequencies. Biased under confounding.
IsResult is_naive_baseline(const TrajectoryBatch& batch, const EvaluationPolicy& eval,
                           int eval_horizon, const std::vector<double>& reward_support,
                           const IsOptions& options = {});

} // namespace pope
