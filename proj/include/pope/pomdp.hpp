#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace pope {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// Tabular POMDP with time-homogeneous dynamics over steps 0..horizon.
// All conditional tables are column-stochastic: the conditioned variable indexes columns.
struct PomdpSpec {
  int n_states = 0;
  int n_obs = 0;
  int n_actions = 0;
  std::vector<double> reward_support;
  int horizon = 0;

  std::vector<Matrix> transition;   // [a](u', u)
  Matrix emission;                  // (z, u)
  std::optional<Matrix> pre_emission; // (z, u) for z_{-1}; emission when absent
  std::vector<Matrix> reward_model; // [a](r, u)
  Vector initial;                   // (u)

  int n_rewards() const { return static_cast<int>(reward_support.size()); }
  const Matrix& pre_observation_emission() const {
    return pre_emission ? *pre_emission : emission;
  }
  bool action_independent_rewards(double tol = 1e-12) const;
};

struct BehaviorPolicy {
  std::vector<Matrix> steps; // [t](a, u)
  const Matrix& at(int t) const { return steps.at(static_cast<std::size_t>(t)); }
};

// Observable history h_t = (z_0, a_0, ..., z_t), indexed lexicographically.
struct HistoryIndexer {
  int n_obs = 0;
  int n_actions = 0;

  std::size_t count(int t) const;
  std::size_t root(int z0) const { return static_cast<std::size_t>(z0); }
  std::size_t extend(std::size_t h, int a, int z) const {
    return (h * static_cast<std::size_t>(n_actions) + static_cast<std::size_t>(a)) *
               static_cast<std::size_t>(n_obs) +
           static_cast<std::size_t>(z);
  }
  // Decodes h_t into (z_0, a_0, ..., z_t).
  std::vector<int> decode(std::size_t h, int t) const;
};

// Canonical form is the full-history table; reactive tables are expanded on construction.
class EvaluationPolicy {
public:
  EvaluationPolicy() = default;

  static EvaluationPolicy reactive(const std::vector<Matrix>& per_step, int n_obs, int n_actions);
  static EvaluationPolicy full_history(std::vector<Matrix> per_step, int n_obs, int n_actions);

  int horizon() const { return static_cast<int>(tables_.size()) - 1; }
  int n_obs() const { return index_.n_obs; }
  int n_actions() const { return index_.n_actions; }
  const HistoryIndexer& indexer() const { return index_; }

  double prob(int t, std::size_t history, int a) const {
    return tables_[static_cast<std::size_t>(t)](a, static_cast<Eigen::Index>(history));
  }
  const Matrix& table(int t) const { return tables_.at(static_cast<std::size_t>(t)); }
  bool is_reactive() const { return reactive_.has_value(); }
  const std::vector<Matrix>& reactive_tables() const { return *reactive_; }

  // Keeps steps 0..t_max.
  EvaluationPolicy truncated(int t_max) const;

private:
  HistoryIndexer index_;
  std::vector<Matrix> tables_; // [t](a, h_t)
  std::optional<std::vector<Matrix>> reactive_;
};

struct PolicyPair {
  BehaviorPolicy behavior;
  EvaluationPolicy evaluation;
};

struct Violation {
  enum class Severity { error, warning };
  Severity severity = Severity::error;
  std::string where;
  std::string message;
};

std::vector<Violation> validate_spec(const PomdpSpec& spec);
std::vector<Violation> validate_behavior(const PomdpSpec& spec, const BehaviorPolicy& behavior);
std::vector<Violation> validate_evaluation(const PomdpSpec& spec, const EvaluationPolicy& eval);

bool has_errors(const std::vector<Violation>& violations);
std::string describe(const std::vector<Violation>& violations);

// Throws ValidationError listing every error-severity violation.
void require_valid(const PomdpSpec& spec, const BehaviorPolicy* behavior = nullptr,
                   const EvaluationPolicy* eval = nullptr);

// Same spec with a different horizon; dynamics are shared.
PomdpSpec with_horizon(const PomdpSpec& spec, int horizon);

} // namespace pope
