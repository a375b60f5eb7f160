#include "pope/pomdp.hpp"

#include "pope/errors.hpp"

#include <cmath>
#include <sstream>

namespace pope {

namespace {

constexpr double kSumTol = 1e-12;

std::string fmt_double(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

void check_columns(const Matrix& m, const std::string& name, const std::string& fixed,
                   std::vector<Violation>& out) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    std::string where = name + "[.," + std::to_string(c) + (fixed.empty() ? "" : "," + fixed) + "]";
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      double v = m(r, c);
      if (!std::isfinite(v) || v < 0.0) {
        out.push_back({Violation::Severity::error,
                       name + "[" + std::to_string(r) + "," + std::to_string(c) +
                           (fixed.empty() ? "" : "," + fixed) + "]",
                       "entry " + fmt_double(v) + " is negative or not finite"});
      }
    }
    double s = m.col(c).sum();
    if (std::abs(s - 1.0) > kSumTol) {
      out.push_back({Violation::Severity::error, where,
                     "column sums to " + fmt_double(s) + " (deviation " + fmt_double(s - 1.0) + ")"});
    }
  }
}

void check_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const std::string& name,
                 std::vector<Violation>& out) {
  if (m.rows() != rows || m.cols() != cols) {
    out.push_back({Violation::Severity::error, name,
                   "shape " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                       ", expected " + std::to_string(rows) + "x" + std::to_string(cols)});
  }
}

} // namespace

bool PomdpSpec::action_independent_rewards(double tol) const {
  for (std::size_t a = 1; a < reward_model.size(); ++a) {
    if ((reward_model[a] - reward_model[0]).cwiseAbs().maxCoeff() > tol) return false;
  }
  return true;
}

std::size_t HistoryIndexer::count(int t) const {
  std::size_t n = static_cast<std::size_t>(n_obs);
  for (int i = 0; i < t; ++i) n *= static_cast<std::size_t>(n_actions * n_obs);
  return n;
}

std::vector<int> HistoryIndexer::decode(std::size_t h, int t) const {
  std::vector<int> out(static_cast<std::size_t>(2 * t + 1));
  for (int i = t; i >= 0; --i) {
    out[static_cast<std::size_t>(2 * i)] = static_cast<int>(h % static_cast<std::size_t>(n_obs));
    h /= static_cast<std::size_t>(n_obs);
    if (i > 0) {
      out[static_cast<std::size_t>(2 * i - 1)] =
          static_cast<int>(h % static_cast<std::size_t>(n_actions));
      h /= static_cast<std::size_t>(n_actions);
    }
  }
  return out;
}

EvaluationPolicy EvaluationPolicy::reactive(const std::vector<Matrix>& per_step, int n_obs,
                                            int n_actions) {
  EvaluationPolicy p;
  p.index_ = {n_obs, n_actions};
  p.reactive_ = per_step;
  for (std::size_t t = 0; t < per_step.size(); ++t) {
    const Matrix& r = per_step[t];
    if (r.rows() != n_actions || r.cols() != n_obs) {
      throw ValidationError("reactive evaluation table at t=" + std::to_string(t) +
                            " must be |A| x |Z|");
    }
    std::size_t n = p.index_.count(static_cast<int>(t));
    Matrix full(n_actions, static_cast<Eigen::Index>(n));
    for (std::size_t h = 0; h < n; ++h) {
      int z = static_cast<int>(h % static_cast<std::size_t>(n_obs));
      full.col(static_cast<Eigen::Index>(h)) = r.col(z);
    }
    p.tables_.push_back(std::move(full));
  }
  return p;
}

EvaluationPolicy EvaluationPolicy::full_history(std::vector<Matrix> per_step, int n_obs,
                                                int n_actions) {
  EvaluationPolicy p;
  p.index_ = {n_obs, n_actions};
  for (std::size_t t = 0; t < per_step.size(); ++t) {
    std::size_t n = p.index_.count(static_cast<int>(t));
    if (per_step[t].rows() != n_actions || static_cast<std::size_t>(per_step[t].cols()) != n) {
      throw ValidationError("full-history evaluation table at t=" + std::to_string(t) +
                            " must be |A| x |H_t| = " + std::to_string(n_actions) + " x " +
                            std::to_string(n));
    }
  }
  p.tables_ = std::move(per_step);
  return p;
}

EvaluationPolicy EvaluationPolicy::truncated(int t_max) const {
  EvaluationPolicy p = *this;
  p.tables_.resize(static_cast<std::size_t>(t_max + 1));
  if (p.reactive_) p.reactive_->resize(static_cast<std::size_t>(t_max + 1));
  return p;
}

std::vector<Violation> validate_spec(const PomdpSpec& spec) {
  std::vector<Violation> out;
  if (spec.n_states < 1 || spec.n_obs < 1 || spec.n_actions < 1 || spec.reward_support.empty()) {
    out.push_back({Violation::Severity::error, "sizes", "all counts must be positive"});
    return out;
  }
  if (spec.horizon < 0) out.push_back({Violation::Severity::error, "horizon", "must be >= 0"});
  if (spec.n_states > 255 || spec.n_obs > 255 || spec.n_actions > 255 || spec.n_rewards() > 255) {
    out.push_back({Violation::Severity::error, "sizes", "counts above 255 are not supported"});
  }
  if (spec.n_states > spec.n_obs) {
    out.push_back({Violation::Severity::warning, "sizes", "|U| > |Z|"});
  }
  const auto U = spec.n_states, Z = spec.n_obs, A = spec.n_actions, R = spec.n_rewards();
  if (static_cast<int>(spec.transition.size()) != A) {
    out.push_back({Violation::Severity::error, "T", "needs one slice per action"});
  } else {
    for (int a = 0; a < A; ++a) {
      check_shape(spec.transition[a], U, U, "T[.,.," + std::to_string(a) + "]", out);
      if (spec.transition[a].rows() == U && spec.transition[a].cols() == U)
        check_columns(spec.transition[a], "T", "a=" + std::to_string(a), out);
    }
  }
  check_shape(spec.emission, Z, U, "O", out);
  if (spec.emission.rows() == Z && spec.emission.cols() == U) check_columns(spec.emission, "O", "", out);
  if (spec.pre_emission) {
    check_shape(*spec.pre_emission, Z, U, "O_pre", out);
    if (spec.pre_emission->rows() == Z && spec.pre_emission->cols() == U)
      check_columns(*spec.pre_emission, "O_pre", "", out);
  }
  if (static_cast<int>(spec.reward_model.size()) != A) {
    out.push_back({Violation::Severity::error, "P_r", "needs one slice per action"});
  } else {
    for (int a = 0; a < A; ++a) {
      check_shape(spec.reward_model[a], R, U, "P_r[.,.," + std::to_string(a) + "]", out);
      if (spec.reward_model[a].rows() == R && spec.reward_model[a].cols() == U)
        check_columns(spec.reward_model[a], "P_r", "a=" + std::to_string(a), out);
    }
  }
  if (spec.initial.size() != U) {
    out.push_back({Violation::Severity::error, "mu", "length must equal |U|"});
  } else {
    check_columns(Matrix(spec.initial), "mu", "", out);
  }
  return out;
}

std::vector<Violation> validate_behavior(const PomdpSpec& spec, const BehaviorPolicy& behavior) {
  std::vector<Violation> out;
  if (static_cast<int>(behavior.steps.size()) < spec.horizon + 1) {
    out.push_back({Violation::Severity::error, "pi_b", "needs one table per step 0..H"});
    return out;
  }
  for (std::size_t t = 0; t < behavior.steps.size(); ++t) {
    const Matrix& m = behavior.steps[t];
    std::string name = "pi_b^(" + std::to_string(t) + ")";
    check_shape(m, spec.n_actions, spec.n_states, name, out);
    if (m.rows() == spec.n_actions && m.cols() == spec.n_states) check_columns(m, name, "", out);
  }
  return out;
}

std::vector<Violation> validate_evaluation(const PomdpSpec& spec, const EvaluationPolicy& eval) {
  std::vector<Violation> out;
  if (eval.n_obs() != spec.n_obs || eval.n_actions() != spec.n_actions) {
    out.push_back({Violation::Severity::error, "pi_e", "sizes disagree with the spec"});
    return out;
  }
  for (int t = 0; t <= eval.horizon(); ++t) {
    check_columns(eval.table(t), "pi_e^(" + std::to_string(t) + ")", "", out);
  }
  return out;
}

bool has_errors(const std::vector<Violation>& violations) {
  for (const auto& v : violations)
    if (v.severity == Violation::Severity::error) return true;
  return false;
}

std::string describe(const std::vector<Violation>& violations) {
  std::ostringstream os;
  for (const auto& v : violations) {
    os << (v.severity == Violation::Severity::error ? "error" : "warning") << ": " << v.where
       << ": " << v.message << "\n";
  }
  return os.str();
}

void require_valid(const PomdpSpec& spec, const BehaviorPolicy* behavior,
                   const EvaluationPolicy* eval) {
  auto v = validate_spec(spec);
  if (behavior) {
    auto b = validate_behavior(spec, *behavior);
    v.insert(v.end(), b.begin(), b.end());
  }
  if (eval) {
    auto e = validate_evaluation(spec, *eval);
    v.insert(v.end(), e.begin(), e.end());
  }
  if (has_errors(v)) throw ValidationError("invalid model:\n" + describe(v));
}

PomdpSpec with_horizon(const PomdpSpec& spec, int horizon) {
  PomdpSpec s = spec;
  s.horizon = horizon;
  return s;
}

} // namespace pope
