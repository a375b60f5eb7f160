#include "pope/spectral.hpp"

#include "pope/errors.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <random>
#include <sstream>

namespace pope {

Matrix pinv_tol(const Matrix& A, std::optional<double> tol) {
  if (A.size() == 0) return Matrix(A.cols(), A.rows());
  Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const double t = tol.value_or(std::numeric_limits<double>::epsilon());
  const double cut = t * (s.size() ? s(0) : 0.0) * static_cast<double>(std::max(A.rows(), A.cols()));
  Vector inv = Vector::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > cut) inv(i) = 1.0 / s(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

Vector singular_values(const Matrix& A) {
  if (A.size() == 0) return Vector();
  return Eigen::JacobiSVD<Matrix>(A).singularValues();
}

int numerical_rank(const Matrix& A, double tol) {
  Vector s = singular_values(A);
  if (s.size() == 0) return 0;
  const double cut = s(0) > 0 ? tol * s(0) : tol;
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > cut) ++r;
  return r;
}

double condition_number(const Matrix& A) {
  Vector s = singular_values(A);
  if (s.size() == 0) return std::numeric_limits<double>::infinity();
  double lo = s(s.size() - 1);
  return lo > 0 ? s(0) / lo : std::numeric_limits<double>::infinity();
}

const char* to_string(ProjectionStrategy s) {
  switch (s) {
  case ProjectionStrategy::svd_top_k: return "svd";
  case ProjectionStrategy::random: return "random";
  case ProjectionStrategy::marginalize_then_project: return "marginalize";
  }
  return "svd";
}

ProjectionStrategy projection_strategy_from_string(const std::string& s) {
  if (s == "svd") return ProjectionStrategy::svd_top_k;
  if (s == "random") return ProjectionStrategy::random;
  if (s == "marginalize") return ProjectionStrategy::marginalize_then_project;
  throw UsageError("unknown projection strategy '" + s + "' (svd, random, marginalize)");
}

Projection svd_projection(const Matrix& P, int k) {
  if (k < 1 || k > P.rows())
    throw UsageError("projection rank " + std::to_string(k) + " must lie in 1.." +
                     std::to_string(P.rows()));
  Eigen::JacobiSVD<Matrix> svd(P, Eigen::ComputeFullU);
  Projection out;
  out.M = svd.matrixU().leftCols(k).transpose();
  const Vector& s = svd.singularValues();
  out.sigma_k = k - 1 < s.size() ? s(k - 1) : 0.0;
  double next = k < s.size() ? s(k) : 0.0;
  out.sigma_ratio = next > 0 ? out.sigma_k / next : std::numeric_limits<double>::infinity();
  return out;
}

Projection random_projection(const Matrix& P, int k, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Projection out;
  out.strategy = ProjectionStrategy::random;
  out.M.resize(k, P.rows());
  for (Eigen::Index i = 0; i < out.M.rows(); ++i)
    for (Eigen::Index j = 0; j < out.M.cols(); ++j) out.M(i, j) = normal(gen);
  Vector s = singular_values(out.M * P);
  out.sigma_k = s.size() >= k ? s(k - 1) : 0.0;
  out.sigma_ratio = std::numeric_limits<double>::infinity();
  return out;
}

namespace {

Matrix selector_for(const std::vector<int>& cols, Eigen::Index n) {
  Matrix L = Matrix::Zero(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) L(cols[j], static_cast<Eigen::Index>(j)) = 1.0;
  return L;
}

double subset_condition(const Matrix& P, const std::vector<int>& cols) {
  Matrix sub(P.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) sub.col(static_cast<Eigen::Index>(j)) = P.col(cols[j]);
  return condition_number(sub);
}

// Visits all k-subsets of candidates in lexicographic order.
template <class F>
void for_each_subset(const std::vector<int>& candidates, int k, std::vector<int>& cur, std::size_t start,
                     F&& f) {
  if (static_cast<int>(cur.size()) == k) {
    f(cur);
    return;
  }
  for (std::size_t i = start; i < candidates.size(); ++i) {
    cur.push_back(candidates[i]);
    for_each_subset(candidates, k, cur, i + 1, f);
    cur.pop_back();
  }
}

} // namespace

ColumnSelection select_columns(const Matrix& P, int k, const ColumnSelectionOptions& options) {
  const auto n = static_cast<int>(P.cols());
  if (k < 1 || k > n || k > P.rows())
    throw UsageError("cannot select " + std::to_string(k) + " columns from a " +
                     std::to_string(P.rows()) + "x" + std::to_string(n) + " matrix");
  std::vector<int> fixed;
  std::vector<int> candidates;
  if (options.include_first) fixed.push_back(0);
  for (int j = options.include_first ? 1 : 0; j < n; ++j) candidates.push_back(j);
  const int need = k - static_cast<int>(fixed.size());

  std::vector<int> best;
  double best_cond = std::numeric_limits<double>::infinity();
  auto consider = [&](const std::vector<int>& extra) {
    std::vector<int> cols = fixed;
    cols.insert(cols.end(), extra.begin(), extra.end());
    std::sort(cols.begin(), cols.end());
    double c = subset_condition(P, cols);
    if (best.empty() || c < best_cond) {
      best_cond = c;
      best = cols;
    }
  };

  if (static_cast<std::size_t>(n) <= options.exhaustive_threshold) {
    std::vector<int> cur;
    for_each_subset(candidates, need, cur, 0, consider);
  } else {
    // Greedy: add the column that keeps the selection best conditioned.
    std::vector<int> chosen;
    for (int step = 0; step < need; ++step) {
      int pick = -1;
      double pick_cond = std::numeric_limits<double>::infinity();
      for (int c : candidates) {
        if (std::find(chosen.begin(), chosen.end(), c) != chosen.end()) continue;
        std::vector<int> cols = fixed;
        cols.insert(cols.end(), chosen.begin(), chosen.end());
        cols.push_back(c);
        double cond = subset_condition(P, cols);
        if (pick < 0 || cond < pick_cond) {
          pick = c;
          pick_cond = cond;
        }
      }
      chosen.push_back(pick);
    }
    consider(chosen);
  }
  if (!(best_cond * options.singular_tol < 1.0)) {
    std::ostringstream os;
    os << "no set of " << k << " linearly independent columns; best condition number "
       << best_cond;
    throw RankDeficiencyError(os.str());
  }
  ColumnSelection out;
  out.columns = best;
  out.selector = selector_for(best, P.cols());
  out.condition = best_cond;
  return out;
}

double min_gap(const Vector& d) {
  double g = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i + 1 < d.size(); ++i) g = std::min(g, std::abs(d(i) - d(i + 1)));
  return g;
}

EigenIdentification eigendecompose_normalized(const Matrix& A, const EigenOptions& options) {
  if (A.rows() != A.cols() || A.rows() == 0) throw UsageError("eigendecomposition needs a square matrix");
  const Eigen::Index n = A.rows();
  Eigen::EigenSolver<Matrix> es(A.transpose(), true);
  if (es.info() != Eigen::Success) throw ImaginaryEigenvalueError("eigensolver did not converge");
  Eigen::VectorXcd lambda = es.eigenvalues();
  Eigen::MatrixXcd vecs = es.eigenvectors();

  EigenIdentification out;
  for (Eigen::Index i = 0; i < n; ++i) out.max_imag = std::max(out.max_imag, std::abs(lambda(i).imag()));
  if (out.max_imag > options.imag_tol && !options.force_real) {
    std::ostringstream os;
    os << "eigenvalue with imaginary part " << out.max_imag << " above " << options.imag_tol;
    throw ImaginaryEigenvalueError(os.str());
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return lambda(a).real() > lambda(b).real();
  });
  out.eigenvalues.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) out.eigenvalues(r) = lambda(order[static_cast<std::size_t>(r)]).real();
  out.gap = min_gap(out.eigenvalues);
  if (out.gap < options.distinctness_tol) {
    std::ostringstream os;
    os << "eigenvalues are not distinct: min gap " << out.gap << " below " << options.distinctness_tol;
    throw DistinctnessError(os.str());
  }
  out.U.resize(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    Eigen::Index c = order[static_cast<std::size_t>(r)];
    std::complex<double> first = vecs(0, c);
    if (std::abs(first) < options.normalization_tol * vecs.col(c).norm()) {
      std::ostringstream os;
      os << "left eigenvector " << r << " has first entry " << std::abs(first)
         << " and cannot be normalized";
      throw NormalizationError(os.str());
    }
    for (Eigen::Index j = 0; j < n; ++j) out.U(r, j) = (vecs(j, c) / first).real();
  }
  Eigen::FullPivLU<Matrix> lu(out.U);
  if (lu.isInvertible()) {
    out.residual = (A - lu.inverse() * out.eigenvalues.asDiagonal() * out.U).norm();
  } else {
    out.residual = std::numeric_limits<double>::infinity();
  }
  return out;
}

Extension extend_columns(const Matrix& P, const std::vector<int>& columns, const Matrix& U_sel,
                         double tol) {
  Matrix PL(P.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) PL.col(static_cast<Eigen::Index>(j)) = P.col(columns[j]);
  Matrix C = PL.colPivHouseholderQr().solve(P);
  Extension out;
  const double scale = std::max(P.norm(), std::numeric_limits<double>::min());
  out.residual = (PL * C - P).norm() / scale;
  if (out.residual > tol) {
    std::ostringstream os;
    os << "columns are not in the span of the selected ones: relative residual " << out.residual
       << " above " << tol;
    throw InconsistencyError(os.str());
  }
  out.U = U_sel * C;
  return out;
}

Matrix distribution_from_bordered(const Matrix& U) {
  const Eigen::Index k = U.rows(), n = U.cols();
  Matrix Y(n, k);
  for (Eigen::Index u = 0; u < k; ++u) {
    Y.block(0, u, n - 1, 1) = U.block(u, 1, 1, n - 1).transpose();
    Y(n - 1, u) = 1.0 - U.block(u, 1, 1, n - 1).sum();
  }
  return Y;
}

} // namespace pope
