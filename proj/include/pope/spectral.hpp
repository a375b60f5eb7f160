#pragma once

#include "pope/pomdp.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

namespace pope {

// Singular values at or below tol * sigma_max * max(rows, cols) are treated as zero.
Matrix pinv_tol(const Matrix& A, std::optional<double> tol = std::nullopt);

Vector singular_values(const Matrix& A);
// Count of singular values above tol * sigma_max (absolute when sigma_max is 0).
int numerical_rank(const Matrix& A, double tol = 1e-9);
// sigma_max / sigma_min; infinity when sigma_min is 0.
double condition_number(const Matrix& A);

enum class ProjectionStrategy { svd_top_k, random, marginalize_then_project };

const char* to_string(ProjectionStrategy s);
ProjectionStrategy projection_strategy_from_string(const std::string& s);

struct Projection {
  Matrix M; // k x rows(P)
  ProjectionStrategy strategy = ProjectionStrategy::svd_top_k;
  double sigma_ratio = 0.0; // sigma_k / sigma_{k+1}; infinity when sigma_{k+1} is 0
  double sigma_k = 0.0;
};

Projection svd_projection(const Matrix& P, int k);
// Standard-normal k x rows(P) draw.
Projection random_projection(const Matrix& P, int k, std::uint64_t seed);

struct ColumnSelection {
  std::vector<int> columns; // ascending
  Matrix selector;          // cols(P) x k, one unit entry per column
  double condition = 0.0;   // of P * selector
};

struct ColumnSelectionOptions {
  bool include_first = true;
  std::size_t exhaustive_threshold = 16;
  double singular_tol = 1e-10; // sigma_min / sigma_max below this counts as singular
};

ColumnSelection select_columns(const Matrix& P, int k, const ColumnSelectionOptions& options = {});

struct EigenOptions {
  double distinctness_tol = 1e-9;
  double imag_tol = 1e-9;
  double normalization_tol = 1e-10;
  bool force_real = false;
};

struct EigenIdentification {
  Vector eigenvalues; // descending
  Matrix U;           // rows are left eigenvectors with first entry 1
  double gap = 0.0;   // min distance between consecutive eigenvalues
  double residual = 0.0;
  double max_imag = 0.0;
};

// Gap of a sorted spectrum without the error checks; infinity for size 1.
double min_gap(const Vector& descending);

EigenIdentification eigendecompose_normalized(const Matrix& A, const EigenOptions& options = {});

struct Extension {
  Matrix U;
  double residual = 0.0; // relative fit residual of P's columns on the selected ones
};

// Expresses every column of P through the selected ones and applies the same
// combination to the columns of U_sel.
Extension extend_columns(const Matrix& P, const std::vector<int>& columns, const Matrix& U_sel,
                         double tol = std::numeric_limits<double>::infinity());

// Rows of U are [1, p_0, ..., p_{n-2}]; returns the n x rows(U) matrix of full distributions,
// the last atom being 1 minus the rest.
Matrix distribution_from_bordered(const Matrix& U);

} // namespace pope
