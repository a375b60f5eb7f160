#pragma once

#include <stdexcept>
#include <string>

namespace pope {

// Category drives the CLI exit code.
enum class ErrorCategory { usage, validation, numerical, io, budget };

class Error : public std::runtime_error {
public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

private:
  ErrorCategory category_;
};

struct UsageError : Error {
  explicit UsageError(const std::string& w) : Error(ErrorCategory::usage, w) {}
};
struct ValidationError : Error {
  explicit ValidationError(const std::string& w) : Error(ErrorCategory::validation, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorCategory::io, w) {}
};
struct BudgetError : Error {
  explicit BudgetError(const std::string& w) : Error(ErrorCategory::budget, w) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& w) : Error(ErrorCategory::numerical, w) {}
};
struct SingularMatrixError : NumericalError {
  using NumericalError::NumericalError;
};
struct RankDeficiencyError : NumericalError {
  using NumericalError::NumericalError;
};
struct ImaginaryEigenvalueError : NumericalError {
  using NumericalError::NumericalError;
};
struct DistinctnessError : NumericalError {
  using NumericalError::NumericalError;
};
struct NormalizationError : NumericalError {
  using NumericalError::NumericalError;
};
struct InconsistencyError : NumericalError {
  using NumericalError::NumericalError;
};
// Conditioning event with zero empirical mass.
struct RareEventError : NumericalError {
  using NumericalError::NumericalError;
};

} // namespace pope
