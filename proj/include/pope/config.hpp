#pragma once

#include "pope/errors.hpp"
#include "pope/experiments.hpp"
#include "pope/serialize.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace pope {

// Everything one CLI invocation needs. Parsed from a JSON config file, then overridden by flags.
struct RunConfig {
  ExperimentConfig experiment;
  std::optional<std::filesystem::path> batch; // input batch for estimate / identify
  std::optional<std::filesystem::path> out;
};

// Unknown keys are rejected at every level.
RunConfig run_config_from_json(const Json& j);
// The effective config; loading it back reproduces the run.
Json run_config_to_json(const RunConfig& c);

Json environment_to_json(const GeneratedEnv& env);
// The spec and policies are always validated; family checks run only when a family is named.
GeneratedEnv environment_from_json(const Json& j);

// Exit code for an error category; 0 is success.
int exit_code(ErrorCategory c);
const char* category_name(ErrorCategory c);

// Per-step rows of an estimator report plus its diagnostics.
std::string estimates_header();
std::string estimate_rows(const EstimateReport& rep, const std::vector<Vector>& truth);

} // namespace pope
