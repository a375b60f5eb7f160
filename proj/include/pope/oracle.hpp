#pragma once

#include "pope/pomdp.hpp"

#include <cstddef>
#include <vector>

namespace pope {

struct OracleOptions {
  std::size_t budget = std::size_t{1} << 24; // max |H_H| * |U| cells
};

// P^e(r_t) for t = 0..H, by forward recursion over (history, latent) pairs.
std::vector<Vector> exact_reward_marginals(const PomdpSpec& spec, const EvaluationPolicy& eval,
                                           const OracleOptions& options = {});

// sum_t sum_r r * P^e(r_t).
double exact_value(const PomdpSpec& spec, const EvaluationPolicy& eval,
                   const OracleOptions& options = {});

// Same value by backward recursion on V_t(h, u); an independent code path.
double exact_value_backward(const PomdpSpec& spec, const EvaluationPolicy& eval,
                            const OracleOptions& options = {});

} // namespace pope
