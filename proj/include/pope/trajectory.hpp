#pragma once

#include "pope/pomdp.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pope {

struct Trajectory {
  std::vector<int> latent; // u_0..u_H
  int pre_obs = 0;         // z_{-1}
  std::vector<int> obs;    // z_0..z_H
  std::vector<int> actions;
  std::vector<int> rewards; // indices into the reward support
};

struct ObservableTrajectory {
  int pre_obs = 0;
  std::vector<int> obs;
  std::vector<int> actions;
  std::vector<int> rewards;
};

struct BatchProvenance {
  enum class Kind { sampled, exact };
  Kind kind = Kind::sampled;
  std::uint64_t seed = 0;
  std::string spec_digest;
};

// Flat store of trajectories. Sampled batches have unit weights and integer counts;
// exact batches carry one probability per distinct record.
class TrajectoryBatch {
public:
  static constexpr std::uint8_t kMissing = 255; // latent summed out

  TrajectoryBatch() = default;
  TrajectoryBatch(int horizon, bool weighted);
  // Rebuilds a batch from its flat record store; throws ValidationError on a size mismatch.
  static TrajectoryBatch from_raw(int horizon, bool weighted, std::vector<std::uint8_t> data,
                                  std::vector<double> weights);

  int horizon() const { return horizon_; }
  std::size_t size() const { return data_.size() / stride_; }
  bool weighted() const { return weighted_; }
  bool empty() const { return data_.empty(); }

  // Total mass: n for sampled batches, 1 for exact ones.
  double total_weight() const;
  double weight(std::size_t k) const { return weighted_ ? weights_[k] : 1.0; }

  int pre_obs(std::size_t k) const { return data_[k * stride_]; }
  int obs(std::size_t k, int t) const { return data_[k * stride_ + 1 + 3 * t]; }
  int action(std::size_t k, int t) const { return data_[k * stride_ + 2 + 3 * t]; }
  int reward(std::size_t k, int t) const { return data_[k * stride_ + 3 + 3 * t]; }
  int latent(std::size_t k, int t) const { return data_[k * stride_ + latent_offset() + t]; }
  bool has_latent(std::size_t k, int t) const { return latent(k, t) != kMissing; }

  void push(const Trajectory& tr, double w = 1.0);
  Trajectory get(std::size_t k) const;
  ObservableTrajectory observable(std::size_t k) const;

  // Appends another batch with the same layout.
  void append(const TrajectoryBatch& other);

  BatchProvenance provenance;

  const std::vector<std::uint8_t>& raw() const { return data_; }
  std::size_t stride() const { return stride_; }

private:
  std::size_t latent_offset() const { return 1 + 3 * static_cast<std::size_t>(horizon_ + 1); }

  int horizon_ = 0;
  bool weighted_ = false;
  std::size_t stride_ = 1;
  std::vector<std::uint8_t> data_;
  std::vector<double> weights_;
};

// Seeds the generator of trajectory `index`; independent of batch size and order.
std::uint64_t trajectory_seed(std::uint64_t seed, std::uint64_t index);

Trajectory sample_trajectory(const PomdpSpec& spec, const BehaviorPolicy& behavior,
                             std::uint64_t seed, std::uint64_t index);

TrajectoryBatch sample_batch(const PomdpSpec& spec, const BehaviorPolicy& behavior, std::size_t n,
                             std::uint64_t seed);

// Rollout of the evaluation policy on the full model; used as a simulation oracle.
std::vector<double> rollout_returns(const PomdpSpec& spec, const EvaluationPolicy& eval,
                                    std::size_t n, std::uint64_t seed);

struct EnumerationOptions {
  std::vector<bool> keep_latent; // per step; empty keeps none
  std::size_t budget = std::size_t{1} << 23;
};

// Every observable record (plus kept latents) with its probability under P^b.
TrajectoryBatch enumerate_behavior(const PomdpSpec& spec, const BehaviorPolicy& behavior,
                                   const EnumerationOptions& options = {});

std::size_t enumeration_size(const PomdpSpec& spec, const EnumerationOptions& options);

} // namespace pope
