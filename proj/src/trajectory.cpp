#include "pope/trajectory.hpp"

#include "pope/errors.hpp"
#include "pope/serialize.hpp"

#include <random>

namespace pope {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <class Column>
int draw(const Column& probs, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double x = unif(gen);
  double acc = 0.0;
  const int n = static_cast<int>(probs.size());
  for (int i = 0; i < n; ++i) {
    acc += probs(i);
    if (x < acc) return i;
  }
  // Round-off tail: last index with positive mass.
  for (int i = n - 1; i >= 0; --i)
    if (probs(i) > 0.0) return i;
  return n - 1;
}

} // namespace

TrajectoryBatch::TrajectoryBatch(int horizon, bool weighted)
    : horizon_(horizon), weighted_(weighted),
      stride_(1 + 3 * static_cast<std::size_t>(horizon + 1) + static_cast<std::size_t>(horizon + 1)) {}

TrajectoryBatch TrajectoryBatch::from_raw(int horizon, bool weighted, std::vector<std::uint8_t> data,
                                          std::vector<double> weights) {
  TrajectoryBatch b(horizon, weighted);
  if (data.size() % b.stride_ != 0)
    throw ValidationError("record store of " + std::to_string(data.size()) + " bytes is not a multiple of " +
                          std::to_string(b.stride_));
  if (weighted ? weights.size() != data.size() / b.stride_ : !weights.empty())
    throw ValidationError("weights do not match the record count");
  b.data_ = std::move(data);
  b.weights_ = std::move(weights);
  return b;
}

double TrajectoryBatch::total_weight() const {
  if (!weighted_) return static_cast<double>(size());
  double s = 0.0;
  for (double w : weights_) s += w;
  return s;
}

void TrajectoryBatch::push(const Trajectory& tr, double w) {
  const std::size_t base = data_.size();
  data_.resize(base + stride_, kMissing);
  data_[base] = static_cast<std::uint8_t>(tr.pre_obs);
  for (int t = 0; t <= horizon_; ++t) {
    data_[base + 1 + 3 * t] = static_cast<std::uint8_t>(tr.obs[t]);
    data_[base + 2 + 3 * t] = static_cast<std::uint8_t>(tr.actions[t]);
    data_[base + 3 + 3 * t] = static_cast<std::uint8_t>(tr.rewards[t]);
    if (static_cast<int>(tr.latent.size()) > t && tr.latent[t] >= 0)
      data_[base + latent_offset() + t] = static_cast<std::uint8_t>(tr.latent[t]);
  }
  if (weighted_) weights_.push_back(w);
}

Trajectory TrajectoryBatch::get(std::size_t k) const {
  Trajectory tr;
  tr.pre_obs = pre_obs(k);
  for (int t = 0; t <= horizon_; ++t) {
    tr.obs.push_back(obs(k, t));
    tr.actions.push_back(action(k, t));
    tr.rewards.push_back(reward(k, t));
    tr.latent.push_back(has_latent(k, t) ? latent(k, t) : -1);
  }
  return tr;
}

ObservableTrajectory TrajectoryBatch::observable(std::size_t k) const {
  ObservableTrajectory tr;
  tr.pre_obs = pre_obs(k);
  for (int t = 0; t <= horizon_; ++t) {
    tr.obs.push_back(obs(k, t));
    tr.actions.push_back(action(k, t));
    tr.rewards.push_back(reward(k, t));
  }
  return tr;
}

void TrajectoryBatch::append(const TrajectoryBatch& other) {
  if (other.horizon_ != horizon_ || other.weighted_ != weighted_)
    throw UsageError("cannot append batches with different layouts");
  data_.insert(data_.end(), other.data_.begin(), other.data_.end());
  weights_.insert(weights_.end(), other.weights_.begin(), other.weights_.end());
}

std::uint64_t trajectory_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

Trajectory sample_trajectory(const PomdpSpec& spec, const BehaviorPolicy& behavior,
                             std::uint64_t seed, std::uint64_t index) {
  std::mt19937_64 gen(trajectory_seed(seed, index));
  const int H = spec.horizon;
  Trajectory tr;
  tr.latent.resize(H + 1);
  tr.obs.resize(H + 1);
  tr.actions.resize(H + 1);
  tr.rewards.resize(H + 1);
  int u = draw(spec.initial, gen);
  tr.pre_obs = draw(spec.pre_observation_emission().col(u), gen);
  for (int t = 0; t <= H; ++t) {
    tr.latent[t] = u;
    tr.obs[t] = draw(spec.emission.col(u), gen);
    int a = draw(behavior.at(t).col(u), gen);
    tr.actions[t] = a;
    tr.rewards[t] = draw(spec.reward_model[a].col(u), gen);
    if (t < H) u = draw(spec.transition[a].col(u), gen);
  }
  return tr;
}

TrajectoryBatch sample_batch(const PomdpSpec& spec, const BehaviorPolicy& behavior, std::size_t n,
                             std::uint64_t seed) {
  require_valid(spec, &behavior);
  if (n < 1) throw UsageError("sample_batch needs n >= 1");
  TrajectoryBatch batch(spec.horizon, false);
  for (std::size_t k = 0; k < n; ++k) batch.push(sample_trajectory(spec, behavior, seed, k));
  batch.provenance.kind = BatchProvenance::Kind::sampled;
  batch.provenance.seed = seed;
  batch.provenance.spec_digest = spec_digest(spec);
  return batch;
}

std::vector<double> rollout_returns(const PomdpSpec& spec, const EvaluationPolicy& eval,
                                    std::size_t n, std::uint64_t seed) {
  const int H = spec.horizon;
  const HistoryIndexer& idx = eval.indexer();
  std::vector<double> out(n);
  Vector col(spec.n_actions);
  for (std::size_t k = 0; k < n; ++k) {
    std::mt19937_64 gen(trajectory_seed(seed, k));
    int u = draw(spec.initial, gen);
    int z = draw(spec.emission.col(u), gen);
    std::size_t h = idx.root(z);
    double total = 0.0;
    for (int t = 0; t <= H; ++t) {
      for (int a = 0; a < spec.n_actions; ++a) col(a) = eval.prob(t, h, a);
      int a = draw(col, gen);
      total += spec.reward_support[draw(spec.reward_model[a].col(u), gen)];
      if (t < H) {
        u = draw(spec.transition[a].col(u), gen);
        z = draw(spec.emission.col(u), gen);
        h = idx.extend(h, a, z);
      }
    }
    out[k] = total;
  }
  return out;
}

std::size_t enumeration_size(const PomdpSpec& spec, const EnumerationOptions& options) {
  double n = static_cast<double>(spec.n_obs) * spec.n_obs;
  for (int t = 0; t <= spec.horizon; ++t) {
    n *= static_cast<double>(spec.n_actions) * spec.n_rewards();
    if (t < spec.horizon) n *= spec.n_obs;
    if (static_cast<int>(options.keep_latent.size()) > t && options.keep_latent[t])
      n *= spec.n_states;
  }
  return n > 1e18 ? static_cast<std::size_t>(-1) : static_cast<std::size_t>(n);
}

namespace {

struct Enumerator {
  const PomdpSpec& spec;
  const BehaviorPolicy& behavior;
  const std::vector<bool>& keep;
  TrajectoryBatch& out;
  Trajectory record;

  bool kept(int t) const { return static_cast<int>(keep.size()) > t && keep[t]; }

  void step(int t, const Vector& alpha) {
    if (kept(t)) {
      for (int u = 0; u < spec.n_states; ++u) {
        if (alpha(u) == 0.0) continue;
        Vector single = Vector::Zero(spec.n_states);
        single(u) = alpha(u);
        record.latent[t] = u;
        act(t, single);
      }
      record.latent[t] = -1;
    } else {
      act(t, alpha);
    }
  }

  void act(int t, const Vector& alpha) {
    const int H = spec.horizon;
    const Matrix& pi = behavior.at(t);
    Vector beta(spec.n_states);
    for (int a = 0; a < spec.n_actions; ++a) {
      record.actions[t] = a;
      for (int r = 0; r < spec.n_rewards(); ++r) {
        record.rewards[t] = r;
        beta = alpha.cwiseProduct(pi.row(a).transpose()).cwiseProduct(
            spec.reward_model[a].row(r).transpose());
        if (beta.sum() == 0.0) continue;
        if (t == H) {
          out.push(record, beta.sum());
          continue;
        }
        Vector moved = spec.transition[a] * beta;
        for (int z = 0; z < spec.n_obs; ++z) {
          Vector next = moved.cwiseProduct(spec.emission.row(z).transpose());
          if (next.sum() == 0.0) continue;
          record.obs[t + 1] = z;
          step(t + 1, next);
        }
      }
    }
  }
};

} // namespace

TrajectoryBatch enumerate_behavior(const PomdpSpec& spec, const BehaviorPolicy& behavior,
                                   const EnumerationOptions& options) {
  require_valid(spec, &behavior);
  std::size_t bound = enumeration_size(spec, options);
  if (bound > options.budget) {
    throw BudgetError("enumeration needs up to " + std::to_string(bound) +
                      " records, above the budget of " + std::to_string(options.budget));
  }
  const int H = spec.horizon;
  TrajectoryBatch out(H, true);
  Enumerator e{spec, behavior, options.keep_latent, out, {}};
  e.record.latent.assign(H + 1, -1);
  e.record.obs.assign(H + 1, 0);
  e.record.actions.assign(H + 1, 0);
  e.record.rewards.assign(H + 1, 0);
  const Matrix& pre = spec.pre_observation_emission();
  for (int zp = 0; zp < spec.n_obs; ++zp) {
    for (int z0 = 0; z0 < spec.n_obs; ++z0) {
      Vector alpha = spec.initial.cwiseProduct(pre.row(zp).transpose())
                         .cwiseProduct(spec.emission.row(z0).transpose());
      if (alpha.sum() == 0.0) continue;
      e.record.pre_obs = zp;
      e.record.obs[0] = z0;
      e.step(0, alpha);
    }
  }
  out.provenance.kind = BatchProvenance::Kind::exact;
  out.provenance.spec_digest = spec_digest(spec);
  return out;
}

} // namespace pope
