#pragma once

#include "pope/pomdp.hpp"
#include "pope/trajectory.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pope {

enum class FieldKind { obs, action, reward, latent };

// One observed (or latent) variable; obs may use t = -1 for the pre-observation.
struct Field {
  FieldKind kind = FieldKind::obs;
  int t = 0;
  int radix = 1;
  bool operator==(const Field&) const = default;
};

enum class EventKind {
  single_observation,
  action,
  reward,
  history_window,
  future_window,
  latent,
  composite
};

// Atoms are the product of field values in lexicographic order, first field most significant.
// An empty field list has exactly one atom.
class EventSpace {
public:
  EventSpace() = default;
  EventSpace(EventKind kind, std::vector<Field> fields);

  EventKind kind() const { return kind_; }
  const std::vector<Field>& fields() const { return fields_; }
  std::size_t raw_size() const { return raw_size_; }
  std::size_t size() const { return coarsening_ ? n_groups_ : raw_size_; }
  bool coarsened() const { return coarsening_.has_value(); }
  bool has_latent() const;
  int first_step() const;
  int last_step() const;

  // Surjective map raw atom -> group; throws ValidationError otherwise.
  EventSpace coarsen(const std::vector<int>& map) const;
  // Groups atoms by the value of one field.
  EventSpace coarsen_to_field(std::size_t field_index) const;

  std::size_t raw_index(const std::vector<int>& values) const;
  std::vector<int> decode_raw(std::size_t raw) const;
  std::size_t group_of(std::size_t raw) const {
    return coarsening_ ? static_cast<std::size_t>((*coarsening_)[raw]) : raw;
  }
  // Atom realized by record k of the batch.
  std::size_t atom(const TrajectoryBatch& batch, std::size_t k) const;
  std::string atom_name(std::size_t atom) const;
  std::string describe() const;

  // Product space, fields of a first.
  static EventSpace concat(const EventSpace& a, const EventSpace& b);

private:
  EventKind kind_ = EventKind::composite;
  std::vector<Field> fields_;
  std::size_t raw_size_ = 1;
  std::optional<std::vector<int>> coarsening_;
  std::size_t n_groups_ = 0;
};

struct EventSpaceOptions {
  int depth = 0;                        // future windows: extra steps after t
  bool include_pre_observation = false; // history windows: prepend z_{-1}
  bool include_trailing_action = false; // history windows: append a_t
  int window_start = 0;                 // history windows: first step
  std::optional<std::vector<int>> coarsening;
};

// history_window at t: (z_s, a_s, ..., z_t); future_window at t with depth d:
// (z_t, z_{t+1}, a_{t+1}, ..., z_{t+d}, a_{t+d}).
EventSpace build_event_space(const PomdpSpec& spec, EventKind kind, int t,
                             const EventSpaceOptions& options = {});

// Past proxy used by the history-based estimators: (z_0, a_0, ..., z_{i-1}, a_{i-1}), and
// (z_{-1}) at i = 0. With the pre-observation the proxy is (z_{-1}, z_0, a_0, ..., a_{i-1}).
EventSpace estimator_history(const PomdpSpec& spec, int i, bool include_pre_observation = false);

// Single previous observation z_{i-1} (z_{-1} at i = 0).
EventSpace previous_observation(const PomdpSpec& spec, int i);

EventSpace empty_space();

struct MomentProvenance {
  enum class Kind { exact, estimated };
  Kind kind = Kind::estimated;
  double n = 0; // total weight the entries were normalized by
  std::uint64_t seed = 0;
};

// One matrix (rows x cols) per slice atom.
struct MomentTable {
  EventSpace rows;
  EventSpace cols;
  EventSpace slice;
  std::vector<Matrix> entries;
  MomentProvenance provenance;
  bool conditional = false;
  std::vector<std::vector<bool>> zero_mass; // [slice][col], set by to_conditional

  const Matrix& at(std::size_t slice_atom = 0) const { return entries.at(slice_atom); }
  Matrix sum_slices() const;
  double total_mass() const;
  bool any_zero_mass() const;
};

// Integer counts; exact under merging.
struct CountTable {
  EventSpace rows;
  EventSpace cols;
  EventSpace slice;
  std::vector<std::vector<std::int64_t>> counts; // [slice][row * ncols + col]
  std::int64_t n = 0;

  void merge(const CountTable& other);
  MomentTable normalize() const;
  bool operator==(const CountTable& other) const { return counts == other.counts && n == other.n; }
};

struct MomentQuery {
  EventSpace rows;
  EventSpace cols;
  EventSpace slice;
};

CountTable count_events(const TrajectoryBatch& batch, const MomentQuery& query);

// Joint table from any batch (weighted or not). Latent fields must be present in the batch.
MomentTable tabulate(const TrajectoryBatch& batch, const MomentQuery& query);

// Observable-only estimate; latent fields are rejected.
MomentTable estimate_moment(const TrajectoryBatch& batch, const MomentQuery& query);

// Exact P^b table by enumeration; latent fields allowed.
MomentTable exact_behavior_moment(const PomdpSpec& spec, const BehaviorPolicy& behavior,
                                  const MomentQuery& query,
                                  std::size_t budget = std::size_t{1} << 23);

// Divides each column by its conditioning mass: column sums by default, or the given
// per-slice divisors. Zero-mass columns become 0 and are flagged.
MomentTable to_conditional(const MomentTable& table,
                           const std::optional<std::vector<Vector>>& divisor = std::nullopt);

// [[corner, top], [left, interior]] with the last row atom and last column atom dropped.
Matrix bordered(double corner, const RowVector& top, const Vector& left, const Matrix& interior);

enum class AugmentedFamily { future_reward, action, reward };

struct AugmentedPair {
  Matrix P;
  std::vector<Matrix> Q; // one per slice value (reward r for tau, z_{i+1} for a and r)
  std::vector<double> slice_mass;
};

// Family tau at step i given a_i = a: rows = history proxy, cols = future space.
AugmentedPair augmented_future(const TrajectoryBatch& batch, const PomdpSpec& spec, int step,
                               int action, const EventSpace& history, const EventSpace& future);

// Family a at step i given z_i: rows z_{i-1}, cols a_i; Q sliced by z_{i+1}.
AugmentedPair augmented_action(const TrajectoryBatch& batch, const PomdpSpec& spec, int step,
                               int obs);

// Family r at step i given (a_i, z_i): rows z_{i-1}, cols r_i; Q sliced by z_{i+1}.
AugmentedPair augmented_reward(const TrajectoryBatch& batch, const PomdpSpec& spec, int step,
                               int action, int obs);

struct AugmentedIndices {
  int step = 0;
  int action = 0;
  int obs = 0;
  std::optional<EventSpace> history;
  std::optional<EventSpace> future;
};

AugmentedPair assemble_augmented_pair(const TrajectoryBatch& batch, const PomdpSpec& spec,
                                      AugmentedFamily family, const AugmentedIndices& indices);

std::string format_table(const MomentTable& table);

} // namespace pope
