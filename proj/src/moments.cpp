#include "pope/moments.hpp"

#include "pope/errors.hpp"

#include <algorithm>
#include <sstream>

namespace pope {

namespace {

int field_value(const TrajectoryBatch& batch, std::size_t k, const Field& f) {
  switch (f.kind) {
  case FieldKind::obs: return f.t < 0 ? batch.pre_obs(k) : batch.obs(k, f.t);
  case FieldKind::action: return batch.action(k, f.t);
  case FieldKind::reward: return batch.reward(k, f.t);
  case FieldKind::latent:
    if (!batch.has_latent(k, f.t))
      throw UsageError("batch does not carry latent u_" + std::to_string(f.t));
    return batch.latent(k, f.t);
  }
  return 0;
}

std::string field_name(const Field& f) {
  const char* prefix = "z";
  switch (f.kind) {
  case FieldKind::obs: prefix = "z"; break;
  case FieldKind::action: prefix = "a"; break;
  case FieldKind::reward: prefix = "r"; break;
  case FieldKind::latent: prefix = "u"; break;
  }
  return std::string(prefix) + "_" + std::to_string(f.t);
}

void check_fields_in_horizon(const EventSpace& s, int horizon) {
  for (const auto& f : s.fields()) {
    if (f.t > horizon || f.t < -1 || (f.t == -1 && f.kind != FieldKind::obs))
      throw UsageError("event " + field_name(f) + " lies outside the batch horizon " +
                       std::to_string(horizon));
  }
}

Field obs_field(const PomdpSpec& s, int t) { return {FieldKind::obs, t, s.n_obs}; }
Field act_field(const PomdpSpec& s, int t) { return {FieldKind::action, t, s.n_actions}; }
Field rew_field(const PomdpSpec& s, int t) { return {FieldKind::reward, t, s.n_rewards()}; }

} // namespace

EventSpace::EventSpace(EventKind kind, std::vector<Field> fields)
    : kind_(kind), fields_(std::move(fields)) {
  raw_size_ = 1;
  for (const auto& f : fields_) {
    if (f.radix < 1) throw ValidationError("field radix must be positive");
    raw_size_ *= static_cast<std::size_t>(f.radix);
  }
}

bool EventSpace::has_latent() const {
  return std::any_of(fields_.begin(), fields_.end(),
                     [](const Field& f) { return f.kind == FieldKind::latent; });
}

int EventSpace::first_step() const {
  int t = 1 << 30;
  for (const auto& f : fields_) t = std::min(t, f.t);
  return t;
}

int EventSpace::last_step() const {
  int t = -1;
  for (const auto& f : fields_) t = std::max(t, f.t);
  return t;
}

EventSpace EventSpace::coarsen(const std::vector<int>& map) const {
  if (map.size() != raw_size_)
    throw ValidationError("coarsening map has " + std::to_string(map.size()) +
                          " entries for " + std::to_string(raw_size_) + " atoms");
  int groups = 0;
  for (int g : map) {
    if (g < 0) throw ValidationError("coarsening map has a negative group");
    groups = std::max(groups, g + 1);
  }
  std::vector<bool> hit(static_cast<std::size_t>(groups), false);
  for (int g : map) hit[static_cast<std::size_t>(g)] = true;
  for (int g = 0; g < groups; ++g)
    if (!hit[static_cast<std::size_t>(g)])
      throw ValidationError("coarsening map is not surjective: group " + std::to_string(g) +
                            " is empty");
  EventSpace out = *this;
  out.coarsening_ = map;
  out.n_groups_ = static_cast<std::size_t>(groups);
  return out;
}

EventSpace EventSpace::coarsen_to_field(std::size_t field_index) const {
  std::vector<int> map(raw_size_);
  for (std::size_t a = 0; a < raw_size_; ++a) map[a] = decode_raw(a).at(field_index);
  return coarsen(map);
}

std::size_t EventSpace::raw_index(const std::vector<int>& values) const {
  std::size_t idx = 0;
  for (std::size_t j = 0; j < fields_.size(); ++j)
    idx = idx * static_cast<std::size_t>(fields_[j].radix) + static_cast<std::size_t>(values[j]);
  return idx;
}

std::vector<int> EventSpace::decode_raw(std::size_t raw) const {
  std::vector<int> v(fields_.size());
  for (std::size_t j = fields_.size(); j-- > 0;) {
    v[j] = static_cast<int>(raw % static_cast<std::size_t>(fields_[j].radix));
    raw /= static_cast<std::size_t>(fields_[j].radix);
  }
  return v;
}

std::size_t EventSpace::atom(const TrajectoryBatch& batch, std::size_t k) const {
  std::size_t idx = 0;
  for (const auto& f : fields_)
    idx = idx * static_cast<std::size_t>(f.radix) + static_cast<std::size_t>(field_value(batch, k, f));
  return group_of(idx);
}

std::string EventSpace::atom_name(std::size_t atom) const {
  if (coarsening_) return "g" + std::to_string(atom);
  auto v = decode_raw(atom);
  std::string s;
  for (std::size_t j = 0; j < fields_.size(); ++j) {
    if (j) s += ",";
    s += field_name(fields_[j]) + "=" + std::to_string(v[j]);
  }
  return s.empty() ? "*" : s;
}

std::string EventSpace::describe() const {
  std::string s = "(";
  for (std::size_t j = 0; j < fields_.size(); ++j) {
    if (j) s += ",";
    s += field_name(fields_[j]);
  }
  s += ")";
  if (coarsening_) s += "/" + std::to_string(n_groups_);
  return s;
}

EventSpace EventSpace::concat(const EventSpace& a, const EventSpace& b) {
  if (a.coarsened() || b.coarsened())
    throw UsageError("cannot concatenate coarsened event spaces");
  std::vector<Field> f = a.fields_;
  f.insert(f.end(), b.fields_.begin(), b.fields_.end());
  return EventSpace(EventKind::composite, std::move(f));
}

EventSpace empty_space() { return EventSpace(EventKind::composite, {}); }

EventSpace build_event_space(const PomdpSpec& spec, EventKind kind, int t,
                             const EventSpaceOptions& options) {
  if (t < -1 || t > spec.horizon)
    throw UsageError("timestep " + std::to_string(t) + " outside 0.." + std::to_string(spec.horizon));
  std::vector<Field> f;
  switch (kind) {
  case EventKind::single_observation: f.push_back(obs_field(spec, t)); break;
  case EventKind::action: f.push_back(act_field(spec, t)); break;
  case EventKind::reward: f.push_back(rew_field(spec, t)); break;
  case EventKind::latent: f.push_back({FieldKind::latent, t, spec.n_states}); break;
  case EventKind::history_window:
    if (options.include_pre_observation) f.push_back(obs_field(spec, -1));
    for (int s = options.window_start; s <= t; ++s) {
      f.push_back(obs_field(spec, s));
      if (s < t || options.include_trailing_action) f.push_back(act_field(spec, s));
    }
    break;
  case EventKind::future_window:
    if (t + options.depth > spec.horizon)
      throw UsageError("future window of depth " + std::to_string(options.depth) + " at t=" +
                       std::to_string(t) + " exceeds the horizon");
    f.push_back(obs_field(spec, t));
    for (int s = t + 1; s <= t + options.depth; ++s) {
      f.push_back(obs_field(spec, s));
      f.push_back(act_field(spec, s));
    }
    break;
  case EventKind::composite: throw UsageError("composite spaces are built with concat");
  }
  EventSpace space(kind, std::move(f));
  if (options.coarsening) space = space.coarsen(*options.coarsening);
  return space;
}

EventSpace estimator_history(const PomdpSpec& spec, int i, bool include_pre_observation) {
  if (i == 0) return EventSpace(EventKind::history_window, {obs_field(spec, -1)});
  EventSpaceOptions o;
  o.include_trailing_action = true;
  o.include_pre_observation = include_pre_observation;
  return build_event_space(spec, EventKind::history_window, i - 1, o);
}

EventSpace previous_observation(const PomdpSpec& spec, int i) {
  return EventSpace(EventKind::single_observation, {obs_field(spec, i - 1)});
}

Matrix MomentTable::sum_slices() const {
  Matrix s = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (const auto& m : entries) s += m;
  return s;
}

double MomentTable::total_mass() const { return sum_slices().sum(); }

bool MomentTable::any_zero_mass() const {
  for (const auto& s : zero_mass)
    for (bool b : s)
      if (b) return true;
  return false;
}

namespace {

CountTable empty_counts(const MomentQuery& q) {
  CountTable c;
  c.rows = q.rows;
  c.cols = q.cols;
  c.slice = q.slice;
  c.counts.assign(q.slice.size(), std::vector<std::int64_t>(q.rows.size() * q.cols.size(), 0));
  return c;
}

} // namespace

void CountTable::merge(const CountTable& other) {
  if (other.counts.size() != counts.size() || other.rows.size() != rows.size() ||
      other.cols.size() != cols.size())
    throw UsageError("cannot merge count tables over different spaces");
  for (std::size_t s = 0; s < counts.size(); ++s)
    for (std::size_t j = 0; j < counts[s].size(); ++j) counts[s][j] += other.counts[s][j];
  n += other.n;
}

MomentTable CountTable::normalize() const {
  MomentTable t;
  t.rows = rows;
  t.cols = cols;
  t.slice = slice;
  t.provenance.kind = MomentProvenance::Kind::estimated;
  t.provenance.n = static_cast<double>(n);
  const auto nr = static_cast<Eigen::Index>(rows.size()), nc = static_cast<Eigen::Index>(cols.size());
  for (const auto& c : counts) {
    Matrix m(nr, nc);
    for (Eigen::Index r = 0; r < nr; ++r)
      for (Eigen::Index j = 0; j < nc; ++j)
        m(r, j) = n > 0 ? static_cast<double>(c[static_cast<std::size_t>(r * nc + j)]) / static_cast<double>(n) : 0.0;
    t.entries.push_back(std::move(m));
  }
  return t;
}

CountTable count_events(const TrajectoryBatch& batch, const MomentQuery& query) {
  if (batch.weighted()) throw UsageError("count tables need an unweighted (sampled) batch");
  check_fields_in_horizon(query.rows, batch.horizon());
  check_fields_in_horizon(query.cols, batch.horizon());
  check_fields_in_horizon(query.slice, batch.horizon());
  CountTable c = empty_counts(query);
  const std::size_t nc = query.cols.size();
  for (std::size_t k = 0; k < batch.size(); ++k) {
    std::size_t s = query.slice.atom(batch, k);
    c.counts[s][query.rows.atom(batch, k) * nc + query.cols.atom(batch, k)] += 1;
  }
  c.n = static_cast<std::int64_t>(batch.size());
  return c;
}

MomentTable tabulate(const TrajectoryBatch& batch, const MomentQuery& query) {
  if (!batch.weighted()) {
    MomentTable t = count_events(batch, query).normalize();
    t.provenance.seed = batch.provenance.seed;
    return t;
  }
  check_fields_in_horizon(query.rows, batch.horizon());
  check_fields_in_horizon(query.cols, batch.horizon());
  check_fields_in_horizon(query.slice, batch.horizon());
  MomentTable t;
  t.rows = query.rows;
  t.cols = query.cols;
  t.slice = query.slice;
  const auto nr = static_cast<Eigen::Index>(query.rows.size());
  const auto nc = static_cast<Eigen::Index>(query.cols.size());
  t.entries.assign(query.slice.size(), Matrix::Zero(nr, nc));
  for (std::size_t k = 0; k < batch.size(); ++k) {
    t.entries[query.slice.atom(batch, k)](static_cast<Eigen::Index>(query.rows.atom(batch, k)),
                                          static_cast<Eigen::Index>(query.cols.atom(batch, k))) +=
        batch.weight(k);
  }
  const double total = batch.total_weight();
  for (auto& m : t.entries) m /= total;
  t.provenance.kind = batch.provenance.kind == BatchProvenance::Kind::exact
                          ? MomentProvenance::Kind::exact
                          : MomentProvenance::Kind::estimated;
  t.provenance.n = total;
  return t;
}

MomentTable estimate_moment(const TrajectoryBatch& batch, const MomentQuery& query) {
  if (query.rows.has_latent() || query.cols.has_latent() || query.slice.has_latent())
    throw UsageError("latent events are not observable; use the exact oracle for latent tables");
  return tabulate(batch, query);
}

MomentTable exact_behavior_moment(const PomdpSpec& spec, const BehaviorPolicy& behavior,
                                  const MomentQuery& query, std::size_t budget) {
  EnumerationOptions o;
  o.budget = budget;
  o.keep_latent.assign(static_cast<std::size_t>(spec.horizon + 1), false);
  for (const EventSpace* s : {&query.rows, &query.cols, &query.slice})
    for (const auto& f : s->fields())
      if (f.kind == FieldKind::latent && f.t >= 0 && f.t <= spec.horizon)
        o.keep_latent[static_cast<std::size_t>(f.t)] = true;
  return tabulate(enumerate_behavior(spec, behavior, o), query);
}

MomentTable to_conditional(const MomentTable& table, const std::optional<std::vector<Vector>>& divisor) {
  MomentTable out = table;
  out.conditional = true;
  out.zero_mass.assign(table.entries.size(), std::vector<bool>(table.cols.size(), false));
  for (std::size_t s = 0; s < table.entries.size(); ++s) {
    Matrix& m = out.entries[s];
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      double mass;
      if (divisor) {
        const Vector& d = divisor->size() == 1 ? divisor->front() : divisor->at(s);
        mass = d(c);
      } else {
        mass = m.col(c).sum();
      }
      if (mass == 0.0) {
        m.col(c).setZero();
        out.zero_mass[s][static_cast<std::size_t>(c)] = true;
      } else {
        m.col(c) /= mass;
      }
    }
  }
  return out;
}

Matrix bordered(double corner, const RowVector& top, const Vector& left, const Matrix& interior) {
  const Eigen::Index nr = interior.rows(), nc = interior.cols();
  Matrix out(nr, nc);
  out(0, 0) = corner;
  out.block(0, 1, 1, nc - 1) = top.head(nc - 1);
  out.block(1, 0, nr - 1, 1) = left.head(nr - 1);
  out.block(1, 1, nr - 1, nc - 1) = interior.topLeftCorner(nr - 1, nc - 1);
  return out;
}

namespace {

Matrix bordered_joint(double corner, const Matrix& j) {
  return bordered(corner, j.colwise().sum(), j.rowwise().sum(), j);
}

} // namespace

AugmentedPair augmented_future(const TrajectoryBatch& batch, const PomdpSpec& spec, int step,
                               int action, const EventSpace& history, const EventSpace& future) {
  const int R = spec.n_rewards();
  EventSpace slice(EventKind::composite, {act_field(spec, step), rew_field(spec, step)});
  MomentTable t = estimate_moment(batch, {history, future, slice});
  double pa = 0.0;
  for (int r = 0; r < R; ++r) pa += t.at(static_cast<std::size_t>(action * R + r)).sum();
  if (pa <= 0.0)
    throw RareEventError("event a_" + std::to_string(step) + "=" + std::to_string(action) +
                         " has zero mass");
  AugmentedPair out;
  Matrix joint = Matrix::Zero(t.at(0).rows(), t.at(0).cols());
  for (int r = 0; r < R; ++r) {
    Matrix jr = t.at(static_cast<std::size_t>(action * R + r)) / pa;
    joint += jr;
    out.slice_mass.push_back(jr.sum());
    out.Q.push_back(bordered_joint(jr.sum(), jr));
  }
  out.P = bordered_joint(1.0, joint);
  return out;
}

AugmentedPair augmented_action(const TrajectoryBatch& batch, const PomdpSpec& spec, int step,
                               int obs) {
  const int Z = spec.n_obs;
  EventSpace slice(EventKind::composite, {obs_field(spec, step), obs_field(spec, step + 1)});
  EventSpace cols(EventKind::action, {act_field(spec, step)});
  MomentTable t = estimate_moment(batch, {previous_observation(spec, step), cols, slice});
  double pz = 0.0;
  for (int zn = 0; zn < Z; ++zn) pz += t.at(static_cast<std::size_t>(obs * Z + zn)).sum();
  if (pz <= 0.0)
    throw RareEventError("event z_" + std::to_string(step) + "=" + std::to_string(obs) +
                         " has zero mass");
  AugmentedPair out;
  Matrix joint = Matrix::Zero(t.at(0).rows(), t.at(0).cols());
  for (int zn = 0; zn < Z; ++zn) {
    Matrix j = t.at(static_cast<std::size_t>(obs * Z + zn)) / pz;
    joint += j;
    out.slice_mass.push_back(j.sum());
    out.Q.push_back(bordered_joint(j.sum(), j));
  }
  out.P = bordered_joint(1.0, joint);
  return out;
}

AugmentedPair augmented_reward(const TrajectoryBatch& batch, const PomdpSpec& spec, int step,
                               int action, int obs) {
  const int Z = spec.n_obs, A = spec.n_actions;
  EventSpace slice(EventKind::composite,
                   {act_field(spec, step), obs_field(spec, step), obs_field(spec, step + 1)});
  EventSpace cols(EventKind::reward, {rew_field(spec, step)});
  MomentTable t = estimate_moment(batch, {previous_observation(spec, step), cols, slice});
  auto at = [&](int a, int zn) -> const Matrix& {
    return t.at(static_cast<std::size_t>((a * Z + obs) * Z + zn));
  };
  double pz = 0.0, paz = 0.0;
  for (int a = 0; a < A; ++a)
    for (int zn = 0; zn < Z; ++zn) {
      pz += at(a, zn).sum();
      if (a == action) paz += at(a, zn).sum();
    }
  if (pz <= 0.0 || paz <= 0.0)
    throw RareEventError("event (a_" + std::to_string(step) + "=" + std::to_string(action) +
                         ", z_" + std::to_string(step) + "=" + std::to_string(obs) +
                         ") has zero mass");
  AugmentedPair out;
  RowVector top_all = RowVector::Zero(t.at(0).cols());
  Matrix joint = Matrix::Zero(t.at(0).rows(), t.at(0).cols());
  for (int zn = 0; zn < Z; ++zn) {
    RowVector top = RowVector::Zero(t.at(0).cols());
    double corner = 0.0;
    for (int a = 0; a < A; ++a) {
      top += at(a, zn).colwise().sum() / pz;
      corner += at(a, zn).sum() / pz;
    }
    top_all += top;
    Matrix j = at(action, zn) / pz;
    joint += j;
    out.slice_mass.push_back(corner);
    out.Q.push_back(bordered(corner, top, j.rowwise().sum(), j));
  }
  out.P = bordered(1.0, top_all, joint.rowwise().sum(), joint);
  return out;
}

AugmentedPair assemble_augmented_pair(const TrajectoryBatch& batch, const PomdpSpec& spec,
                                      AugmentedFamily family, const AugmentedIndices& idx) {
  switch (family) {
  case AugmentedFamily::future_reward:
    if (!idx.history || !idx.future) throw UsageError("family tau needs history and future spaces");
    return augmented_future(batch, spec, idx.step, idx.action, *idx.history, *idx.future);
  case AugmentedFamily::action: return augmented_action(batch, spec, idx.step, idx.obs);
  case AugmentedFamily::reward: return augmented_reward(batch, spec, idx.step, idx.action, idx.obs);
  }
  throw UsageError("unknown augmented family");
}

std::string format_table(const MomentTable& table) {
  std::ostringstream os;
  os.precision(10);
  for (std::size_t s = 0; s < table.entries.size(); ++s) {
    os << "slice " << table.slice.atom_name(s) << "\n\t";
    for (std::size_t c = 0; c < table.cols.size(); ++c) os << table.cols.atom_name(c) << "\t";
    os << "\n";
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      os << table.rows.atom_name(r) << "\t";
      for (std::size_t c = 0; c < table.cols.size(); ++c)
        os << table.entries[s](static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) << "\t";
      os << "\n";
    }
  }
  return os.str();
}

} // namespace pope
