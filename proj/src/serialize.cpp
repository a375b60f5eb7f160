#include "pope/serialize.hpp"

#include "pope/errors.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace pope {

namespace {

std::size_t ix(int i) { return static_cast<std::size_t>(i); }

const Json& field(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key))
    throw ValidationError(where + ": missing key '" + key + "'");
  return j.at(key);
}

template <class T>
T get_as(const Json& j, const char* key, const std::string& where) {
  try {
    return field(j, key, where).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(where + "." + key + ": " + e.what());
  }
}

std::vector<long> shape_of(const Json& j, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected an array object with shape and data");
  require_keys(j, {"shape", "data"}, where);
  auto shape = get_as<std::vector<long>>(j, "shape", where);
  long n = 1;
  for (long d : shape) {
    if (d < 0) throw ValidationError(where + ": negative dimension");
    n *= d;
  }
  const Json& data = field(j, "data", where);
  if (!data.is_array() || static_cast<long>(data.size()) != n)
    throw ValidationError(where + ": data length does not match shape");
  return shape;
}

double number(const Json& v, const std::string& where) {
  if (!v.is_number()) throw ValidationError(where + ": non-numeric entry");
  return v.get<double>();
}

void write_number(std::ostringstream& os, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  os << buf;
}

bool scalar_array(const Json& j) {
  for (const auto& e : j)
    if (e.is_structured()) return false;
  return true;
}

void write(std::ostringstream& os, const Json& j, int indent) {
  const std::string pad(ix(indent + 2), ' '), close(ix(indent), ' ');
  switch (j.type()) {
  case Json::value_t::object: {
    if (j.empty()) {
      os << "{}";
      return;
    }
    os << "{\n";
    bool first = true;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!first) os << ",\n";
      first = false;
      os << pad << Json(it.key()).dump() << ": ";
      write(os, it.value(), indent + 2);
    }
    os << "\n" << close << "}";
    return;
  }
  case Json::value_t::array: {
    if (scalar_array(j)) {
      os << "[";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) os << ", ";
        write(os, j[i], indent);
      }
      os << "]";
      return;
    }
    os << "[\n";
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (i) os << ",\n";
      os << pad;
      write(os, j[i], indent + 2);
    }
    os << "\n" << close << "]";
    return;
  }
  case Json::value_t::number_float: write_number(os, j.get<double>()); return;
  default: os << j.dump(); return;
  }
}

} // namespace

void require_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ValidationError(where + ": unknown key '" + it.key() + "'");
  }
}

Json matrix_to_json(const Matrix& m) {
  Json data = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return Json{{"shape", {m.rows(), m.cols()}}, {"data", data}};
}

Matrix matrix_from_json(const Json& j, const std::string& where) {
  auto shape = shape_of(j, where);
  if (shape.size() != 2) throw ValidationError(where + ": expected a 2-d array");
  Matrix m(shape[0], shape[1]);
  const Json& data = j.at("data");
  for (long r = 0; r < shape[0]; ++r)
    for (long c = 0; c < shape[1]; ++c) m(r, c) = number(data[ix(static_cast<int>(r * shape[1] + c))], where);
  return m;
}

Json vector_to_json(const Vector& v) {
  Json data = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) data.push_back(v(i));
  return Json{{"shape", {v.size()}}, {"data", data}};
}

Vector vector_from_json(const Json& j, const std::string& where) {
  auto shape = shape_of(j, where);
  if (shape.size() != 1) throw ValidationError(where + ": expected a 1-d array");
  Vector v(shape[0]);
  for (long i = 0; i < shape[0]; ++i) v(i) = number(j.at("data")[ix(static_cast<int>(i))], where);
  return v;
}

Json tensor_to_json(const std::vector<Matrix>& slices) {
  Json data = Json::array();
  long r = slices.empty() ? 0 : slices[0].rows(), c = slices.empty() ? 0 : slices[0].cols();
  for (const auto& m : slices)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index k = 0; k < m.cols(); ++k) data.push_back(m(i, k));
  return Json{{"shape", {static_cast<long>(slices.size()), r, c}}, {"data", data}};
}

std::vector<Matrix> tensor_from_json(const Json& j, const std::string& where) {
  auto shape = shape_of(j, where);
  if (shape.size() != 3) throw ValidationError(where + ": expected a 3-d array");
  std::vector<Matrix> out;
  const Json& data = j.at("data");
  std::size_t p = 0;
  for (long s = 0; s < shape[0]; ++s) {
    Matrix m(shape[1], shape[2]);
    for (long r = 0; r < shape[1]; ++r)
      for (long c = 0; c < shape[2]; ++c) m(r, c) = number(data[p++], where);
    out.push_back(std::move(m));
  }
  return out;
}

Json spec_to_json(const PomdpSpec& s) {
  Json j;
  j["n_states"] = s.n_states;
  j["n_obs"] = s.n_obs;
  j["n_actions"] = s.n_actions;
  j["reward_support"] = s.reward_support;
  j["horizon"] = s.horizon;
  j["transition"] = tensor_to_json(s.transition);
  j["emission"] = matrix_to_json(s.emission);
  if (s.pre_emission) j["pre_emission"] = matrix_to_json(*s.pre_emission);
  j["reward_model"] = tensor_to_json(s.reward_model);
  j["initial"] = vector_to_json(s.initial);
  return j;
}

PomdpSpec spec_from_json(const Json& j) {
  const std::string w = "spec";
  require_keys(j, {"n_states", "n_obs", "n_actions", "reward_support", "horizon", "transition", "emission",
                   "pre_emission", "reward_model", "initial"},
               w);
  PomdpSpec s;
  s.n_states = get_as<int>(j, "n_states", w);
  s.n_obs = get_as<int>(j, "n_obs", w);
  s.n_actions = get_as<int>(j, "n_actions", w);
  s.reward_support = get_as<std::vector<double>>(j, "reward_support", w);
  s.horizon = get_as<int>(j, "horizon", w);
  s.transition = tensor_from_json(field(j, "transition", w), w + ".transition");
  s.emission = matrix_from_json(field(j, "emission", w), w + ".emission");
  if (j.contains("pre_emission")) s.pre_emission = matrix_from_json(j.at("pre_emission"), w + ".pre_emission");
  s.reward_model = tensor_from_json(field(j, "reward_model", w), w + ".reward_model");
  s.initial = vector_from_json(field(j, "initial", w), w + ".initial");
  require_valid(s);
  return s;
}

Json behavior_to_json(const BehaviorPolicy& b) { return Json{{"steps", tensor_to_json(b.steps)}}; }

BehaviorPolicy behavior_from_json(const Json& j) {
  require_keys(j, {"steps"}, "behavior");
  return BehaviorPolicy{tensor_from_json(field(j, "steps", "behavior"), "behavior.steps")};
}

Json evaluation_to_json(const EvaluationPolicy& e) {
  Json j;
  j["n_obs"] = e.n_obs();
  j["n_actions"] = e.n_actions();
  if (e.is_reactive()) {
    j["kind"] = "reactive";
    j["steps"] = tensor_to_json(e.reactive_tables());
  } else {
    j["kind"] = "full_history";
    Json steps = Json::array();
    for (int t = 0; t <= e.horizon(); ++t) steps.push_back(matrix_to_json(e.table(t)));
    j["steps"] = steps;
  }
  return j;
}

EvaluationPolicy evaluation_from_json(const Json& j) {
  const std::string w = "evaluation";
  require_keys(j, {"kind", "n_obs", "n_actions", "steps"}, w);
  auto kind = get_as<std::string>(j, "kind", w);
  int Z = get_as<int>(j, "n_obs", w), A = get_as<int>(j, "n_actions", w);
  if (kind == "reactive") return EvaluationPolicy::reactive(tensor_from_json(field(j, "steps", w), w), Z, A);
  if (kind == "full_history") {
    std::vector<Matrix> steps;
    for (const auto& m : field(j, "steps", w)) steps.push_back(matrix_from_json(m, w + ".steps"));
    return EvaluationPolicy::full_history(std::move(steps), Z, A);
  }
  throw ValidationError(w + ": unknown kind '" + kind + "' (reactive, full_history)");
}

Json batch_to_json(const TrajectoryBatch& b) {
  Json j;
  j["horizon"] = b.horizon();
  j["weighted"] = b.weighted();
  j["provenance"] = {{"kind", b.provenance.kind == BatchProvenance::Kind::exact ? "exact" : "sampled"},
                     {"seed", b.provenance.seed},
                     {"spec_digest", b.provenance.spec_digest}};
  Json data = Json::array();
  for (auto x : b.raw()) data.push_back(static_cast<int>(x));
  j["records"] = Json{{"shape", {static_cast<long>(b.size()), static_cast<long>(b.stride())}}, {"data", data}};
  if (b.weighted()) {
    Json w = Json::array();
    for (std::size_t k = 0; k < b.size(); ++k) w.push_back(b.weight(k));
    j["weights"] = w;
  }
  return j;
}

TrajectoryBatch batch_from_json(const Json& j) {
  const std::string w = "batch";
  require_keys(j, {"horizon", "weighted", "provenance", "records", "weights"}, w);
  int H = get_as<int>(j, "horizon", w);
  bool weighted = get_as<bool>(j, "weighted", w);
  const Json& rec = field(j, "records", w);
  shape_of(rec, w + ".records");
  std::vector<std::uint8_t> data;
  for (const auto& x : rec.at("data")) {
    int v = x.get<int>();
    if (v < 0 || v > 255) throw ValidationError(w + ".records: entry out of range");
    data.push_back(static_cast<std::uint8_t>(v));
  }
  std::vector<double> weights;
  if (j.contains("weights")) weights = get_as<std::vector<double>>(j, "weights", w);
  TrajectoryBatch b = TrajectoryBatch::from_raw(H, weighted, std::move(data), std::move(weights));
  const Json& p = field(j, "provenance", w);
  require_keys(p, {"kind", "seed", "spec_digest"}, w + ".provenance");
  b.provenance.kind = get_as<std::string>(p, "kind", w) == "exact" ? BatchProvenance::Kind::exact
                                                                   : BatchProvenance::Kind::sampled;
  b.provenance.seed = get_as<std::uint64_t>(p, "seed", w);
  b.provenance.spec_digest = get_as<std::string>(p, "spec_digest", w);
  return b;
}

Json latents_to_json(const IdentifiedLatents& id) {
  Json steps = Json::array();
  for (const auto& s : id.steps) {
    steps.push_back({{"policy", matrix_to_json(s.policy)},
                     {"reward", matrix_to_json(s.reward)},
                     {"token",
                      {{"step", s.token.step},
                       {"obs", s.token.obs},
                       {"next_obs", s.token.next_obs},
                       {"eigenvalues", vector_to_json(s.token.eigenvalues)}}},
                     {"eigen_gap", s.eigen_gap},
                     {"condition", s.condition}});
  }
  return Json{{"horizon", id.horizon}, {"n_latent", id.n_latent}, {"steps", steps}};
}

IdentifiedLatents latents_from_json(const Json& j) {
  const std::string w = "latents";
  require_keys(j, {"horizon", "n_latent", "steps"}, w);
  IdentifiedLatents id;
  id.horizon = get_as<int>(j, "horizon", w);
  id.n_latent = get_as<int>(j, "n_latent", w);
  for (const auto& s : field(j, "steps", w)) {
    const std::string ws = w + ".steps";
    require_keys(s, {"policy", "reward", "token", "eigen_gap", "condition"}, ws);
    LatentStep st;
    st.policy = matrix_from_json(field(s, "policy", ws), ws + ".policy");
    st.reward = matrix_from_json(field(s, "reward", ws), ws + ".reward");
    const Json& t = field(s, "token", ws);
    require_keys(t, {"step", "obs", "next_obs", "eigenvalues"}, ws + ".token");
    st.token.step = get_as<int>(t, "step", ws);
    st.token.obs = get_as<int>(t, "obs", ws);
    st.token.next_obs = get_as<int>(t, "next_obs", ws);
    st.token.eigenvalues = vector_from_json(field(t, "eigenvalues", ws), ws + ".token.eigenvalues");
    st.eigen_gap = get_as<double>(s, "eigen_gap", ws);
    st.condition = get_as<double>(s, "condition", ws);
    id.steps.push_back(std::move(st));
  }
  return id;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("SHA-256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

std::string spec_digest(const PomdpSpec& spec) { return sha256_hex(dump_json(spec_to_json(spec))); }

std::string dump_json(const Json& j) {
  std::ostringstream os;
  write(os, j, 0);
  os << "\n";
  return os.str();
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

} // namespace pope
