#pragma once

#include "pope/is.hpp"
#include "pope/pomdp.hpp"
#include "pope/trajectory.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace pope {

using Json = nlohmann::ordered_json;

// Arrays are {"shape": [...], "data": [...]} with row-major data.
Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j, const std::string& where);
Json vector_to_json(const Vector& v);
Vector vector_from_json(const Json& j, const std::string& where);
// Stacked matrices of equal shape, leading axis first.
Json tensor_to_json(const std::vector<Matrix>& slices);
std::vector<Matrix> tensor_from_json(const Json& j, const std::string& where);

Json spec_to_json(const PomdpSpec& spec);
PomdpSpec spec_from_json(const Json& j);
Json behavior_to_json(const BehaviorPolicy& b);
BehaviorPolicy behavior_from_json(const Json& j);
// Reactive policies keep their reactive tables; others are written per history.
Json evaluation_to_json(const EvaluationPolicy& e);
EvaluationPolicy evaluation_from_json(const Json& j);

Json batch_to_json(const TrajectoryBatch& batch);
TrajectoryBatch batch_from_json(const Json& j);

Json latents_to_json(const IdentifiedLatents& id);
IdentifiedLatents latents_from_json(const Json& j);

// Lowercase hex SHA-256 of the canonical spec JSON.
std::string spec_digest(const PomdpSpec& spec);
std::string sha256_hex(const std::string& bytes);

// Doubles carry 17 significant digits.
std::string dump_json(const Json& j);
Json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Throws ValidationError naming the first key outside `allowed`.
void require_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where);

} // namespace pope
