#pragma once

#include <string>

#include "json.hpp"
#include "vflkit/model.hpp"
#include "vflkit/protocol.hpp"

namespace vflkit {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json layer_to_json(const Layer& layer);
Layer layer_from_json(const nlohmann::json& j);

nlohmann::json model_to_json(const LocalModel& model, const std::string& protocol = "");
LocalModel model_from_json(const nlohmann::json& j);

nlohmann::json system_to_json(const VFLSystem& system);
VFLSystem system_from_json(const nlohmann::json& j);

void save_system(const VFLSystem& system, const std::string& path);
VFLSystem load_system(const std::string& path);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j);

}  // namespace vflkit
