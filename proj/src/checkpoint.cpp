#include "vflkit/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace vflkit {

using nlohmann::json;

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j) {
  std::vector<std::vector<double>> rows;
  for (const auto& r : j) rows.push_back(r.get<std::vector<double>>());
  return make_matrix(rows);
}

json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from_json(const json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Vector>(v.data(), v.size());
}

json layer_to_json(const Layer& layer) {
  json j = {{"kind", to_string(layer.kind)}, {"in", layer.in_dim}, {"out", layer.out_dim}};
  if (layer.has_params()) {
    j["weights"] = matrix_to_json(layer.weights);
    j["bias"] = vector_to_json(layer.bias);
  }
  return j;
}

Layer layer_from_json(const json& j) {
  LayerKind kind = layer_kind_from_string(j.at("kind").get<std::string>());
  int in = j.at("in").get<int>();
  int out = j.at("out").get<int>();
  if (kind != LayerKind::linear) {
    if (in != out) throw std::invalid_argument("checkpoint: activation layer must be square");
    return Layer::activation(kind, in);
  }
  Matrix w = matrix_from_json(j.at("weights"));
  if (w.size() == 0) w.resize(out, in);
  Layer l = Layer::linear(std::move(w), vector_from_json(j.at("bias")));
  if (l.in_dim != in || l.out_dim != out) throw std::invalid_argument("checkpoint: layer shape disagrees with in/out");
  return l;
}

json model_to_json(const LocalModel& model, const std::string& protocol) {
  json layers = json::array();
  for (const auto& l : model.layers()) layers.push_back(layer_to_json(l));
  json j = {{"version", kCheckpointVersion}, {"layers", layers}};
  if (!protocol.empty()) j["protocol"] = protocol;
  return j;
}

LocalModel model_from_json(const json& j) {
  if (j.value("version", 0) != kCheckpointVersion) throw std::invalid_argument("checkpoint: unsupported version");
  std::vector<Layer> layers;
  for (const auto& l : j.at("layers")) layers.push_back(layer_from_json(l));
  return LocalModel(std::move(layers));
}

json system_to_json(const VFLSystem& system) {
  std::string proto = to_string(system.coordinator.kind);
  json parts = json::array();
  for (const auto& p : system.participants) {
    json m = model_to_json(p.model, proto);
    m["id"] = p.id;
    m["columns"] = p.columns;
    parts.push_back(std::move(m));
  }
  return {{"version", kCheckpointVersion},
          {"protocol", proto},
          {"num_classes", system.num_classes},
          {"partition", system.partition()},
          {"participants", parts},
          {"coordinator", model_to_json(system.coordinator.top, proto)}};
}

VFLSystem system_from_json(const json& j) {
  if (j.value("version", 0) != kCheckpointVersion) throw std::invalid_argument("checkpoint: unsupported version");
  VFLSystem sys;
  sys.coordinator.kind = protocol_kind_from_string(j.at("protocol").get<std::string>());
  sys.num_classes = j.at("num_classes").get<int>();
  for (const auto& p : j.at("participants"))
    sys.participants.push_back({p.at("id").get<int>(), p.at("columns").get<std::vector<int>>(), model_from_json(p)});
  sys.coordinator.top = model_from_json(j.at("coordinator"));
  if (j.contains("partition") && j.at("partition").get<PartitionSpec>() != sys.partition())
    throw std::invalid_argument("checkpoint: partition disagrees with participant columns");
  sys.validate();
  return sys;
}

void save_system(const VFLSystem& system, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << system_to_json(system).dump() << "\n";
}

VFLSystem load_system(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return system_from_json(json::parse(in));
}

}  // namespace vflkit
