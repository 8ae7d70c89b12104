#include <fstream>

#include "aes/train.hpp"

namespace aes {

namespace {

constexpr int kCheckpointVersion = 1;

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw Error("checkpoint: tensor size mismatch");
  return Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
}

}  // namespace

nlohmann::json model_to_json(const Model& model) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : model.layers) {
    nlohmann::json jl = {{"name", l.name},
                         {"frozen", l.frozen},
                         {"weight", matrix_to_json(l.weight)},
                         {"bias", matrix_to_json(l.bias)}};
    if (l.adapter)
      jl["adapter"] = {{"rank", l.adapter->rank},
                       {"alpha", l.adapter->alpha},
                       {"dropout", l.adapter->dropout},
                       {"a", matrix_to_json(l.adapter->a)},
                       {"b", matrix_to_json(l.adapter->b)}};
    layers.push_back(std::move(jl));
  }
  return {{"format", "aes-model"},
          {"version", kCheckpointVersion},
          {"config",
           {{"input_dim", model.config.input_dim},
            {"trunk_dim", model.config.trunk_dim},
            {"head_dim", model.config.head_dim},
            {"dropout", model.config.dropout},
            {"traits", model.config.traits}}},
          {"trained", model.trained},
          {"scaler", {{"mean", matrix_to_json(model.scaler.mean)}, {"scale", matrix_to_json(model.scaler.scale)}}},
          {"layers", layers}};
}

Model model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "aes-model") throw Error("checkpoint: not a model file");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw Error("checkpoint: unsupported version " + j.at("version").dump());
    Model m;
    const auto& c = j.at("config");
    m.config.input_dim = c.at("input_dim").get<std::size_t>();
    m.config.trunk_dim = c.at("trunk_dim").get<std::size_t>();
    m.config.head_dim = c.at("head_dim").get<std::size_t>();
    m.config.dropout = c.at("dropout").get<double>();
    m.config.traits = c.at("traits").get<std::vector<std::string>>();
    m.trained = j.at("trained").get<bool>();
    m.scaler.mean = matrix_from_json(j.at("scaler").at("mean"));
    m.scaler.scale = matrix_from_json(j.at("scaler").at("scale"));
    for (const auto& jl : j.at("layers")) {
      DenseLayer<double> l;
      l.name = jl.at("name").get<std::string>();
      l.frozen = jl.at("frozen").get<bool>();
      l.weight = matrix_from_json(jl.at("weight"));
      l.bias = matrix_from_json(jl.at("bias"));
      if (jl.contains("adapter")) {
        const auto& ja = jl.at("adapter");
        LowRankAdapter<double> ad;
        ad.rank = ja.at("rank").get<int>();
        ad.alpha = ja.at("alpha").get<double>();
        ad.dropout = ja.at("dropout").get<double>();
        ad.a = matrix_from_json(ja.at("a"));
        ad.b = matrix_from_json(ja.at("b"));
        l.adapter = std::move(ad);
      }
      m.layers.push_back(std::move(l));
    }
    if (m.layers.size() != 1 + 2 * m.config.traits.size()) throw Error("checkpoint: layer count mismatch");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const Model& model, const nlohmann::json& extra) {
  nlohmann::json j = model_to_json(model);
  if (!extra.is_null()) j["extra"] = extra;
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump() << '\n';
}

Model load_model(const std::filesystem::path& path, nlohmann::json* extra) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint " + path.string() + ": " + e.what());
  }
  if (extra) *extra = j.value("extra", nlohmann::json{});
  return model_from_json(j);
}

}  // namespace aes
