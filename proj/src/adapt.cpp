#include "aes/adapt.hpp"

#include <algorithm>
#include <fstream>

namespace aes {

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Eigen::MatrixXd matrix_from(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw Error("adapter file: tensor size mismatch");
  return Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
}

}  // namespace

nlohmann::json AdapterConfig::to_json() const {
  return {{"rank", rank}, {"alpha", alpha}, {"dropout", dropout}, {"layers", layers}};
}

AdapterConfig AdapterConfig::from_json(const nlohmann::json& j) {
  AdapterConfig c;
  c.rank = j.value("rank", c.rank);
  c.alpha = j.value("alpha", c.alpha);
  c.dropout = j.value("dropout", c.dropout);
  c.layers = j.value("layers", c.layers);
  return c;
}

std::vector<std::size_t> select_layers(const Model& model, const std::vector<std::string>& selector) {
  std::vector<std::size_t> out;
  auto add = [&](std::size_t i) {
    if (std::find(out.begin(), out.end(), i) == out.end()) out.push_back(i);
  };
  const std::size_t n_traits = model.trait_count();
  if (selector.empty()) {
    add(0);
    for (std::size_t t = 0; t < n_traits; ++t) add(model.head_index(t));
  }
  for (const auto& name : selector) {
    if (name == "heads") {
      for (std::size_t t = 0; t < n_traits; ++t) add(model.head_index(t));
    } else if (name == "outputs") {
      for (std::size_t t = 0; t < n_traits; ++t) add(model.out_index(t));
    } else if (const auto idx = model.layer_index(name)) {
      add(*idx);
    } else {
      throw Error("unknown layer selector '" + name + "'");
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

void attach(Model& model, const AdapterConfig& config, std::uint64_t seed) {
  if (config.rank < 1) throw Error("adapter rank must be >= 1");
  const auto selected = select_layers(model, config.layers);
  model.set_frozen(true);
  for (auto& l : model.layers) l.adapter.reset();
  for (std::size_t i : selected) {
    auto& layer = model.layers[i];
    Rng rng(derive_seed(seed, i));
    LowRankAdapter<double> ad;
    ad.rank = config.rank;
    ad.alpha = config.alpha;
    ad.dropout = config.dropout;
    ad.a.resize(config.rank, layer.inputs());
    const double sd = 1.0 / double(config.rank);
    for (Eigen::Index c = 0; c < ad.a.cols(); ++c)
      for (Eigen::Index r = 0; r < ad.a.rows(); ++r) ad.a(r, c) = rng.normal(0.0, sd);
    ad.b = Eigen::MatrixXd::Zero(layer.outputs(), config.rank);
    layer.adapter = std::move(ad);
  }
}

void detach(Model& model) {
  for (auto& l : model.layers) l.adapter.reset();
  model.set_frozen(false);
}

AdapterState extract_adapters(const Model& model, std::string target, double dev_qwk) {
  AdapterState s;
  s.target = std::move(target);
  s.dev_qwk = dev_qwk;
  for (const auto& l : model.layers) {
    if (!l.adapter) continue;
    s.factors.push_back({l.name, l.adapter->rank, l.adapter->alpha, l.adapter->dropout, l.adapter->a, l.adapter->b});
  }
  return s;
}

void apply_adapters(Model& model, const AdapterState& state) {
  model.set_frozen(true);
  for (auto& l : model.layers) l.adapter.reset();
  for (const auto& f : state.factors) {
    const auto idx = model.layer_index(f.layer);
    if (!idx) throw Error("adapter state names unknown layer " + f.layer);
    auto& layer = model.layers[*idx];
    if (f.a.cols() != layer.inputs() || f.b.rows() != layer.outputs() || f.a.rows() != f.rank ||
        f.b.cols() != f.rank)
      throw Error("adapter state does not fit layer " + f.layer);
    layer.adapter = LowRankAdapter<double>{f.a, f.b, f.rank, f.alpha, f.dropout};
  }
}

nlohmann::json AdapterState::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& f : factors)
    layers.push_back({{"layer", f.layer},
                      {"rank", f.rank},
                      {"alpha", f.alpha},
                      {"dropout", f.dropout},
                      {"a", matrix_json(f.a)},
                      {"b", matrix_json(f.b)}});
  return {{"format", "aes-adapter"}, {"version", 1}, {"target", target}, {"dev_qwk", dev_qwk}, {"layers", layers}};
}

AdapterState AdapterState::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "aes-adapter") throw Error("not an adapter file");
    AdapterState s;
    s.target = j.at("target").get<std::string>();
    s.dev_qwk = j.at("dev_qwk").get<double>();
    for (const auto& jl : j.at("layers"))
      s.factors.push_back({jl.at("layer").get<std::string>(), jl.at("rank").get<int>(), jl.at("alpha").get<double>(),
                           jl.at("dropout").get<double>(), matrix_from(jl.at("a")), matrix_from(jl.at("b"))});
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("adapter file: ") + e.what());
  }
}

void AdapterState::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json().dump() << '\n';
}

AdapterState AdapterState::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open adapter file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("adapter file " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::vector<std::string> sweep_targets(const std::vector<std::string>& traits) {
  std::vector<std::string> out{"balance", kOverall};
  for (const auto& t : traits)
    if (t != kOverall) out.push_back(t);
  return out;
}

LossWeights target_weights(const std::vector<std::string>& traits, const std::string& target) {
  if (target == "balance") return LossWeights::uniform(traits, 0.7, 1.0);
  if (target == kOverall) return LossWeights::uniform(traits, 0.9, 0.1);
  if (std::find(traits.begin(), traits.end(), target) == traits.end())
    throw Error("unknown sweep target " + target);
  LossWeights w = LossWeights::uniform(traits, 0.1, 0.1);
  w.alpha[target] = 1.0;
  return w;
}

SweepResult two_stage_finetune(const Model& base, const TrainingSet& train_set, const TrainingSet& dev,
                               const ScoreScale& scale, const AdapterConfig& adapter, const TrainConfig& config) {
  if (!base.trained) throw Error("two-stage fine-tuning needs a trained stage-1 model");
  if (base.has_adapters()) throw Error("two-stage fine-tuning expects a base model without adapters");

  SweepResult result;
  result.base_dev_qwk = mean_qwk(predict(base, dev.features), dev, scale);
  const auto targets = sweep_targets(base.config.traits);
  bool have_best = false;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    Model m = base;
    attach(m, adapter, derive_seed(config.seed, 0x5eed0000 + i));
    TrainConfig tc = config;
    tc.seed = derive_seed(config.seed, 0x7a40000 + i);
    const TrainResult tr = train(m, train_set, dev, scale, target_weights(base.config.traits, targets[i]), tc);
    const double dev_qwk = tr.best_dev_qwk;
    result.log.push_back({targets[i], dev_qwk, tr.best_epoch, static_cast<int>(tr.log.size())});
    result.per_target.push_back(extract_adapters(m, targets[i], dev_qwk));
    if (!have_best || dev_qwk > result.best.dev_qwk) {
      have_best = true;
      result.best = result.per_target.back();
    }
  }
  result.improves_on_base = result.best.dev_qwk > result.base_dev_qwk;
  return result;
}

}  // namespace aes
