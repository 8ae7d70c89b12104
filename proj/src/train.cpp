#include "aes/train.hpp"

#include <cmath>
#include <numeric>

namespace aes {

TrainingSet TrainingSet::subset(const std::vector<std::size_t>& columns) const {
  TrainingSet out;
  const auto n = static_cast<Eigen::Index>(columns.size());
  out.features.resize(features.rows(), n);
  out.targets.resize(targets.rows(), n);
  out.mask.resize(mask.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto c = static_cast<Eigen::Index>(columns[static_cast<std::size_t>(j)]);
    out.features.col(j) = features.col(c);
    out.targets.col(j) = targets.col(c);
    out.mask.col(j) = mask.col(c);
    out.ids.push_back(ids[static_cast<std::size_t>(c)]);
    out.group.push_back(group[static_cast<std::size_t>(c)]);
  }
  return out;
}

TrainingSet TrainingSet::concat(const TrainingSet& a, const TrainingSet& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  if (a.features.rows() != b.features.rows() || a.targets.rows() != b.targets.rows())
    throw Error("cannot concatenate training sets of different shapes");
  TrainingSet out;
  out.ids = a.ids;
  out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
  out.group = a.group;
  out.group.insert(out.group.end(), b.group.begin(), b.group.end());
  out.features.resize(a.features.rows(), a.features.cols() + b.features.cols());
  out.features << a.features, b.features;
  out.targets.resize(a.targets.rows(), a.targets.cols() + b.targets.cols());
  out.targets << a.targets, b.targets;
  out.mask.resize(a.mask.rows(), a.mask.cols() + b.mask.cols());
  out.mask << a.mask, b.mask;
  return out;
}

ScoreScale ScoreScale::from_schema(const ScoreSchema& schema, const std::vector<std::string>& prompts,
                                   const std::vector<std::string>& traits) {
  ScoreScale s;
  s.prompts = prompts;
  s.traits = traits;
  for (const auto& p : prompts) {
    const PromptSchema& ps = schema.prompt(p);
    std::vector<std::optional<ScoreRange>> row;
    for (const auto& t : traits) {
      const auto idx = ps.trait_index(t);
      row.push_back(idx ? std::optional<ScoreRange>(ps.ranges[*idx]) : std::nullopt);
    }
    s.ranges.push_back(std::move(row));
  }
  return s;
}

QwkReport evaluate_qwk(const Eigen::MatrixXd& predictions, const TrainingSet& data, const ScoreScale& scale) {
  QwkReport report;
  for (std::size_t g = 0; g < scale.prompts.size(); ++g) {
    for (std::size_t t = 0; t < scale.traits.size(); ++t) {
      const auto& range = scale.ranges[g][t];
      if (!range) continue;
      std::vector<int> gold, pred;
      for (std::size_t i = 0; i < data.size(); ++i) {
        const auto c = static_cast<Eigen::Index>(i);
        const auto r = static_cast<Eigen::Index>(t);
        if (data.group[i] != g || data.mask(r, c) == 0.0) continue;
        gold.push_back(denorm_round(data.targets(r, c), *range));
        pred.push_back(denorm_round(predictions(r, c), *range));
      }
      if (gold.empty()) continue;
      report.kappa[{scale.prompts[g], scale.traits[t]}] = qwk(gold, pred, *range);
      report.sd[{scale.prompts[g], scale.traits[t]}] = 0.0;
    }
  }
  return report;
}

double mean_qwk(const Eigen::MatrixXd& predictions, const TrainingSet& data, const ScoreScale& scale) {
  return evaluate_qwk(predictions, data, scale).grand_average();
}

Eigen::MatrixXd predict(const Model& model, const Eigen::MatrixXd& features) {
  return forward(model, features, false, nullptr);
}

Eigen::MatrixXd ModelBundle::predict(const Eigen::MatrixXd& features) const {
  if (members.empty()) throw Error("empty model bundle");
  Eigen::MatrixXd sum = aes::predict(members.front(), features);
  for (std::size_t i = 1; i < members.size(); ++i) sum += aes::predict(members[i], features);
  return members.size() == 1 ? sum : Eigen::MatrixXd(sum / double(members.size()));
}

Eigen::MatrixXd ModelBundle::stochastic(const Eigen::MatrixXd& features, Rng& rng) const {
  if (members.empty()) throw Error("empty model bundle");
  Eigen::MatrixXd sum = forward(members.front(), features, true, &rng);
  for (std::size_t i = 1; i < members.size(); ++i) sum += forward(members[i], features, true, &rng);
  return members.size() == 1 ? sum : Eigen::MatrixXd(sum / double(members.size()));
}

double loss(const std::vector<std::string>& traits, const Eigen::MatrixXd& predictions,
            const Eigen::MatrixXd& targets, const Eigen::MatrixXd& mask, const LossWeights& weights) {
  if (static_cast<Eigen::Index>(traits.size()) != predictions.rows())
    throw Error("loss: trait list does not match prediction rows");
  return weighted_mse(predictions, targets, mask, weights.per_trait(traits));
}

void AdamW::update(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad, Moments& mom) {
  if (mom.m.size() == 0) {
    mom.m = Eigen::MatrixXd::Zero(grad.rows(), grad.cols());
    mom.v = Eigen::MatrixXd::Zero(grad.rows(), grad.cols());
  }
  const double c1 = 1.0 - std::pow(config_.beta1, double(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, double(steps_));
  mom.m = config_.beta1 * mom.m + (1.0 - config_.beta1) * grad;
  mom.v = config_.beta2 * mom.v + (1.0 - config_.beta2) * grad.cwiseProduct(grad);
  param *= 1.0 - config_.lr * config_.weight_decay;
  param.array() -= config_.lr * (mom.m.array() / c1) / ((mom.v.array() / c2).sqrt() + config_.eps);
}

void AdamW::step(Model& model, const Gradients<double>& grads) {
  if (grads.size() != model.layers.size()) throw Error("optimizer: gradient/layer count mismatch");
  if (state_.size() != model.layers.size()) state_.assign(model.layers.size(), std::vector<Moments>(4));
  ++steps_;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto& layer = model.layers[i];
    auto& st = state_[i];
    if (!layer.frozen) {
      update(layer.weight, grads[i].weight, st[0]);
      Eigen::MatrixXd bias = layer.bias;
      update(bias, grads[i].bias, st[1]);
      layer.bias = bias;
    }
    if (layer.adapter) {
      update(layer.adapter->a, grads[i].a, st[2]);
      update(layer.adapter->b, grads[i].b, st[3]);
    }
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", optimizer.lr},
          {"beta1", optimizer.beta1},
          {"beta2", optimizer.beta2},
          {"eps", optimizer.eps},
          {"weight_decay", optimizer.weight_decay},
          {"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.optimizer.lr = j.value("lr", c.optimizer.lr);
  c.optimizer.beta1 = j.value("beta1", c.optimizer.beta1);
  c.optimizer.beta2 = j.value("beta2", c.optimizer.beta2);
  c.optimizer.eps = j.value("eps", c.optimizer.eps);
  c.optimizer.weight_decay = j.value("weight_decay", c.optimizer.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  return c;
}

TrainResult train(Model& model, const TrainingSet& train_set, const TrainingSet& dev, const ScoreScale& scale,
                  const LossWeights& weights, const TrainConfig& config) {
  if (train_set.size() == 0) throw Error("train: empty training set");
  if (dev.size() == 0) throw Error("train: empty dev set");
  if (config.batch_size == 0) throw Error("train: batch size must be positive");
  const std::vector<double> trait_weight = weights.per_trait(model.config.traits);

  Rng order_rng(derive_seed(config.seed, 1));
  Rng dropout_rng(derive_seed(config.seed, 2));
  AdamW optimizer(config.optimizer);

  TrainResult result;
  std::vector<DenseLayer<double>> best_layers = model.layers;
  bool have_best = false;
  int since_best = 0;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Gradients<double> grads;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const TrainingSet batch =
          train_set.subset(std::vector<std::size_t>(order.begin() + long(start), order.begin() + long(end)));
      const double batch_loss = gradients(model, batch.features, batch.targets, batch.mask, trait_weight, true,
                                          &dropout_rng, grads);
      if (!std::isfinite(batch_loss))
        throw Error("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(batches + 1));
      optimizer.step(model, grads);
      loss_sum += batch_loss;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / batches;
    const Eigen::MatrixXd dev_pred = predict(model, dev.features);
    rec.dev_loss = weighted_mse(dev_pred, dev.targets, dev.mask, trait_weight);
    rec.dev_qwk = mean_qwk(dev_pred, dev, scale);
    if (!have_best || rec.dev_qwk > result.best_dev_qwk) {
      have_best = true;
      rec.improved = true;
      result.best_dev_qwk = rec.dev_qwk;
      result.best_epoch = epoch;
      best_layers = model.layers;
      since_best = 0;
    } else {
      ++since_best;
    }
    result.log.push_back(rec);
    if (!rec.improved && since_best >= config.patience) break;
  }
  model.layers = std::move(best_layers);
  model.trained = true;
  return result;
}

Model make_model(const ModelConfig& config, const TrainingSet& train_set, const std::vector<FeatureBlock>& blocks,
                 std::uint64_t seed) {
  ModelConfig c = config;
  c.input_dim = static_cast<std::size_t>(train_set.features.rows());
  Model m = Model::create(c, seed);
  m.scaler = FeatureScaler<double>::fit(train_set.features, blocks);
  return m;
}

}  // namespace aes
