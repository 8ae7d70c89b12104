#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "aes/corpus.hpp"
#include "aes/metrics.hpp"
#include "aes/model.hpp"

namespace aes {

/// Encoded samples with normalized targets. Column i of every matrix is sample i.
struct TrainingSet {
  std::vector<std::string> ids;
  std::vector<std::size_t> group;  // prompt index into ScoreScale::prompts
  Eigen::MatrixXd features;        // F x n
  Eigen::MatrixXd targets;         // traits x n, normalized
  Eigen::MatrixXd mask;            // traits x n, 1 where a target exists

  std::size_t size() const { return ids.size(); }
  TrainingSet subset(const std::vector<std::size_t>& columns) const;
  static TrainingSet concat(const TrainingSet& a, const TrainingSet& b);
};

/// Score ranges per (prompt, trait) for turning normalized outputs back into integer scores.
struct ScoreScale {
  std::vector<std::string> prompts;
  std::vector<std::string> traits;                           // model trait order
  std::vector<std::vector<std::optional<ScoreRange>>> ranges;  // [prompt][trait]

  static ScoreScale from_schema(const ScoreSchema& schema, const std::vector<std::string>& prompts,
                                const std::vector<std::string>& traits);
};

/// QWK per (prompt, trait) cell of integer-rounded predictions against integer gold.
QwkReport evaluate_qwk(const Eigen::MatrixXd& predictions, const TrainingSet& data, const ScoreScale& scale);

/// Mean QWK over all cells; the model-selection criterion.
double mean_qwk(const Eigen::MatrixXd& predictions, const TrainingSet& data, const ScoreScale& scale);

/// Deterministic (dropout-off) predictions, traits x n.
Eigen::MatrixXd predict(const Model& model, const Eigen::MatrixXd& features);

/// One model, or several whose continuous outputs are averaged (bagging).
struct ModelBundle {
  std::vector<Model> members;

  Eigen::MatrixXd predict(const Eigen::MatrixXd& features) const;
  /// One stochastic pass: every member runs with dropout active, drawing from `rng` in member order.
  Eigen::MatrixXd stochastic(const Eigen::MatrixXd& features, Rng& rng) const;
  const std::vector<std::string>& traits() const { return members.front().config.traits; }
};

double loss(const std::vector<std::string>& traits, const Eigen::MatrixXd& predictions,
            const Eigen::MatrixXd& targets, const Eigen::MatrixXd& mask, const LossWeights& weights);

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay. Only unfrozen base tensors and adapter factors move.
class AdamW {
 public:
  explicit AdamW(OptimizerConfig config = {}) : config_(config) {}
  void step(Model& model, const Gradients<double>& grads);

 private:
  struct Moments {
    Eigen::MatrixXd m, v;
  };
  void update(Eigen::MatrixXd& param, const Eigen::MatrixXd& grad, Moments& mom);

  OptimizerConfig config_;
  std::vector<std::vector<Moments>> state_;  // per layer: weight, bias, a, b
  long steps_ = 0;
};

struct TrainConfig {
  OptimizerConfig optimizer;
  std::size_t batch_size = 16;
  int max_epochs = 100;
  int patience = 20;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_qwk = 0.0;
  bool improved = false;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  int best_epoch = 0;
  double best_dev_qwk = 0.0;
};

/// Minibatch AdamW on `train`, model selection by dev mean QWK with early stopping.
/// On return `model` holds the parameters of the best dev epoch and is marked trained.
TrainResult train(Model& model, const TrainingSet& train, const TrainingSet& dev, const ScoreScale& scale,
                  const LossWeights& weights, const TrainConfig& config);

/// Fresh model sized for `train`, with its input scaler fitted on the training features.
Model make_model(const ModelConfig& config, const TrainingSet& train, const std::vector<FeatureBlock>& blocks,
                 std::uint64_t seed);

nlohmann::json model_to_json(const Model& model);
Model model_from_json(const nlohmann::json& j);
void save_model(const std::filesystem::path& path, const Model& model, const nlohmann::json& extra = {});
Model load_model(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

}  // namespace aes
