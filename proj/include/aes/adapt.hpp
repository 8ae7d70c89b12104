#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aes/train.hpp"

namespace aes {

struct AdapterConfig {
  int rank = 512;
  double alpha = 512.0;
  double dropout = 0.05;
  /// Layer selector: layer names ("trunk", "head:<trait>", "out:<trait>") or the groups
  /// "heads" / "outputs". Empty selects the trunk and every trait head.
  std::vector<std::string> layers;

  nlohmann::json to_json() const;
  static AdapterConfig from_json(const nlohmann::json& j);
};

/// Resolves a selector to layer indices, in layer order. Unknown names are an error.
std::vector<std::size_t> select_layers(const Model& model, const std::vector<std::string>& selector);

/// Adds zero-initialized adapters (B = 0, A ~ N(0, (1/r)^2)) to the selected layers and
/// freezes every base layer. Outputs are unchanged until B moves.
void attach(Model& model, const AdapterConfig& config, std::uint64_t seed);

/// Drops all adapters and unfreezes the base.
void detach(Model& model);

struct AdapterFactors {
  std::string layer;
  int rank = 1;
  double alpha = 1.0;
  double dropout = 0.0;
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;
};

/// Trained adapter factors plus the sweep target that produced them.
struct AdapterState {
  std::vector<AdapterFactors> factors;
  std::string target;
  double dev_qwk = 0.0;

  nlohmann::json to_json() const;
  static AdapterState from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static AdapterState load(const std::filesystem::path& path);
};

AdapterState extract_adapters(const Model& model, std::string target, double dev_qwk);

/// Installs `state` on a base model (replacing any adapters) and freezes the base.
void apply_adapters(Model& model, const AdapterState& state);

/// Sweep targets in order: balance, overall, then every other trait.
std::vector<std::string> sweep_targets(const std::vector<std::string>& traits);

/// Loss-weight schedule for one sweep target.
LossWeights target_weights(const std::vector<std::string>& traits, const std::string& target);

struct SweepEntry {
  std::string target;
  double dev_qwk = 0.0;
  int best_epoch = 0;
  int epochs = 0;
};

struct SweepResult {
  AdapterState best;
  std::vector<SweepEntry> log;
  std::vector<AdapterState> per_target;  // winner of each target's run, in sweep order
  double base_dev_qwk = 0.0;
  bool improves_on_base = false;
};

/// Second fine-tuning stage: for every target, re-initialize adapters on the frozen base, train
/// them under that target's loss weights and keep the best dev-QWK state (earlier target wins ties).
SweepResult two_stage_finetune(const Model& base, const TrainingSet& train, const TrainingSet& dev,
                               const ScoreScale& scale, const AdapterConfig& adapter, const TrainConfig& config);

}  // namespace aes
