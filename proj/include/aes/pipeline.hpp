#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aes/adapt.hpp"
#include "aes/calibrate.hpp"
#include "aes/corpus.hpp"
#include "aes/encoder.hpp"
#include "aes/metrics.hpp"
#include "aes/selftrain.hpp"
#include "aes/train.hpp"

namespace aes {

enum class TrainingMode { stl, mtl };
enum class Strategy { single, five_runs, ensemble };

/// Stage switches in execution order: base -> lora -> sa -> ust -> sa (again).
struct StageFlags {
  bool lora = false;
  bool sa = false;
  bool ust = false;
  bool sa_after_ust = false;
  bool lora_after_ust = false;

  /// Parses "lora,sa,ust,sa": a second "sa" after "ust" means sa_after_ust.
  static StageFlags parse(const std::string& list);
  std::string to_string() const;
};

struct RunConfig {
  std::filesystem::path schema_path;
  std::filesystem::path corpus_path;
  TrainingMode mode = TrainingMode::stl;
  SplitPolicy policy = SplitPolicy::full;
  int k = 32;
  std::vector<std::uint64_t> seeds;
  StageFlags stages;
  Strategy strategy = Strategy::single;
  int ensemble_size = 4;
  int five_runs_count = 5;

  double alpha_overall = 0.7;
  double alpha_trait = 1.0;
  ModelConfig model;
  TrainConfig train;
  nlohmann::json encoder = {{"type", "reference"}, {"hashed_dim", 2048}, {"stats_dim", 16}};
  AdapterConfig adapter;

  double sa_p = 5.0;
  SubsetMode sa_mode = SubsetMode::independent;
  int mc_passes = 10;
  int n_bins = 8;
  int per_bin = 32;
  std::string binning_trait = kOverall;
  bool uncertainty_diagnostic = true;
  int diagnostic_k = 256;

  /// Rejects inconsistent stage flags and empty seed lists.
  void validate() const;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  /// FNV-1a over the canonical JSON of every field that affects results (paths excluded).
  std::string hash() const;
};

/// Everything one training unit (one prompt in STL, all prompts in MTL) needs.
struct UnitData {
  std::vector<std::string> prompts;
  ScoreScale scale;
  std::vector<FeatureBlock> blocks;
  TrainingSet train;
  TrainingSet dev;
  TrainingSet test;
  TrainingSet unlabeled;  // targets and mask zeroed
};

/// Builds per-unit data from a split. `features` holds one encoded column per corpus essay.
std::vector<UnitData> build_units(const RunConfig& config, const ScoreSchema& schema, const Corpus& corpus,
                                  const Eigen::MatrixXd& features, const std::vector<FeatureBlock>& blocks,
                                  const DatasetSplit& split);

struct StrategyResult {
  ModelBundle bundle;
  nlohmann::json selection;  // dev-only selection log
};

StrategyResult train_single(const UnitData& unit, const TrainingSet& train, const RunConfig& config,
                            std::uint64_t seed);
/// Trains one model per seed and keeps the best dev mean QWK (first wins ties).
StrategyResult train_best_of(const UnitData& unit, const TrainingSet& train, const RunConfig& config,
                             const std::vector<std::uint64_t>& seeds);
/// One model per seed on a bootstrap resample of `train`; outputs averaged.
StrategyResult train_bagged(const UnitData& unit, const TrainingSet& train, const RunConfig& config,
                            const std::vector<std::uint64_t>& seeds);
/// Dispatches on config.strategy, deriving member seeds from `seed`.
StrategyResult train_strategy(const UnitData& unit, const TrainingSet& train, const RunConfig& config,
                              std::uint64_t seed);

/// Aligns every (prompt, trait) cell of `target_pred` using dev gold vs dev predictions.
Eigen::MatrixXd align_predictions(const UnitData& unit, const Eigen::MatrixXd& dev_pred,
                                  const TrainingSet& target, const Eigen::MatrixXd& target_pred,
                                  const RunConfig& config, nlohmann::json* audit);

struct UstOutcome {
  ModelBundle bundle;
  TrainingSet pseudo;
  nlohmann::json provenance;
};

/// Uncertainty estimation on the unlabeled pool, optional alignment of the MC means,
/// balanced selection per prompt, and one retraining of a fresh model (bundle).
UstOutcome run_ust(const UnitData& unit, const ModelBundle& model, bool align_first, const RunConfig& config,
                   std::uint64_t seed);

/// Two-stage adapter sweep per member; members keep their base weights when no target beats them.
ModelBundle run_lora(const UnitData& unit, const ModelBundle& model, const RunConfig& config, std::uint64_t seed,
                     nlohmann::json* log);

struct RunReport {
  std::string kind = "run";  // "run" or "ablation"
  std::string config_hash;
  nlohmann::json config;
  std::vector<std::string> rows;               // stage or ablation row names, in order
  std::map<std::string, QwkReport> aggregate;  // row -> mean/SD over seeds
  std::vector<std::uint64_t> seeds;
  std::vector<std::map<std::string, QwkReport>> per_seed;  // parallel to seeds
  std::vector<nlohmann::json> provenance;                  // parallel to seeds

  nlohmann::json to_json() const;
};

/// Stage-by-stage pipeline for every seed; rows are the stages that ran.
RunReport run(const RunConfig& config, const ScoreSchema& schema, const Corpus& corpus);
RunReport run(const RunConfig& config);

RunReport five_runs(RunConfig config, const ScoreSchema& schema, const Corpus& corpus);
RunReport ensemble(RunConfig config, const ScoreSchema& schema, const Corpus& corpus);

/// Ablation rows from one shared base per seed: base, +LoRA, +SA, +UST, +LoRA+SA+UST.
RunReport ablation(const RunConfig& config, const ScoreSchema& schema, const Corpus& corpus);

/// Worker-pool size: AES_WORKERS if set and positive, else hardware concurrency.
std::size_t worker_count();

/// Writes the requested formats ("tsv", "json", "txt") of a report dump into `dir`.
std::vector<std::filesystem::path> write_report(const nlohmann::json& report, const std::vector<std::string>& formats,
                                                const std::filesystem::path& dir);
std::string render_tsv(const nlohmann::json& report);
std::string render_tables(const nlohmann::json& report);

}  // namespace aes
