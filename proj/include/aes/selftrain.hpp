#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "aes/train.hpp"

namespace aes {

/// MC-dropout summary for one essay.
struct UncertaintyRecord {
  std::string essay_id;
  Eigen::VectorXd mean;  // per trait, over T stochastic passes
  Eigen::VectorXd sd;    // per trait, population SD (divisor T)
  double uncertainty = 0.0;  // mean of `sd` across traits
  int passes = 0;
};

/// Mean and population SD of each row of a traits x T pass matrix.
void summarize_passes(const Eigen::MatrixXd& passes, Eigen::VectorXd& mean, Eigen::VectorXd& sd);

/// T dropout-active passes per essay; essay i draws from its own stream derive_seed(seed, i).
std::vector<UncertaintyRecord> estimate_uncertainty(const ModelBundle& model, const Eigen::MatrixXd& features,
                                                    const std::vector<std::string>& ids, int passes,
                                                    std::uint64_t seed);

struct PseudoLabeledSet {
  std::vector<std::string> ids;
  Eigen::MatrixXd scores;  // traits x m, normalized pseudo-labels
  std::vector<int> bins;   // bin of each selected essay
  std::vector<int> bin_sizes;     // candidates per bin
  std::vector<int> bin_selected;  // selected per bin
  int n_bins = 0;
  int per_bin = 0;
  std::size_t binning_trait = 0;
  nlohmann::json provenance;

  std::size_t size() const { return ids.size(); }
};

/// Equal-width bins over the observed range of `binning_trait`'s mean prediction; from each bin the
/// `per_bin` lowest-uncertainty records (ties broken by essay id). Sparse bins give fewer.
PseudoLabeledSet select_balanced(const std::vector<UncertaintyRecord>& records, int n_bins, int per_bin,
                                 std::size_t binning_trait = 0);

/// Bin index of `value` among `n_bins` equal-width bins over [lo, hi]; the top edge is closed.
int equal_width_bin(double value, double lo, double hi, int n_bins);

using BundleTrainer = std::function<ModelBundle(const TrainingSet& train, const TrainingSet& dev, std::uint64_t seed)>;

/// Single-model trainer used by default: fresh init from `seed`, scaler fitted on `train`.
BundleTrainer single_model_trainer(ModelConfig model, std::vector<FeatureBlock> blocks, ScoreScale scale,
                                   LossWeights weights, TrainConfig config);

/// Trains a newly initialized model once on labeled + pseudo-labeled data, early-stopping on dev.
ModelBundle self_train(const TrainingSet& labeled, const TrainingSet& dev, const TrainingSet& pseudo,
                       std::uint64_t seed, const BundleTrainer& trainer);

struct UncertaintyGroups {
  int k = 0;
  double top = 0.0;       // k most uncertain
  double all = 0.0;
  double bottom = 0.0;    // k least uncertain
  double balanced = 0.0;  // select_balanced with k / n_bins per bin
  std::size_t balanced_size = 0;
  bool zero_variance = false;

  nlohmann::json to_json() const;
};

/// Mean-over-traits QWK of deterministic predictions for groups formed by MC-dropout uncertainty.
UncertaintyGroups uncertainty_group_report(const ModelBundle& model, const TrainingSet& eval, const ScoreScale& scale,
                                           int k, int passes, std::uint64_t seed, int n_bins = 8);

}  // namespace aes
