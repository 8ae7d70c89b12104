#include "aes/selftrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace aes {

void summarize_passes(const Eigen::MatrixXd& passes, Eigen::VectorXd& mean, Eigen::VectorXd& sd) {
  const double t = double(passes.cols());
  mean = passes.rowwise().sum() / t;
  sd = ((passes.colwise() - mean).array().square().rowwise().sum() / t).sqrt().matrix();
  // sum / T is inexact for most T; constant rows must report exactly zero spread.
  for (Eigen::Index r = 0; r < passes.rows(); ++r)
    if (passes.row(r).minCoeff() == passes.row(r).maxCoeff()) {
      mean(r) = passes(r, 0);
      sd(r) = 0.0;
    }
}

std::vector<UncertaintyRecord> estimate_uncertainty(const ModelBundle& model, const Eigen::MatrixXd& features,
                                                    const std::vector<std::string>& ids, int passes,
                                                    std::uint64_t seed) {
  if (passes < 2) throw Error("uncertainty estimation needs T >= 2 passes");
  if (static_cast<Eigen::Index>(ids.size()) != features.cols())
    throw Error("uncertainty estimation: id/feature count mismatch");
  std::vector<UncertaintyRecord> out;
  out.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    const Eigen::MatrixXd repeated = features.col(static_cast<Eigen::Index>(i)).replicate(1, passes);
    const Eigen::MatrixXd draws = model.stochastic(repeated, rng);
    UncertaintyRecord rec;
    rec.essay_id = ids[i];
    rec.passes = passes;
    summarize_passes(draws, rec.mean, rec.sd);
    rec.uncertainty = rec.sd.mean();
    out.push_back(std::move(rec));
  }
  return out;
}

int equal_width_bin(double value, double lo, double hi, int n_bins) {
  if (hi <= lo) return 0;
  const int bin = static_cast<int>(std::floor((value - lo) / (hi - lo) * n_bins));
  return std::clamp(bin, 0, n_bins - 1);
}

PseudoLabeledSet select_balanced(const std::vector<UncertaintyRecord>& records, int n_bins, int per_bin,
                                 std::size_t binning_trait) {
  if (records.empty()) throw Error("select_balanced: no records");
  if (n_bins < 1 || per_bin < 1) throw Error("select_balanced: n_b and n_s must be >= 1");
  const auto trait = static_cast<Eigen::Index>(binning_trait);
  if (trait >= records.front().mean.size()) throw Error("select_balanced: binning trait out of range");

  double lo = records.front().mean(trait), hi = lo;
  for (const auto& r : records) {
    lo = std::min(lo, r.mean(trait));
    hi = std::max(hi, r.mean(trait));
  }
  std::vector<std::vector<std::size_t>> bins(static_cast<std::size_t>(n_bins));
  for (std::size_t i = 0; i < records.size(); ++i)
    bins[static_cast<std::size_t>(equal_width_bin(records[i].mean(trait), lo, hi, n_bins))].push_back(i);

  PseudoLabeledSet out;
  out.n_bins = n_bins;
  out.per_bin = per_bin;
  out.binning_trait = binning_trait;
  std::vector<std::size_t> chosen;
  for (int b = 0; b < n_bins; ++b) {
    auto& members = bins[static_cast<std::size_t>(b)];
    std::sort(members.begin(), members.end(), [&](std::size_t x, std::size_t y) {
      if (records[x].uncertainty != records[y].uncertainty) return records[x].uncertainty < records[y].uncertainty;
      return records[x].essay_id < records[y].essay_id;
    });
    const std::size_t take = std::min(members.size(), static_cast<std::size_t>(per_bin));
    out.bin_sizes.push_back(static_cast<int>(members.size()));
    out.bin_selected.push_back(static_cast<int>(take));
    for (std::size_t k = 0; k < take; ++k) {
      chosen.push_back(members[k]);
      out.bins.push_back(b);
    }
  }
  const auto n_traits = records.front().mean.size();
  out.scores.resize(n_traits, static_cast<Eigen::Index>(chosen.size()));
  for (std::size_t c = 0; c < chosen.size(); ++c) {
    out.ids.push_back(records[chosen[c]].essay_id);
    out.scores.col(static_cast<Eigen::Index>(c)) = records[chosen[c]].mean;
  }
  out.provenance = {{"n_b", n_bins}, {"n_s", per_bin}, {"candidates", records.size()}, {"selected", chosen.size()},
                    {"bin_range", {lo, hi}}};
  return out;
}

BundleTrainer single_model_trainer(ModelConfig model, std::vector<FeatureBlock> blocks, ScoreScale scale,
                                   LossWeights weights, TrainConfig config) {
  return [=](const TrainingSet& train_set, const TrainingSet& dev, std::uint64_t seed) {
    Model m = make_model(model, train_set, blocks, seed);
    TrainConfig tc = config;
    tc.seed = seed;
    train(m, train_set, dev, scale, weights, tc);
    return ModelBundle{{std::move(m)}};
  };
}

ModelBundle self_train(const TrainingSet& labeled, const TrainingSet& dev, const TrainingSet& pseudo,
                       std::uint64_t seed, const BundleTrainer& trainer) {
  std::set<std::string> taken(labeled.ids.begin(), labeled.ids.end());
  taken.insert(dev.ids.begin(), dev.ids.end());
  for (const auto& id : pseudo.ids)
    if (taken.count(id)) throw Error("self-training: pseudo-labeled essay " + id + " is also labeled");
  return trainer(TrainingSet::concat(labeled, pseudo), dev, seed);
}

nlohmann::json UncertaintyGroups::to_json() const {
  return {{"k", k},           {"top_k", top},
          {"all", all},       {"bottom_k", bottom},
          {"balanced_k", balanced}, {"balanced_size", balanced_size},
          {"zero_variance", zero_variance}};
}

UncertaintyGroups uncertainty_group_report(const ModelBundle& model, const TrainingSet& eval, const ScoreScale& scale,
                                           int k, int passes, std::uint64_t seed, int n_bins) {
  if (k < 1 || static_cast<std::size_t>(k) > eval.size())
    throw Error("uncertainty groups: k must lie in [1, |eval|]");
  const auto records = estimate_uncertainty(model, eval.features, eval.ids, passes, seed);
  const Eigen::MatrixXd pred = model.predict(eval.features);

  UncertaintyGroups g;
  g.k = k;
  g.zero_variance = std::all_of(records.begin(), records.end(), [](const auto& r) { return r.uncertainty == 0.0; });

  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto group_qwk = [&](const std::vector<std::size_t>& cols) {
    const TrainingSet sub = eval.subset(cols);
    Eigen::MatrixXd p(pred.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c)
      p.col(static_cast<Eigen::Index>(c)) = pred.col(static_cast<Eigen::Index>(cols[c]));
    return mean_qwk(p, sub, scale);
  };

  g.all = group_qwk(order);

  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (records[x].uncertainty != records[y].uncertainty) return records[x].uncertainty > records[y].uncertainty;
    return records[x].essay_id < records[y].essay_id;
  });
  g.top = group_qwk({order.begin(), order.begin() + k});

  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (records[x].uncertainty != records[y].uncertainty) return records[x].uncertainty < records[y].uncertainty;
    return records[x].essay_id < records[y].essay_id;
  });
  g.bottom = group_qwk({order.begin(), order.begin() + k});

  const PseudoLabeledSet balanced = select_balanced(records, n_bins, std::max(1, k / n_bins));
  std::vector<std::size_t> cols;
  for (const auto& id : balanced.ids)
    cols.push_back(static_cast<std::size_t>(std::find(eval.ids.begin(), eval.ids.end(), id) - eval.ids.begin()));
  g.balanced = group_qwk(cols);
  g.balanced_size = cols.size();
  return g;
}

}  // namespace aes
