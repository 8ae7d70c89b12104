#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "aes/corpus.hpp"

namespace aes {

/// Denormalizes a [0,1] prediction onto [min,max] and rounds half away from zero.
int denorm_round(double pred, const ScoreRange& range);

/// Weight, observed and expected matrices behind a kappa value. E is scaled so sum(E) == sum(O).
struct QwkMatrices {
  Eigen::MatrixXd weights;
  Eigen::MatrixXd observed;
  Eigen::MatrixXd expected;
  int n = 0;
};

QwkMatrices qwk_matrices(std::span<const int> gold, std::span<const int> pred, const ScoreRange& range);

/// Quadratic weighted kappa. Returns 1.0 when the weighted expected disagreement is zero
/// (both marginals on one identical score).
double qwk(std::span<const int> gold, std::span<const int> pred, const ScoreRange& range);

using CellKey = std::pair<std::string, std::string>;  // (prompt_id, trait)

/// Kappa per (prompt, trait) cell, with the across-run standard deviation when aggregated.
struct QwkReport {
  std::map<CellKey, double> kappa;
  std::map<CellKey, double> sd;
  int runs = 1;

  std::map<std::string, double> per_trait_average() const;
  std::map<std::string, double> per_prompt_average() const;
  double grand_average() const;
  /// Mean of the SD cells of each trait, across prompts (the "averaged standard deviation").
  std::map<std::string, double> per_trait_sd() const;

  nlohmann::json to_json() const;
  static QwkReport from_json(const nlohmann::json& j);
};

/// Cell-wise mean and population SD over runs. All reports must share the same cells.
QwkReport aggregate(std::span<const QwkReport> runs);

}  // namespace aes
