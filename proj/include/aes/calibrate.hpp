#pragma once

#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace aes {

enum class SubsetMode {
  independent,    // each list's own top/bottom p% quantile subset
  index_matched,  // predictions of the essays whose gold falls in the gold subset
};

/// Endpoints of the aligned test range plus the statistics they came from.
struct AlignmentParams {
  double a = 0.0;  // aligned minimum
  double b = 1.0;  // aligned maximum
  double p = 5.0;
  SubsetMode mode = SubsetMode::independent;
  double gold_bottom_mean = 0.0;
  double pred_bottom_mean = 0.0;
  double gold_top_mean = 0.0;
  double pred_top_mean = 0.0;
  double test_min = 0.0;
  double test_max = 0.0;

  bool inverted() const { return b < a; }
  nlohmann::json to_json() const;
};

/// Nearest-rank quantile: the ceil(p/100 * n)-th smallest value (the minimum when p == 0).
double nearest_rank_quantile(std::span<const double> values, double percent);

/// Fits the linear alignment from dev gold/predictions and the test predictions it will be applied to.
/// Inputs are normalized scores; predictions are clipped to [0,1] first.
AlignmentParams fit_alignment(std::span<const double> dev_gold, std::span<const double> dev_pred,
                              std::span<const double> test_pred, double p = 5.0,
                              SubsetMode mode = SubsetMode::independent);

/// Maps [test_min, test_max] linearly onto [a, b]. Constant test predictions map to (a+b)/2.
std::vector<double> apply_alignment(std::span<const double> test_pred, const AlignmentParams& params);

}  // namespace aes
