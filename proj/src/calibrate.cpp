#include "aes/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aes/corpus.hpp"

namespace aes {

namespace {

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

std::vector<double> clipped(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x = clip01(x);
  return out;
}

struct SubsetMeans {
  double bottom = 0.0;
  double top = 0.0;
};

SubsetMeans subset_means(std::span<const double> values, double p) {
  const double q_low = nearest_rank_quantile(values, p);
  const double q_high = nearest_rank_quantile(values, 100.0 - p);
  double lo_sum = 0.0, hi_sum = 0.0;
  int lo_n = 0, hi_n = 0;
  for (double v : values) {
    if (v <= q_low) {
      lo_sum += v;
      ++lo_n;
    }
    if (v >= q_high) {
      hi_sum += v;
      ++hi_n;
    }
  }
  return {lo_sum / lo_n, hi_sum / hi_n};
}

}  // namespace

double nearest_rank_quantile(std::span<const double> values, double percent) {
  if (values.empty()) throw Error("quantile of an empty list");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double rank = std::ceil(std::clamp(percent, 0.0, 100.0) * double(sorted.size()) / 100.0);  // exact for whole percents
  const auto idx = static_cast<std::size_t>(std::max(rank, 1.0)) - 1;
  return sorted[std::min(idx, sorted.size() - 1)];
}

AlignmentParams fit_alignment(std::span<const double> dev_gold, std::span<const double> dev_pred,
                              std::span<const double> test_pred, double p, SubsetMode mode) {
  if (dev_gold.empty() || dev_pred.empty() || test_pred.empty())
    throw Error("score alignment: empty input list");
  if (p < 0.0 || p > 50.0) throw Error("score alignment: p must lie in [0, 50]");
  const std::vector<double> gold = clipped(dev_gold);
  const std::vector<double> pred = clipped(dev_pred);
  const std::vector<double> test = clipped(test_pred);

  AlignmentParams params;
  params.p = p;
  params.mode = mode;
  const SubsetMeans g = subset_means(gold, p);
  params.gold_bottom_mean = g.bottom;
  params.gold_top_mean = g.top;
  if (mode == SubsetMode::independent) {
    const SubsetMeans s = subset_means(pred, p);
    params.pred_bottom_mean = s.bottom;
    params.pred_top_mean = s.top;
  } else {
    if (gold.size() != pred.size()) throw Error("score alignment: index-matched mode needs paired dev lists");
    const double q_low = nearest_rank_quantile(gold, p);
    const double q_high = nearest_rank_quantile(gold, 100.0 - p);
    double lo = 0.0, hi = 0.0;
    int lo_n = 0, hi_n = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (gold[i] <= q_low) {
        lo += pred[i];
        ++lo_n;
      }
      if (gold[i] >= q_high) {
        hi += pred[i];
        ++hi_n;
      }
    }
    params.pred_bottom_mean = lo / lo_n;
    params.pred_top_mean = hi / hi_n;
  }
  params.test_min = *std::min_element(test.begin(), test.end());
  params.test_max = *std::max_element(test.begin(), test.end());
  params.a = clip01(params.gold_bottom_mean - params.pred_bottom_mean + params.test_min);
  params.b = clip01(params.gold_top_mean - params.pred_top_mean + params.test_max);
  return params;
}

std::vector<double> apply_alignment(std::span<const double> test_pred, const AlignmentParams& params) {
  std::vector<double> out;
  out.reserve(test_pred.size());
  const double span = params.test_max - params.test_min;
  for (double v : test_pred) {
    if (span <= 0.0) {
      out.push_back(0.5 * (params.a + params.b));
      continue;
    }
    const double t = std::clamp((clip01(v) - params.test_min) / span, 0.0, 1.0);
    const double mapped = t == 1.0 ? params.b : t * (params.b - params.a) + params.a;
    out.push_back(std::clamp(mapped, std::min(params.a, params.b), std::max(params.a, params.b)));
  }
  return out;
}

nlohmann::json AlignmentParams::to_json() const {
  return {{"a", a},
          {"b", b},
          {"p", p},
          {"mode", mode == SubsetMode::independent ? "independent" : "index_matched"},
          {"gold_bottom_mean", gold_bottom_mean},
          {"pred_bottom_mean", pred_bottom_mean},
          {"gold_top_mean", gold_top_mean},
          {"pred_top_mean", pred_top_mean},
          {"test_min", test_min},
          {"test_max", test_max},
          {"inverted", inverted()}};
}

}  // namespace aes
