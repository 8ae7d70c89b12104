#include "aes/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace aes {

int denorm_round(double pred, const ScoreRange& range) {
  const double clipped = std::clamp(pred, 0.0, 1.0);
  const double raw = range.min_score + clipped * (range.max_score - range.min_score);
  const int rounded = static_cast<int>(std::round(raw));  // std::round is half away from zero
  return std::clamp(rounded, range.min_score, range.max_score);
}

namespace {

void check_inputs(std::span<const int> gold, std::span<const int> pred, const ScoreRange& range) {
  if (gold.size() != pred.size())
    throw Error("qwk: length mismatch (" + std::to_string(gold.size()) + " vs " +
                std::to_string(pred.size()) + ")");
  if (gold.empty()) throw Error("qwk: empty input");
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (!range.contains(gold[i]) || !range.contains(pred[i]))
      throw Error("qwk: value outside [" + std::to_string(range.min_score) + "," +
                  std::to_string(range.max_score) + "] at position " + std::to_string(i));
  }
}

}  // namespace

QwkMatrices qwk_matrices(std::span<const int> gold, std::span<const int> pred, const ScoreRange& range) {
  check_inputs(gold, pred, range);
  const int n = range.size();
  QwkMatrices m;
  m.n = n;
  // A one-point scale has no disagreement to weigh; W stays zero.
  m.weights = Eigen::MatrixXd::Zero(n, n);
  if (n > 1)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m.weights(i, j) = double((i - j) * (i - j)) / double((n - 1) * (n - 1));

  m.observed = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd gold_hist = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd pred_hist = Eigen::VectorXd::Zero(n);
  for (std::size_t k = 0; k < gold.size(); ++k) {
    const int g = gold[k] - range.min_score;
    const int p = pred[k] - range.min_score;
    m.observed(g, p) += 1.0;
    gold_hist(g) += 1.0;
    pred_hist(p) += 1.0;
  }
  m.expected = gold_hist * pred_hist.transpose() / double(gold.size());
  return m;
}

double qwk(std::span<const int> gold, std::span<const int> pred, const ScoreRange& range) {
  const QwkMatrices m = qwk_matrices(gold, pred, range);
  const double num = m.weights.cwiseProduct(m.observed).sum();
  const double den = m.weights.cwiseProduct(m.expected).sum();
  if (den == 0.0) return 1.0;
  return 1.0 - num / den;
}

std::map<std::string, double> QwkReport::per_trait_average() const {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& [key, v] : kappa) {
    acc[key.second].first += v;
    acc[key.second].second += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [trait, s] : acc) out[trait] = s.first / s.second;
  return out;
}

std::map<std::string, double> QwkReport::per_prompt_average() const {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& [key, v] : kappa) {
    acc[key.first].first += v;
    acc[key.first].second += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [prompt, s] : acc) out[prompt] = s.first / s.second;
  return out;
}

double QwkReport::grand_average() const {
  if (kappa.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [key, v] : kappa) s += v;
  return s / double(kappa.size());
}

std::map<std::string, double> QwkReport::per_trait_sd() const {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& [key, v] : sd) {
    acc[key.second].first += v;
    acc[key.second].second += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [trait, s] : acc) out[trait] = s.first / s.second;
  return out;
}

nlohmann::json QwkReport::to_json() const {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& [key, v] : kappa) {
    const auto it = sd.find(key);
    cells.push_back({{"prompt", key.first},
                     {"trait", key.second},
                     {"kappa", v},
                     {"sd", it == sd.end() ? 0.0 : it->second}});
  }
  return {{"runs", runs}, {"cells", cells}};
}

QwkReport QwkReport::from_json(const nlohmann::json& j) {
  QwkReport r;
  r.runs = j.at("runs").get<int>();
  for (const auto& c : j.at("cells")) {
    const CellKey key{c.at("prompt").get<std::string>(), c.at("trait").get<std::string>()};
    r.kappa[key] = c.at("kappa").get<double>();
    r.sd[key] = c.at("sd").get<double>();
  }
  return r;
}

QwkReport aggregate(std::span<const QwkReport> runs) {
  if (runs.empty()) throw Error("aggregate: no runs");
  QwkReport out;
  out.runs = static_cast<int>(runs.size());
  for (const auto& r : runs) {
    if (r.kappa.size() != runs.front().kappa.size())
      throw Error("aggregate: reports cover different (prompt, trait) cells");
    for (const auto& [key, v] : runs.front().kappa)
      if (!r.kappa.count(key))
        throw Error("aggregate: cell (" + key.first + ", " + key.second + ") missing from a run");
  }
  for (const auto& [key, first] : runs.front().kappa) {
    double mean = 0.0;
    for (const auto& r : runs) mean += r.kappa.at(key);
    mean /= double(runs.size());
    double var = 0.0;
    for (const auto& r : runs) var += (r.kappa.at(key) - mean) * (r.kappa.at(key) - mean);
    out.kappa[key] = mean;
    out.sd[key] = std::sqrt(var / double(runs.size()));
  }
  return out;
}

}  // namespace aes
