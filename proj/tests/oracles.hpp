#pragma once

// Reference computations written independently of the library, used as test oracles.

#include <cmath>
#include <vector>

namespace oracle {

/// QWK from pair sums: sum(W*O) over essays, sum(W*E) over all gold/pred pairs divided by n.
inline double brute_force_qwk(const std::vector<int>& gold, const std::vector<int>& pred, int lo, int hi) {
  const int n_scores = hi - lo + 1;
  if (n_scores == 1) return 1.0;
  const double denom = double(n_scores - 1) * double(n_scores - 1);
  auto w = [&](int a, int b) { return double(a - b) * double(a - b) / denom; };
  const double n = double(gold.size());
  double observed = 0.0, expected = 0.0;
  for (std::size_t k = 0; k < gold.size(); ++k) observed += w(gold[k], pred[k]);
  for (std::size_t k = 0; k < gold.size(); ++k)
    for (std::size_t l = 0; l < pred.size(); ++l) expected += w(gold[k], pred[l]) / n;
  if (expected == 0.0) return 1.0;
  return 1.0 - observed / expected;
}

/// Population SD by the two-pass formula.
inline double two_pass_sd(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= double(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / double(v.size()));
}

}  // namespace oracle
