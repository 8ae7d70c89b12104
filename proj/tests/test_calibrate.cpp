#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "aes/calibrate.hpp"
#include "aes/corpus.hpp"
#include "aes/metrics.hpp"

namespace {

std::vector<double> with_middle(double first, double middle, int n_middle, std::vector<double> tail) {
  std::vector<double> v{first};
  v.insert(v.end(), n_middle, middle);
  v.insert(v.end(), tail.begin(), tail.end());
  return v;
}

/// Endpoints computed from scratch: sort, take nearest-rank cut points, average the tails.
std::pair<double, double> oracle_endpoints(std::vector<double> gold, std::vector<double> pred,
                                           const std::vector<double>& test, int p) {
  auto tails = [p](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    const std::size_t lo_rank = std::max<std::size_t>(1, (p * n + 99) / 100);
    const std::size_t hi_rank = std::max<std::size_t>(1, ((100 - p) * n + 99) / 100);
    const double q_lo = v[lo_rank - 1], q_hi = v[hi_rank - 1];
    double lo = 0, hi = 0;
    int nl = 0, nh = 0;
    for (double x : v) {
      if (x <= q_lo) lo += x, ++nl;
      if (x >= q_hi) hi += x, ++nh;
    }
    return std::pair{lo / nl, hi / nh};
  };
  for (auto* v : {&gold, &pred})
    for (double& x : *v) x = std::clamp(x, 0.0, 1.0);
  const auto [gl, gh] = tails(gold);
  const auto [pl, ph] = tails(pred);
  const double tmin = std::clamp(*std::min_element(test.begin(), test.end()), 0.0, 1.0);
  const double tmax = std::clamp(*std::max_element(test.begin(), test.end()), 0.0, 1.0);
  return {std::clamp(gl - pl + tmin, 0.0, 1.0), std::clamp(gh - ph + tmax, 0.0, 1.0)};
}

}  // namespace

TEST_CASE("perfectly calibrated dev keeps the test endpoints") {
  const std::vector<double> dev = {0.1, 0.3, 0.5, 0.7, 0.9, 0.2, 0.4};
  const std::vector<double> test = {0.25, 0.6, 0.05, 0.8};
  const auto params = aes::fit_alignment(dev, dev, test);
  CHECK(std::abs(params.a - 0.05) <= 1e-9);
  CHECK(std::abs(params.b - 0.8) <= 1e-9);
  const auto out = aes::apply_alignment(test, params);
  for (std::size_t i = 0; i < test.size(); ++i) CHECK(std::abs(out[i] - test[i]) <= 1e-12);
}

TEST_CASE("endpoints clip to the unit interval") {
  // Twenty dev essays: gold tails 0.0 / 1.0, predicted tails 0.06 / 0.9, test range [0.04, 0.95].
  const auto gold = with_middle(0.0, 0.5, 17, {1.0, 1.0});
  const auto pred = with_middle(0.06, 0.5, 17, {0.9, 0.9});
  const std::vector<double> test = {0.04, 0.5, 0.95};
  const auto params = aes::fit_alignment(gold, pred, test, 5.0);
  CHECK(params.gold_top_mean == doctest::Approx(1.0));
  CHECK(params.pred_top_mean == doctest::Approx(0.9));
  CHECK(params.pred_bottom_mean == doctest::Approx(0.06));
  CHECK(std::abs(params.b - 1.0) <= 1e-9);
  CHECK(std::abs(params.a - 0.0) <= 1e-9);
}

TEST_CASE("an over-confident ceiling is pulled down") {
  const auto gold = with_middle(0.2, 0.5, 17, {0.8, 0.8});
  const auto pred = with_middle(0.2, 0.5, 17, {0.99, 0.99});
  const std::vector<double> test = {0.2, 0.5, 0.99};
  const auto params = aes::fit_alignment(gold, pred, test, 5.0);
  CHECK(std::abs(params.b - 0.8) <= 1e-9);
  CHECK(std::abs(params.a - 0.2) <= 1e-9);
}

TEST_CASE("apply maps the test range linearly onto [a, b]") {
  aes::AlignmentParams params;
  params.a = 0.0;
  params.b = 1.0;
  params.test_min = 0.04;
  params.test_max = 0.95;
  const auto out = aes::apply_alignment(std::vector<double>{0.04, 0.5, 0.95}, params);
  CHECK(std::abs(out[0] - 0.0) <= 1e-9);
  CHECK(std::abs(out[1] - 0.46 / 0.91) <= 1e-9);
  CHECK(std::abs(out[1] - 0.50549) <= 1e-5);
  CHECK(std::abs(out[2] - 1.0) <= 1e-9);

  aes::AlignmentParams flat;
  flat.a = 0.2;
  flat.b = 0.6;
  flat.test_min = flat.test_max = 0.7;
  for (double v : aes::apply_alignment(std::vector<double>{0.7, 0.7, 0.7}, flat)) CHECK(v == doctest::Approx(0.4));
}

TEST_CASE("an inverted fit reverses order and is flagged") {
  // Gold spans [0.45, 0.55] while predictions span [0, 1]: a = 0.45 + 0.3, b = 0.55 - 1 + 0.5.
  const std::vector<double> gold = {0.45, 0.5, 0.5, 0.55};
  const std::vector<double> pred = {0.0, 0.5, 0.5, 1.0};
  const std::vector<double> test = {0.3, 0.4, 0.5};
  const auto params = aes::fit_alignment(gold, pred, test, 5.0);
  CHECK(params.a == doctest::Approx(0.75));
  CHECK(params.b == doctest::Approx(0.05));
  CHECK(params.inverted());
  CHECK(params.to_json().at("inverted") == true);
  const auto out = aes::apply_alignment(test, params);
  CHECK(out.front() == doctest::Approx(params.a));
  CHECK(out.back() == doctest::Approx(params.b));
  CHECK(out[0] > out[2]);
}

TEST_CASE("nearest-rank quantiles") {
  const std::vector<double> v = {5, 1, 4, 2, 3};
  CHECK(aes::nearest_rank_quantile(v, 0) == 1);
  CHECK(aes::nearest_rank_quantile(v, 20) == 1);
  CHECK(aes::nearest_rank_quantile(v, 21) == 2);
  CHECK(aes::nearest_rank_quantile(v, 100) == 5);
  std::vector<double> hundred(100);
  for (int i = 0; i < 100; ++i) hundred[i] = i;
  for (int p = 1; p <= 100; ++p) CHECK(aes::nearest_rank_quantile(hundred, p) == p - 1);
  CHECK_THROWS_AS(aes::nearest_rank_quantile(std::vector<double>{}, 5), aes::Error);
}

TEST_CASE("fit matches an independent endpoint computation on random inputs") {
  std::mt19937_64 gen(314);
  std::uniform_real_distribution<double> u(-0.1, 1.1);
  for (int trial = 0; trial < 2000; ++trial) {
    const int n_dev = std::uniform_int_distribution<int>(1, 60)(gen);
    const int n_test = std::uniform_int_distribution<int>(1, 40)(gen);
    const int p = std::uniform_int_distribution<int>(0, 50)(gen);
    std::vector<double> gold(n_dev), pred(n_dev), test(n_test);
    for (auto* v : {&gold, &pred, &test})
      for (double& x : *v) x = gen() % 4 == 0 ? std::round(u(gen) * 4) / 4 : u(gen);
    const auto params = aes::fit_alignment(gold, pred, test, p);
    const auto [a, b] = oracle_endpoints(gold, pred, test, p);
    CHECK(std::abs(params.a - a) <= 1e-12);
    CHECK(std::abs(params.b - b) <= 1e-12);
  }
}

TEST_CASE("alignment preserves order and stays in range on fuzzed inputs") {
  std::mt19937_64 gen(2718);
  std::uniform_real_distribution<double> u(-0.2, 1.2);
  int checked = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 30)(gen);
    std::vector<double> gold(n), pred(n), test(std::uniform_int_distribution<int>(1, 30)(gen));
    for (auto* v : {&gold, &pred, &test})
      for (double& x : *v) x = u(gen);
    const auto params = aes::fit_alignment(gold, pred, test, 5.0);
    REQUIRE(params.a >= 0.0);
    REQUIRE(params.b <= 1.0);
    const auto out = aes::apply_alignment(test, params);
    const double lo = std::min(params.a, params.b), hi = std::max(params.a, params.b);
    for (double v : out) REQUIRE((v >= lo && v <= hi));
    std::vector<std::size_t> order(test.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return test[x] < test[y]; });
    for (std::size_t i = 1; i < order.size(); ++i) {
      if (params.b >= params.a)
        REQUIRE(out[order[i]] >= out[order[i - 1]]);
      else
        REQUIRE(out[order[i]] <= out[order[i - 1]]);
    }
    ++checked;
  }
  CHECK(checked == 10000);
}

TEST_CASE("alignment is the identity on calibrated data") {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> dev(25), test(15);
    for (double& x : dev) x = u(gen);
    for (double& x : test) x = u(gen);
    const auto out = aes::apply_alignment(test, aes::fit_alignment(dev, dev, test));
    for (std::size_t i = 0; i < test.size(); ++i) REQUIRE(std::abs(out[i] - test[i]) <= 1e-12);
  }
}

TEST_CASE("index-matched mode averages predictions of the gold tails") {
  const std::vector<double> gold = {0.0, 0.5, 0.5, 1.0};
  const std::vector<double> pred = {0.3, 0.1, 0.9, 0.6};
  const std::vector<double> test = {0.2, 0.8};
  const auto matched = aes::fit_alignment(gold, pred, test, 5.0, aes::SubsetMode::index_matched);
  CHECK(matched.pred_bottom_mean == doctest::Approx(0.3));
  CHECK(matched.pred_top_mean == doctest::Approx(0.6));
  CHECK(matched.a == 0.0);  // -0.1 clipped
  CHECK(matched.b == 1.0);  // 1.2 clipped
  const auto independent = aes::fit_alignment(gold, pred, test, 5.0);
  CHECK(independent.pred_bottom_mean == doctest::Approx(0.1));
  CHECK(independent.pred_top_mean == doctest::Approx(0.9));
  CHECK_THROWS_AS(aes::fit_alignment(gold, std::vector<double>{0.1}, test, 5.0, aes::SubsetMode::index_matched),
                  aes::Error);
}

TEST_CASE("fit rejects empty lists and out-of-range p") {
  const std::vector<double> v = {0.5};
  const std::vector<double> empty;
  CHECK_THROWS_AS(aes::fit_alignment(empty, v, v), aes::Error);
  CHECK_THROWS_AS(aes::fit_alignment(v, empty, v), aes::Error);
  CHECK_THROWS_AS(aes::fit_alignment(v, v, empty), aes::Error);
  CHECK_THROWS_AS(aes::fit_alignment(v, v, v, 60.0), aes::Error);
}

TEST_CASE("alignment undoes a shrink toward the mean in most trials") {
  const aes::ScoreRange range{0, 10};
  int wins = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::mt19937_64 gen(1000 + trial);
    std::uniform_int_distribution<int> score(0, 10);
    std::normal_distribution<double> noise(0.0, 0.02);
    auto draw = [&](int n, std::vector<int>& gold, std::vector<double>& gold_norm, std::vector<double>& pred) {
      for (int i = 0; i < n; ++i) {
        const int g = score(gen);
        gold.push_back(g);
        gold_norm.push_back(g / 10.0);
        pred.push_back(g / 10.0 * 0.8 + 0.1 + noise(gen));
      }
    };
    std::vector<int> dev_gold, test_gold;
    std::vector<double> dev_norm, dev_pred, test_norm, test_pred;
    draw(100, dev_gold, dev_norm, dev_pred);
    draw(200, test_gold, test_norm, test_pred);
    const auto aligned = aes::apply_alignment(test_pred, aes::fit_alignment(dev_norm, dev_pred, test_pred));
    std::vector<int> raw_scores, aligned_scores;
    for (std::size_t i = 0; i < test_pred.size(); ++i) {
      raw_scores.push_back(aes::denorm_round(test_pred[i], range));
      aligned_scores.push_back(aes::denorm_round(aligned[i], range));
    }
    if (aes::qwk(test_gold, aligned_scores, range) >= aes::qwk(test_gold, raw_scores, range)) ++wins;
  }
  CHECK(wins >= 45);
}
