#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "aes/metrics.hpp"
#include "oracles.hpp"

using aes::ScoreRange;

TEST_CASE("denorm_round maps onto the integer scale") {
  CHECK(aes::denorm_round(0.0, {2, 12}) == 2);
  CHECK(aes::denorm_round(1.0, {2, 12}) == 12);
  CHECK(aes::denorm_round(0.55, {0, 3}) == 2);
  CHECK(aes::denorm_round(0.5, {0, 1}) == 1);  // half away from zero
  CHECK(aes::denorm_round(-0.3, {2, 12}) == 2);
  CHECK(aes::denorm_round(1.7, {2, 12}) == 12);
}

TEST_CASE("qwk hand-derived cases") {
  const std::vector<int> g{0, 2}, p{2, 0};
  CHECK(aes::qwk(g, p, {0, 2}) == -1.0);

  const std::vector<int> same{1, 3, 2, 4, 4};
  CHECK(aes::qwk(same, same, {1, 4}) == doctest::Approx(1.0).epsilon(1e-15));

  const std::vector<int> constant{3, 3, 3};
  CHECK(aes::qwk(constant, constant, {1, 4}) == 1.0);
}

TEST_CASE("qwk matrices satisfy their invariants") {
  const std::vector<int> g{0, 1, 2, 3, 1, 1}, p{0, 2, 2, 1, 1, 3};
  const auto m = aes::qwk_matrices(g, p, {0, 3});
  CHECK(m.n == 4);
  for (int i = 0; i < m.n; ++i) {
    CHECK(m.weights(i, i) == 0.0);
    for (int j = 0; j < m.n; ++j) {
      CHECK(m.weights(i, j) == m.weights(j, i));
      CHECK(m.weights(i, j) >= 0.0);
      CHECK(m.weights(i, j) <= 1.0);
    }
  }
  CHECK(m.observed.sum() == 6.0);
  CHECK(std::abs(m.expected.sum() - m.observed.sum()) <= 1e-9 * m.observed.sum());
}

TEST_CASE("qwk rejects malformed input") {
  const std::vector<int> a{1, 2}, b{1}, empty{}, out{1, 9};
  CHECK_THROWS_AS(aes::qwk(a, b, {1, 3}), aes::Error);
  CHECK_THROWS_AS(aes::qwk(empty, empty, {1, 3}), aes::Error);
  CHECK_THROWS_AS(aes::qwk(a, out, {1, 3}), aes::Error);
}

TEST_CASE("qwk matches the brute-force oracle on random small instances") {
  std::mt19937_64 gen(20240521);
  for (int trial = 0; trial < 1000; ++trial) {
    const int lo = std::uniform_int_distribution<int>(-2, 3)(gen);
    const int size = std::uniform_int_distribution<int>(1, 4)(gen);
    const int len = std::uniform_int_distribution<int>(1, 8)(gen);
    std::uniform_int_distribution<int> pick(lo, lo + size - 1);
    std::vector<int> g(len), p(len);
    for (int i = 0; i < len; ++i) {
      g[i] = pick(gen);
      p[i] = pick(gen);
    }
    const double expected = oracle::brute_force_qwk(g, p, lo, lo + size - 1);
    CHECK(std::abs(aes::qwk(g, p, {lo, lo + size - 1}) - expected) <= 1e-12);
  }
}

TEST_CASE("qwk properties") {
  std::mt19937_64 gen(7);
  for (int trial = 0; trial < 300; ++trial) {
    const int len = std::uniform_int_distribution<int>(2, 30)(gen);
    std::uniform_int_distribution<int> pick(0, 5);
    std::vector<int> g(len), p(len);
    for (int i = 0; i < len; ++i) {
      g[i] = pick(gen);
      p[i] = pick(gen);
    }
    const ScoreRange r{0, 5};
    const double k = aes::qwk(g, p, r);
    CHECK(std::abs(k) <= 1.0 + 1e-9);

    std::vector<int> gr(len), pr(len);
    for (int i = 0; i < len; ++i) {
      gr[i] = 5 - g[i];
      pr[i] = 5 - p[i];
    }
    CHECK(aes::qwk(gr, pr, r) == doctest::Approx(k).epsilon(1e-12));

    std::vector<int> order(len);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), gen);
    std::vector<int> gs(len), ps(len);
    for (int i = 0; i < len; ++i) {
      gs[i] = g[order[i]];
      ps[i] = p[order[i]];
    }
    CHECK(aes::qwk(gs, ps, r) == doctest::Approx(k).epsilon(1e-12));

    if (*std::min_element(g.begin(), g.end()) != *std::max_element(g.begin(), g.end()))
      CHECK(aes::qwk(g, g, r) == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("report averages are arithmetic means of their cells") {
  aes::QwkReport r;
  r.kappa[{"1", "overall"}] = 0.8;
  r.kappa[{"1", "content"}] = 0.6;
  r.kappa[{"2", "overall"}] = 0.4;
  const auto trait = r.per_trait_average();
  CHECK(trait.at("overall") == doctest::Approx(0.6));
  CHECK(trait.at("content") == doctest::Approx(0.6));
  const auto prompt = r.per_prompt_average();
  CHECK(prompt.at("1") == doctest::Approx(0.7));
  CHECK(prompt.at("2") == doctest::Approx(0.4));
  CHECK(r.grand_average() == doctest::Approx(0.6));
}

TEST_CASE("aggregate takes the mean and population SD over runs") {
  aes::QwkReport a, b;
  a.kappa[{"1", "overall"}] = 0.6;
  b.kappa[{"1", "overall"}] = 0.8;

  const std::vector<aes::QwkReport> one{a};
  const auto single = aes::aggregate(one);
  CHECK(single.kappa.at({"1", "overall"}) == 0.6);
  CHECK(single.sd.at({"1", "overall"}) == 0.0);

  const std::vector<aes::QwkReport> two{a, b};
  const auto agg = aes::aggregate(two);
  CHECK(agg.runs == 2);
  CHECK(agg.kappa.at({"1", "overall"}) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(agg.sd.at({"1", "overall"}) == doctest::Approx(0.1).epsilon(1e-12));

  std::vector<aes::QwkReport> five;
  for (double v : {0.5, 0.6, 0.7, 0.8, 0.9}) {
    aes::QwkReport r;
    r.kappa[{"1", "overall"}] = v;
    five.push_back(r);
  }
  const auto agg5 = aes::aggregate(five);
  CHECK(agg5.runs == 5);
  CHECK(agg5.sd.at({"1", "overall"}) == doctest::Approx(std::sqrt(0.02)).epsilon(1e-12));
  CHECK(agg5.per_trait_sd().at("overall") == doctest::Approx(std::sqrt(0.02)).epsilon(1e-12));

  aes::QwkReport c;
  c.kappa[{"1", "content"}] = 0.5;
  const std::vector<aes::QwkReport> mismatch{a, c};
  CHECK_THROWS_AS(aes::aggregate(mismatch), aes::Error);
}

TEST_CASE("report json round-trips") {
  aes::QwkReport r;
  r.kappa[{"1", "overall"}] = 0.123456789012345;
  r.sd[{"1", "overall"}] = 0.01;
  r.runs = 3;
  const auto back = aes::QwkReport::from_json(r.to_json());
  CHECK(back.kappa == r.kappa);
  CHECK(back.sd == r.sd);
  CHECK(back.runs == 3);
}
