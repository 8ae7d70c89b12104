#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "aes/selftrain.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace {

aes::UncertaintyRecord record(std::string id, double mean, double uncertainty) {
  aes::UncertaintyRecord r;
  r.essay_id = std::move(id);
  r.mean = Eigen::VectorXd::Constant(1, mean);
  r.sd = Eigen::VectorXd::Constant(1, uncertainty);
  r.uncertainty = uncertainty;
  r.passes = 10;
  return r;
}

aes::RunConfig k_config(int k = 32) {
  auto c = fixture::small_config();
  c.policy = aes::SplitPolicy::k_data;
  c.k = k;
  return c;
}

/// Gold targets for pool essays, looked up from the corpus the unit was built from.
aes::TrainingSet with_gold(const aes::TrainingSet& pool, const fixture::Data& d, const aes::UnitData& unit) {
  std::map<std::string, const aes::Essay*> by_id;
  for (const auto& e : d.synthetic.corpus) by_id[e.essay_id] = &e;
  aes::TrainingSet out = pool;
  for (std::size_t j = 0; j < pool.size(); ++j) {
    const auto norm = aes::normalize(*by_id.at(pool.ids[j]), d.synthetic.schema);
    for (std::size_t t = 0; t < unit.scale.traits.size(); ++t) {
      out.targets(Eigen::Index(t), Eigen::Index(j)) = norm.at(unit.scale.traits[t]);
      out.mask(Eigen::Index(t), Eigen::Index(j)) = 1.0;
    }
  }
  return out;
}

aes::BundleTrainer trainer_for(const aes::RunConfig& config, const aes::UnitData& unit) {
  aes::ModelConfig mc = config.model;
  mc.traits = unit.scale.traits;
  return aes::single_model_trainer(mc, unit.blocks, unit.scale,
                                   aes::LossWeights::uniform(mc.traits, config.alpha_overall, config.alpha_trait),
                                   config.train);
}

}  // namespace

TEST_CASE("pass summaries use the population standard deviation") {
  Eigen::MatrixXd passes(1, 4);
  passes << 0.4, 0.6, 0.5, 0.5;
  Eigen::VectorXd mean, sd;
  aes::summarize_passes(passes, mean, sd);
  CHECK(mean(0) == doctest::Approx(0.5));
  CHECK(std::abs(sd(0) - std::sqrt(0.005)) <= 1e-12);
  CHECK(std::abs(sd(0) - 0.070711) <= 1e-6);

  Eigen::MatrixXd two(2, 2);
  two << 0.48, 0.52, 0.46, 0.54;  // SDs 0.02 and 0.04
  aes::summarize_passes(two, mean, sd);
  CHECK(sd.mean() == doctest::Approx(0.03));

  for (int t = 2; t <= 40; ++t) {
    aes::summarize_passes(Eigen::MatrixXd::Constant(3, t, 0.1), mean, sd);
    REQUIRE(sd.isZero(0.0));
    REQUIRE(mean(0) == 0.1);
  }
}

TEST_CASE("pass summaries match a two-pass oracle") {
  std::mt19937_64 gen(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const int traits = std::uniform_int_distribution<int>(1, 9)(gen);
    const int t = std::uniform_int_distribution<int>(2, 50)(gen);
    Eigen::MatrixXd passes(traits, t);
    for (Eigen::Index j = 0; j < t; ++j)
      for (Eigen::Index i = 0; i < traits; ++i) passes(i, j) = u(gen);
    Eigen::VectorXd mean, sd;
    aes::summarize_passes(passes, mean, sd);
    for (int i = 0; i < traits; ++i) {
      std::vector<double> row;
      for (int j = 0; j < t; ++j) row.push_back(passes(i, j));
      REQUIRE(std::abs(sd(i) - oracle::two_pass_sd(row)) <= 1e-12);
    }
  }
}

TEST_CASE("uncertainty estimates are seeded, non-negative and vanish without dropout") {
  auto config = fixture::small_config();
  config.train.max_epochs = 5;
  const auto d = fixture::make(config, fixture::corpus(80));
  const auto& unit = d.units.front();
  aes::ModelBundle bundle = aes::train_single(unit, unit.train, config, 2).bundle;

  const auto a = aes::estimate_uncertainty(bundle, unit.test.features, unit.test.ids, 10, 5);
  const auto b = aes::estimate_uncertainty(bundle, unit.test.features, unit.test.ids, 10, 5);
  const auto c = aes::estimate_uncertainty(bundle, unit.test.features, unit.test.ids, 10, 6);
  REQUIRE(a.size() == unit.test.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].mean == b[i].mean);
    CHECK(a[i].sd == b[i].sd);
    CHECK(a[i].uncertainty > 0.0);
    CHECK((a[i].sd.array() >= 0.0).all());
    CHECK((a[i].mean.array() > 0.0).all());
    CHECK((a[i].mean.array() < 1.0).all());
    CHECK(a[i].uncertainty == doctest::Approx(a[i].sd.mean()));
    any_diff = any_diff || a[i].mean != c[i].mean;
  }
  CHECK(any_diff);
  CHECK_THROWS_AS(aes::estimate_uncertainty(bundle, unit.test.features, unit.test.ids, 1, 5), aes::Error);

  bundle.members.front().config.dropout = 0.0;
  for (const auto& r : aes::estimate_uncertainty(bundle, unit.test.features, unit.test.ids, 10, 5)) {
    CHECK(r.uncertainty == 0.0);
    CHECK(r.sd.isZero(0.0));
  }
}

TEST_CASE("balanced selection over ten records and two bins") {
  // Predictions 0.0..0.9; uncertainties chosen so the winners are 0.3 and 0.6.
  const std::vector<double> unc = {0.9, 0.8, 0.7, 0.1, 0.6, 0.5, 0.2, 0.4, 0.3, 0.35};
  std::vector<aes::UncertaintyRecord> records;
  for (int i = 0; i < 10; ++i) records.push_back(record("e" + std::to_string(i), i / 10.0, unc[i]));
  const auto set = aes::select_balanced(records, 2, 1);
  REQUIRE(set.size() == 2);
  CHECK(set.ids == std::vector<std::string>{"e3", "e6"});
  CHECK(set.bins == std::vector<int>{0, 1});
  CHECK(set.bin_sizes == std::vector<int>{5, 5});
  CHECK(set.scores(0, 0) == doctest::Approx(0.3));

  const auto single = aes::select_balanced(records, 1, 3);
  CHECK(single.ids == std::vector<std::string>{"e3", "e6", "e8"});

  CHECK_THROWS_AS(aes::select_balanced({}, 2, 1), aes::Error);
  CHECK_THROWS_AS(aes::select_balanced(records, 0, 1), aes::Error);
  CHECK_THROWS_AS(aes::select_balanced(records, 2, 0), aes::Error);
  CHECK_THROWS_AS(aes::select_balanced(records, 2, 1, 3), aes::Error);
}

TEST_CASE("equal-width bins close the top edge") {
  CHECK(aes::equal_width_bin(0.0, 0.0, 0.9, 2) == 0);
  CHECK(aes::equal_width_bin(0.44, 0.0, 0.9, 2) == 0);
  CHECK(aes::equal_width_bin(0.45, 0.0, 0.9, 2) == 1);
  CHECK(aes::equal_width_bin(0.9, 0.0, 0.9, 2) == 1);
  CHECK(aes::equal_width_bin(0.3, 0.3, 0.3, 8) == 0);
}

TEST_CASE("a dense pool fills every bin") {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<aes::UncertaintyRecord> records;
  for (int i = 0; i < 2000; ++i) records.push_back(record("p" + std::to_string(i), i / 1999.0, u(gen)));
  const auto set = aes::select_balanced(records, 8, 32);
  CHECK(set.size() == 256);
  for (int s : set.bin_selected) CHECK(s == 32);

  // Augmented training size is n_b * n_s + K.
  aes::TrainingSet labeled;
  for (int i = 0; i < 32; ++i) labeled.ids.push_back("l" + std::to_string(i));
  labeled.group.assign(32, 0);
  labeled.features = Eigen::MatrixXd::Zero(3, 32);
  labeled.targets = labeled.mask = Eigen::MatrixXd::Zero(1, 32);
  aes::TrainingSet pseudo;
  pseudo.ids = set.ids;
  pseudo.group.assign(set.size(), 0);
  pseudo.features = Eigen::MatrixXd::Zero(3, 256);
  pseudo.targets = set.scores;
  pseudo.mask = Eigen::MatrixXd::Ones(1, 256);
  std::size_t seen = 0;
  aes::self_train(labeled, {}, pseudo, 1, [&](const aes::TrainingSet& t, const aes::TrainingSet&, std::uint64_t) {
    seen = t.size();
    return aes::ModelBundle{};
  });
  CHECK(seen == 288);
}

TEST_CASE("selection is minimal within each bin (exhaustive scan)") {
  std::mt19937_64 gen(21);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 120)(gen);
    const int n_b = std::uniform_int_distribution<int>(1, 10)(gen);
    const int n_s = std::uniform_int_distribution<int>(1, 15)(gen);
    std::vector<aes::UncertaintyRecord> records;
    for (int i = 0; i < n; ++i) {
      const double m = std::uniform_real_distribution<double>(0.05, 0.95)(gen);
      const double unc = std::uniform_int_distribution<int>(0, 20)(gen) / 100.0;  // ties on purpose
      records.push_back(record("r" + std::to_string(i), m, unc));
    }
    const auto set = aes::select_balanced(records, n_b, n_s);
    double lo = 1, hi = 0;
    for (const auto& r : records) lo = std::min(lo, r.mean(0)), hi = std::max(hi, r.mean(0));
    auto bin_of = [&](double v) {
      if (hi <= lo) return 0;
      int b = int(std::floor((v - lo) / (hi - lo) * n_b));
      return std::clamp(b, 0, n_b - 1);
    };
    std::map<std::string, bool> selected;
    for (const auto& id : set.ids) selected[id] = true;
    std::vector<int> size(n_b, 0), taken(n_b, 0);
    for (const auto& r : records) {
      ++size[bin_of(r.mean(0))];
      if (selected.count(r.essay_id)) ++taken[bin_of(r.mean(0))];
    }
    CHECK(set.size() <= std::size_t(n_b * n_s));
    for (int b = 0; b < n_b; ++b) REQUIRE(taken[b] == std::min(size[b], n_s));
    for (const auto& s : records) {
      if (!selected.count(s.essay_id)) continue;
      for (const auto& r : records) {
        if (selected.count(r.essay_id) || bin_of(r.mean(0)) != bin_of(s.mean(0))) continue;
        REQUIRE(s.uncertainty <= r.uncertainty);
        if (s.uncertainty == r.uncertainty) REQUIRE(s.essay_id < r.essay_id);
      }
    }
  }
}

TEST_CASE("self-training rejects overlap and reduces to retraining when the pseudo set is empty") {
  const auto config = k_config();
  const auto d = fixture::make(config, fixture::corpus(150));
  const auto& unit = d.units.front();
  const auto trainer = trainer_for(config, unit);

  CHECK_THROWS_AS(aes::self_train(unit.train, unit.dev, unit.train.subset({0}), 3, trainer), aes::Error);
  CHECK_THROWS_AS(aes::self_train(unit.train, unit.dev, unit.dev.subset({1}), 3, trainer), aes::Error);

  const auto empty = aes::self_train(unit.train, unit.dev, unit.unlabeled.subset({}), 3, trainer);
  const auto plain = trainer(unit.train, unit.dev, 3);
  CHECK(empty.predict(unit.test.features) == plain.predict(unit.test.features));
}

TEST_CASE("gold pseudo-labels help a K-only model") {
  int wins = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto config = k_config();
    const auto d = fixture::make(config, fixture::corpus(400, 1, 100 + trial), trial + 1);
    const auto& unit = d.units.front();
    const auto trainer = trainer_for(config, unit);
    std::vector<std::size_t> cols;
    for (std::size_t i = 0; i < std::min<std::size_t>(256, unit.unlabeled.size()); ++i) cols.push_back(i);
    const auto pseudo = with_gold(unit.unlabeled.subset(cols), d, unit);
    const std::uint64_t seed = 900 + trial;
    const double augmented =
        aes::mean_qwk(aes::self_train(unit.train, unit.dev, pseudo, seed, trainer).predict(unit.dev.features),
                      unit.dev, unit.scale);
    const double k_only = aes::mean_qwk(trainer(unit.train, unit.dev, seed).predict(unit.dev.features), unit.dev,
                                        unit.scale);
    if (augmented >= k_only) ++wins;
  }
  CHECK(wins >= 18);
}

TEST_CASE("uncertainty groups") {
  auto config = fixture::small_config();
  config.train.max_epochs = 5;
  const auto d = fixture::make(config, fixture::corpus(150));
  const auto& unit = d.units.front();
  aes::ModelBundle bundle = aes::train_single(unit, unit.train, config, 4).bundle;
  const int n = int(unit.test.size());

  const auto whole = aes::uncertainty_group_report(bundle, unit.test, unit.scale, n, 10, 1, 4);
  CHECK(whole.top == doctest::Approx(whole.all));
  CHECK(whole.bottom == doctest::Approx(whole.all));
  CHECK_FALSE(whole.zero_variance);

  const auto some = aes::uncertainty_group_report(bundle, unit.test, unit.scale, 16, 10, 1, 4);
  CHECK(some.k == 16);
  CHECK(some.balanced_size <= 16);
  CHECK(some.to_json().at("top_k") == some.top);

  bundle.members.front().config.dropout = 0.0;
  CHECK(aes::uncertainty_group_report(bundle, unit.test, unit.scale, 16, 4, 1, 4).zero_variance);

  CHECK_THROWS_AS(aes::uncertainty_group_report(bundle, unit.test, unit.scale, 0, 4, 1), aes::Error);
  CHECK_THROWS_AS(aes::uncertainty_group_report(bundle, unit.test, unit.scale, n + 1, 4, 1), aes::Error);
}
