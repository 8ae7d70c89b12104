#include "aes/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

namespace aes {

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

const char* mode_name(TrainingMode m) { return m == TrainingMode::stl ? "stl" : "mtl"; }

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::single: return "single";
    case Strategy::five_runs: return "five_runs";
    case Strategy::ensemble: return "ensemble";
  }
  return "single";
}

Strategy parse_strategy(const std::string& s) {
  if (s == "single") return Strategy::single;
  if (s == "five_runs") return Strategy::five_runs;
  if (s == "ensemble") return Strategy::ensemble;
  throw Error("unknown strategy '" + s + "'");
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

StageFlags StageFlags::parse(const std::string& list) {
  StageFlags f;
  for (const auto& item : split_list(list)) {
    if (item == "lora") {
      if (f.ust) f.lora_after_ust = true;
      else f.lora = true;
    } else if (item == "sa") {
      if (f.ust) f.sa_after_ust = true;
      else f.sa = true;
    } else if (item == "ust") {
      f.ust = true;
    } else if (item == "none" || item == "base") {
    } else {
      throw Error("unknown stage '" + item + "' (expected lora, sa, ust)");
    }
  }
  return f;
}

std::string StageFlags::to_string() const {
  std::vector<std::string> parts;
  if (lora) parts.emplace_back("lora");
  if (sa) parts.emplace_back("sa");
  if (ust) parts.emplace_back("ust");
  if (lora_after_ust) parts.emplace_back("lora");
  if (sa_after_ust) parts.emplace_back("sa");
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : ",") + p;
  return out.empty() ? "none" : out;
}

void RunConfig::validate() const {
  if (seeds.empty()) throw Error("config: seed list is empty");
  if ((stages.sa_after_ust || stages.lora_after_ust) && !stages.ust)
    throw Error("config: a stage after UST requires ust");
  if (stages.ust && policy == SplitPolicy::full)
    throw Error("config: ust needs an unlabeled pool; use split policy k_data");
  if (policy == SplitPolicy::k_data && k < 1) throw Error("config: K must be positive");
  if (ensemble_size < 1 || five_runs_count < 1) throw Error("config: strategy member counts must be positive");
  if (mc_passes < 2) throw Error("config: ust.passes must be >= 2");
  if (n_bins < 1 || per_bin < 1) throw Error("config: n_b and n_s must be >= 1");
}

nlohmann::json RunConfig::to_json() const {
  // Defaults overlaid with the configured keys, so a reloaded config serializes (and hashes) the same.
  nlohmann::json enc = RunConfig{}.encoder;
  for (const auto& [key, value] : encoder.items()) enc[key] = value;
  return {{"schema", schema_path.string()},
          {"corpus", corpus_path.string()},
          {"mode", mode_name(mode)},
          {"split", {{"policy", policy == SplitPolicy::full ? "full" : "k_data"}, {"k", k}}},
          {"seeds", seeds},
          {"stages", stages.to_string()},
          {"strategy", strategy_name(strategy)},
          {"ensemble_size", ensemble_size},
          {"five_runs_count", five_runs_count},
          {"loss", {{"alpha_overall", alpha_overall}, {"alpha_trait", alpha_trait}}},
          {"model", {{"trunk_dim", model.trunk_dim}, {"head_dim", model.head_dim}, {"dropout", model.dropout}}},
          {"train", train.to_json()},
          {"encoder", enc},
          {"adapter", adapter.to_json()},
          {"alignment", {{"p", sa_p}, {"mode", sa_mode == SubsetMode::independent ? "independent" : "index_matched"}}},
          {"ust",
           {{"passes", mc_passes},
            {"n_bins", n_bins},
            {"per_bin", per_bin},
            {"binning_trait", binning_trait},
            {"diagnostic", uncertainty_diagnostic},
            {"diagnostic_k", diagnostic_k}}}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    c.schema_path = j.value("schema", std::string{});
    c.corpus_path = j.value("corpus", std::string{});
    const std::string mode = j.value("mode", std::string("stl"));
    if (mode != "stl" && mode != "mtl") throw Error("config: mode must be stl or mtl");
    c.mode = mode == "stl" ? TrainingMode::stl : TrainingMode::mtl;
    if (j.contains("split")) {
      const std::string policy = j["split"].value("policy", std::string("full"));
      if (policy != "full" && policy != "k_data") throw Error("config: split policy must be full or k_data");
      c.policy = policy == "full" ? SplitPolicy::full : SplitPolicy::k_data;
      c.k = j["split"].value("k", c.k);
    }
    c.seeds = j.value("seeds", c.seeds);
    c.stages = StageFlags::parse(j.value("stages", std::string("none")));
    c.strategy = parse_strategy(j.value("strategy", std::string("single")));
    c.ensemble_size = j.value("ensemble_size", c.ensemble_size);
    c.five_runs_count = j.value("five_runs_count", c.five_runs_count);
    if (j.contains("loss")) {
      c.alpha_overall = j["loss"].value("alpha_overall", c.alpha_overall);
      c.alpha_trait = j["loss"].value("alpha_trait", c.alpha_trait);
    }
    if (j.contains("model")) {
      c.model.trunk_dim = j["model"].value("trunk_dim", c.model.trunk_dim);
      c.model.head_dim = j["model"].value("head_dim", c.model.head_dim);
      c.model.dropout = j["model"].value("dropout", c.model.dropout);
    }
    if (j.contains("train")) c.train = TrainConfig::from_json(j["train"]);
    if (j.contains("encoder")) {
      for (const auto& [key, value] : j["encoder"].items()) c.encoder[key] = value;
    }
    if (j.contains("adapter")) c.adapter = AdapterConfig::from_json(j["adapter"]);
    if (j.contains("alignment")) {
      c.sa_p = j["alignment"].value("p", c.sa_p);
      const std::string m = j["alignment"].value("mode", std::string("independent"));
      if (m != "independent" && m != "index_matched") throw Error("config: alignment.mode must be independent or index_matched");
      c.sa_mode = m == "independent" ? SubsetMode::independent : SubsetMode::index_matched;
    }
    if (j.contains("ust")) {
      const auto& u = j["ust"];
      c.mc_passes = u.value("passes", c.mc_passes);
      c.n_bins = u.value("n_bins", c.n_bins);
      c.per_bin = u.value("per_bin", c.per_bin);
      c.binning_trait = u.value("binning_trait", c.binning_trait);
      c.uncertainty_diagnostic = u.value("diagnostic", c.uncertainty_diagnostic);
      c.diagnostic_k = u.value("diagnostic_k", c.diagnostic_k);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("config " + path.string() + ": " + e.what());
  }
  RunConfig c = from_json(j);
  const auto base = path.parent_path();
  if (!c.schema_path.empty() && c.schema_path.is_relative()) c.schema_path = base / c.schema_path;
  if (!c.corpus_path.empty() && c.corpus_path.is_relative()) c.corpus_path = base / c.corpus_path;
  return c;
}

std::string RunConfig::hash() const {
  nlohmann::json j = to_json();
  j.erase("schema");
  j.erase("corpus");
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

std::size_t worker_count() {
  if (const char* env = std::getenv("AES_WORKERS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

/// Runs jobs [0, n) on a bounded pool; the first exception (by job index) is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& job) {
  const std::size_t workers = std::min(n, worker_count());
  std::vector<std::exception_ptr> errors(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            job(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

TrainingSet gather(const std::vector<std::string>& ids, const std::map<std::string, std::size_t>& column,
                   const Corpus& corpus, const Eigen::MatrixXd& features, const ScoreSchema& schema,
                   const UnitData& unit, bool with_targets) {
  const auto n_traits = static_cast<Eigen::Index>(unit.scale.traits.size());
  const Eigen::Index extra = unit.prompts.size() > 1 ? static_cast<Eigen::Index>(unit.prompts.size()) : 0;
  std::vector<std::size_t> cols;
  for (const auto& id : ids) {
    const Essay& e = corpus[column.at(id)];
    if (std::find(unit.prompts.begin(), unit.prompts.end(), e.prompt_id) != unit.prompts.end())
      cols.push_back(column.at(id));
  }
  TrainingSet s;
  const auto n = static_cast<Eigen::Index>(cols.size());
  s.features.resize(features.rows() + extra, n);
  s.targets = Eigen::MatrixXd::Zero(n_traits, n);
  s.mask = Eigen::MatrixXd::Zero(n_traits, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Essay& e = corpus[cols[static_cast<std::size_t>(j)]];
    const auto g = static_cast<std::size_t>(
        std::find(unit.prompts.begin(), unit.prompts.end(), e.prompt_id) - unit.prompts.begin());
    s.ids.push_back(e.essay_id);
    s.group.push_back(g);
    s.features.col(j).head(features.rows()) = features.col(static_cast<Eigen::Index>(cols[static_cast<std::size_t>(j)]));
    if (extra > 0) {
      s.features.col(j).tail(extra).setZero();
      s.features(features.rows() + static_cast<Eigen::Index>(g), j) = 1.0;
    }
    if (!with_targets) continue;
    if (!e.labeled()) throw Error("essay " + e.essay_id + " is in a labeled partition but has no gold scores");
    const NormalizedScores norm = normalize(e, schema);
    for (Eigen::Index t = 0; t < n_traits; ++t) {
      const auto it = norm.find(unit.scale.traits[static_cast<std::size_t>(t)]);
      if (it == norm.end()) continue;
      s.targets(t, j) = it->second;
      s.mask(t, j) = 1.0;
    }
  }
  return s;
}

}  // namespace

std::vector<UnitData> build_units(const RunConfig& config, const ScoreSchema& schema, const Corpus& corpus,
                                  const Eigen::MatrixXd& features, const std::vector<FeatureBlock>& blocks,
                                  const DatasetSplit& split) {
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < corpus.size(); ++i) column[corpus[i].essay_id] = i;

  std::vector<std::vector<std::string>> groups;
  std::vector<std::string> present;
  for (const auto& p : schema.prompts())
    if (std::any_of(corpus.begin(), corpus.end(), [&](const Essay& e) { return e.prompt_id == p.prompt_id; }))
      present.push_back(p.prompt_id);
  if (config.mode == TrainingMode::stl) {
    for (const auto& p : present) groups.push_back({p});
  } else {
    groups.push_back(present);
  }

  std::vector<UnitData> units;
  for (const auto& prompts : groups) {
    UnitData u;
    u.prompts = prompts;
    std::vector<std::string> traits;
    for (const auto& p : prompts)
      for (const auto& t : schema.prompt(p).traits)
        if (std::find(traits.begin(), traits.end(), t) == traits.end()) traits.push_back(t);
    u.scale = ScoreScale::from_schema(schema, prompts, traits);
    u.blocks = blocks;
    if (prompts.size() > 1)
      u.blocks.push_back({static_cast<std::size_t>(features.rows()), prompts.size(), BlockScaling::identity});
    u.train = gather(split.train, column, corpus, features, schema, u, true);
    u.dev = gather(split.dev, column, corpus, features, schema, u, true);
    u.test = gather(split.test, column, corpus, features, schema, u, true);
    u.unlabeled = gather(split.unlabeled, column, corpus, features, schema, u, false);
    if (u.train.size() == 0 || u.dev.size() == 0 || u.test.size() == 0)
      throw Error("prompt(s) " + prompts.front() + ": split leaves an empty train/dev/test partition");
    units.push_back(std::move(u));
  }
  return units;
}

StrategyResult train_single(const UnitData& unit, const TrainingSet& train_set, const RunConfig& config,
                            std::uint64_t seed) {
  ModelConfig mc = config.model;
  mc.traits = unit.scale.traits;
  Model m = make_model(mc, train_set, unit.blocks, seed);
  TrainConfig tc = config.train;
  tc.seed = seed;
  const TrainResult tr = train(m, train_set, unit.dev,
                               unit.scale, LossWeights::uniform(mc.traits, config.alpha_overall, config.alpha_trait), tc);
  StrategyResult r;
  r.bundle.members.push_back(std::move(m));
  r.selection = {{"strategy", "single"},
                 {"dev_qwk", tr.best_dev_qwk},
                 {"best_epoch", tr.best_epoch},
                 {"epochs", tr.log.size()}};
  return r;
}

StrategyResult train_best_of(const UnitData& unit, const TrainingSet& train_set, const RunConfig& config,
                             const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw Error("five-runs: no member seeds");
  StrategyResult best;
  double best_qwk = 0.0;
  nlohmann::json members = nlohmann::json::array();
  std::size_t winner = 0;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    StrategyResult r = train_single(unit, train_set, config, seeds[i]);
    const double q = r.selection.at("dev_qwk").get<double>();
    members.push_back({{"seed", seeds[i]}, {"dev_qwk", q}});
    if (i == 0 || q > best_qwk) {
      best_qwk = q;
      winner = i;
      best = std::move(r);
    }
  }
  best.selection = {{"strategy", "five_runs"}, {"members", members}, {"winner", winner}, {"dev_qwk", best_qwk}};
  return best;
}

StrategyResult train_bagged(const UnitData& unit, const TrainingSet& train_set, const RunConfig& config,
                            const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw Error("ensemble: no member seeds");
  StrategyResult out;
  nlohmann::json members = nlohmann::json::array();
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    Rng rng(derive_seed(seeds[i], 0xB007));
    std::vector<std::size_t> sample(train_set.size());
    for (auto& s : sample) s = rng.below(train_set.size());
    StrategyResult r = train_single(unit, train_set.subset(sample), config, seeds[i]);
    members.push_back({{"seed", seeds[i]}, {"dev_qwk", r.selection.at("dev_qwk")}});
    out.bundle.members.push_back(std::move(r.bundle.members.front()));
  }
  const double dev_qwk = mean_qwk(out.bundle.predict(unit.dev.features), unit.dev, unit.scale);
  out.selection = {{"strategy", "ensemble"}, {"members", members}, {"dev_qwk", dev_qwk}};
  return out;
}

StrategyResult train_strategy(const UnitData& unit, const TrainingSet& train_set, const RunConfig& config,
                              std::uint64_t seed) {
  switch (config.strategy) {
    case Strategy::single:
      return train_single(unit, train_set, config, seed);
    case Strategy::five_runs: {
      std::vector<std::uint64_t> seeds;
      for (int i = 0; i < config.five_runs_count; ++i) seeds.push_back(derive_seed(seed, 0xF00 + std::uint64_t(i)));
      return train_best_of(unit, train_set, config, seeds);
    }
    case Strategy::ensemble: {
      std::vector<std::uint64_t> seeds;
      for (int i = 0; i < config.ensemble_size; ++i) seeds.push_back(derive_seed(seed, 0xE00 + std::uint64_t(i)));
      return train_bagged(unit, train_set, config, seeds);
    }
  }
  throw Error("unknown strategy");
}

Eigen::MatrixXd align_predictions(const UnitData& unit, const Eigen::MatrixXd& dev_pred, const TrainingSet& target,
                                  const Eigen::MatrixXd& target_pred, const RunConfig& config, nlohmann::json* audit) {
  Eigen::MatrixXd out = target_pred;
  for (std::size_t g = 0; g < unit.prompts.size(); ++g) {
    for (std::size_t t = 0; t < unit.scale.traits.size(); ++t) {
      if (!unit.scale.ranges[g][t]) continue;
      const auto r = static_cast<Eigen::Index>(t);
      std::vector<double> gold, dpred, tpred;
      std::vector<Eigen::Index> tcols;
      for (std::size_t i = 0; i < unit.dev.size(); ++i) {
        const auto c = static_cast<Eigen::Index>(i);
        if (unit.dev.group[i] != g || unit.dev.mask(r, c) == 0.0) continue;
        gold.push_back(unit.dev.targets(r, c));
        dpred.push_back(dev_pred(r, c));
      }
      for (std::size_t i = 0; i < target.size(); ++i) {
        if (target.group[i] != g) continue;
        tcols.push_back(static_cast<Eigen::Index>(i));
        tpred.push_back(target_pred(r, static_cast<Eigen::Index>(i)));
      }
      if (gold.empty() || tpred.empty()) continue;
      const AlignmentParams params = fit_alignment(gold, dpred, tpred, config.sa_p, config.sa_mode);
      const std::vector<double> aligned = apply_alignment(tpred, params);
      for (std::size_t k = 0; k < tcols.size(); ++k) out(r, tcols[k]) = aligned[k];
      if (audit) {
        nlohmann::json entry = params.to_json();
        entry["prompt"] = unit.prompts[g];
        entry["trait"] = unit.scale.traits[t];
        if (params.inverted()) entry["warning"] = "calibration inversion: b < a reverses prediction order";
        audit->push_back(std::move(entry));
      }
    }
  }
  return out;
}

ModelBundle run_lora(const UnitData& unit, const ModelBundle& model, const RunConfig& config, std::uint64_t seed,
                     nlohmann::json* log) {
  ModelBundle out = model;
  for (std::size_t i = 0; i < out.members.size(); ++i) {
    TrainConfig tc = config.train;
    tc.seed = derive_seed(seed, i);
    const SweepResult sweep =
        two_stage_finetune(model.members[i], unit.train, unit.dev, unit.scale, config.adapter, tc);
    if (sweep.improves_on_base) apply_adapters(out.members[i], sweep.best);
    if (log) {
      nlohmann::json targets = nlohmann::json::array();
      for (const auto& e : sweep.log)
        targets.push_back({{"target", e.target}, {"dev_qwk", e.dev_qwk}, {"best_epoch", e.best_epoch}, {"epochs", e.epochs}});
      log->push_back({{"member", i},
                      {"base_dev_qwk", sweep.base_dev_qwk},
                      {"sweep", targets},
                      {"best_target", sweep.best.target},
                      {"deployed", sweep.improves_on_base ? sweep.best.target : std::string("base")}});
    }
  }
  return out;
}

UstOutcome run_ust(const UnitData& unit, const ModelBundle& model, bool align_first, const RunConfig& config,
                   std::uint64_t seed) {
  if (unit.unlabeled.size() == 0) throw Error("UST: the unlabeled pool is empty");
  auto records = estimate_uncertainty(model, unit.unlabeled.features, unit.unlabeled.ids, config.mc_passes,
                                      derive_seed(seed, 1));
  UstOutcome out;
  out.provenance = {{"passes", config.mc_passes}, {"aligned_before_selection", align_first}, {"pseudo_label_events", 1}};
  if (align_first) {
    Eigen::MatrixXd means(static_cast<Eigen::Index>(unit.scale.traits.size()), static_cast<Eigen::Index>(records.size()));
    for (std::size_t i = 0; i < records.size(); ++i) means.col(static_cast<Eigen::Index>(i)) = records[i].mean;
    nlohmann::json audit = nlohmann::json::array();
    const Eigen::MatrixXd aligned =
        align_predictions(unit, model.predict(unit.dev.features), unit.unlabeled, means, config, &audit);
    for (std::size_t i = 0; i < records.size(); ++i) records[i].mean = aligned.col(static_cast<Eigen::Index>(i));
    out.provenance["alignment"] = audit;
  }

  const auto trait_it = std::find(unit.scale.traits.begin(), unit.scale.traits.end(), config.binning_trait);
  if (trait_it == unit.scale.traits.end()) throw Error("UST: unknown binning trait " + config.binning_trait);
  const auto binning = static_cast<std::size_t>(trait_it - unit.scale.traits.begin());

  std::vector<std::string> ids;
  std::vector<Eigen::VectorXd> scores;
  nlohmann::json selection = nlohmann::json::array();
  for (std::size_t g = 0; g < unit.prompts.size(); ++g) {
    std::vector<UncertaintyRecord> group;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (unit.unlabeled.group[i] == g) group.push_back(records[i]);
    if (group.empty()) continue;
    const PseudoLabeledSet sel = select_balanced(group, config.n_bins, config.per_bin, binning);
    for (std::size_t i = 0; i < sel.size(); ++i) {
      ids.push_back(sel.ids[i]);
      scores.push_back(sel.scores.col(static_cast<Eigen::Index>(i)));
    }
    nlohmann::json entry = sel.provenance;
    entry["prompt"] = unit.prompts[g];
    entry["bin_selected"] = sel.bin_selected;
    entry["bin_sizes"] = sel.bin_sizes;
    selection.push_back(std::move(entry));
  }
  out.provenance["selection"] = selection;

  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < unit.unlabeled.size(); ++i) pos[unit.unlabeled.ids[i]] = i;
  std::vector<std::size_t> cols;
  for (const auto& id : ids) cols.push_back(pos.at(id));
  out.pseudo = unit.unlabeled.subset(cols);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    const std::size_t g = out.pseudo.group[i];
    for (std::size_t t = 0; t < unit.scale.traits.size(); ++t) {
      if (!unit.scale.ranges[g][t]) continue;
      out.pseudo.targets(static_cast<Eigen::Index>(t), c) = scores[i](static_cast<Eigen::Index>(t));
      out.pseudo.mask(static_cast<Eigen::Index>(t), c) = 1.0;
    }
  }
  out.provenance["pseudo_labels"] = out.pseudo.size();
  out.provenance["augmented_train_size"] = unit.train.size() + out.pseudo.size();

  nlohmann::json retrain;
  out.bundle = self_train(unit.train, unit.dev, out.pseudo, derive_seed(seed, 2),
                          [&](const TrainingSet& augmented, const TrainingSet&, std::uint64_t s) {
                            StrategyResult r = train_strategy(unit, augmented, config, s);
                            retrain = r.selection;
                            return r.bundle;
                          });
  out.provenance["retrain_selection"] = retrain;
  return out;
}

nlohmann::json RunReport::to_json() const {
  nlohmann::json agg = nlohmann::json::object();
  for (const auto& row : rows) {
    const QwkReport& r = aggregate.at(row);
    nlohmann::json j = r.to_json();
    j["per_trait"] = r.per_trait_average();
    j["per_trait_sd"] = r.per_trait_sd();
    j["per_prompt"] = r.per_prompt_average();
    j["grand_average"] = r.grand_average();
    agg[row] = std::move(j);
  }
  nlohmann::json runs = nlohmann::json::array();
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    nlohmann::json rj = nlohmann::json::object();
    for (const auto& row : rows) rj[row] = per_seed[i].at(row).to_json();
    runs.push_back({{"seed", seeds[i]}, {"rows", rj}, {"provenance", provenance[i]}});
  }
  return {{"kind", kind},  {"config_hash", config_hash}, {"config", config},
          {"rows", rows},  {"aggregate", agg},           {"runs", runs}};
}

namespace {

using RowReports = std::map<std::string, QwkReport>;

struct UnitOutcome {
  RowReports rows;
  nlohmann::json provenance;
};

void merge_rows(RowReports& into, const RowReports& from) {
  for (const auto& [row, rep] : from) {
    auto& dst = into[row];
    for (const auto& [cell, v] : rep.kappa) {
      dst.kappa[cell] = v;
      dst.sd[cell] = 0.0;
    }
  }
}

UnitOutcome run_unit(const UnitData& unit, const RunConfig& config, std::uint64_t unit_seed) {
  UnitOutcome out;
  out.provenance["prompts"] = unit.prompts;
  out.provenance["sizes"] = {{"train", unit.train.size()},
                             {"dev", unit.dev.size()},
                             {"test", unit.test.size()},
                             {"unlabeled", unit.unlabeled.size()}};
  StrategyResult base = train_strategy(unit, unit.train, config, derive_seed(unit_seed, 1));
  out.provenance["base_selection"] = base.selection;
  ModelBundle current = std::move(base.bundle);
  Eigen::MatrixXd pred = current.predict(unit.test.features);
  out.rows["base"] = evaluate_qwk(pred, unit.test, unit.scale);

  if (config.stages.lora) {
    nlohmann::json log = nlohmann::json::array();
    current = run_lora(unit, current, config, derive_seed(unit_seed, 2), &log);
    out.provenance["lora"] = log;
    pred = current.predict(unit.test.features);
    out.rows["lora"] = evaluate_qwk(pred, unit.test, unit.scale);
  }
  if (config.stages.sa) {
    nlohmann::json audit = nlohmann::json::array();
    const Eigen::MatrixXd aligned =
        align_predictions(unit, current.predict(unit.dev.features), unit.test, pred, config, &audit);
    out.provenance["alignment_sa"] = audit;
    out.rows["sa"] = evaluate_qwk(aligned, unit.test, unit.scale);
  }
  if (config.stages.ust) {
    if (config.uncertainty_diagnostic) {
      const int k = std::min<int>(config.diagnostic_k, static_cast<int>(unit.test.size()));
      out.provenance["uncertainty_groups"] =
          uncertainty_group_report(current, unit.test, unit.scale, k, config.mc_passes, derive_seed(unit_seed, 5),
                                   config.n_bins)
              .to_json();
    }
    UstOutcome ust = run_ust(unit, current, config.stages.sa, config, derive_seed(unit_seed, 3));
    out.provenance["ust"] = ust.provenance;
    current = std::move(ust.bundle);
    if (config.stages.lora_after_ust) {
      nlohmann::json log = nlohmann::json::array();
      current = run_lora(unit, current, config, derive_seed(unit_seed, 4), &log);
      out.provenance["lora_after_ust"] = log;
    }
    pred = current.predict(unit.test.features);
    out.rows["ust"] = evaluate_qwk(pred, unit.test, unit.scale);
  }
  if (config.stages.sa_after_ust) {
    nlohmann::json audit = nlohmann::json::array();
    const Eigen::MatrixXd aligned =
        align_predictions(unit, current.predict(unit.dev.features), unit.test, pred, config, &audit);
    out.provenance["alignment_sa_after_ust"] = audit;
    out.rows["sa_after_ust"] = evaluate_qwk(aligned, unit.test, unit.scale);
  }
  return out;
}

UnitOutcome ablation_unit(const UnitData& unit, const RunConfig& config, std::uint64_t unit_seed) {
  UnitOutcome out;
  out.provenance["prompts"] = unit.prompts;
  StrategyResult base = train_strategy(unit, unit.train, config, derive_seed(unit_seed, 1));
  out.provenance["base_selection"] = base.selection;
  const ModelBundle& b0 = base.bundle;
  const Eigen::MatrixXd p0 = b0.predict(unit.test.features);
  out.rows["base"] = evaluate_qwk(p0, unit.test, unit.scale);

  nlohmann::json lora_log = nlohmann::json::array();
  const ModelBundle b1 = run_lora(unit, b0, config, derive_seed(unit_seed, 2), &lora_log);
  out.provenance["lora"] = lora_log;
  out.rows["+LoRA"] = evaluate_qwk(b1.predict(unit.test.features), unit.test, unit.scale);

  nlohmann::json audit = nlohmann::json::array();
  out.rows["+SA"] = evaluate_qwk(align_predictions(unit, b0.predict(unit.dev.features), unit.test, p0, config, &audit),
                                 unit.test, unit.scale);
  out.provenance["alignment_sa"] = audit;

  const UstOutcome ust_only = run_ust(unit, b0, false, config, derive_seed(unit_seed, 3));
  out.provenance["ust"] = ust_only.provenance;
  out.rows["+UST"] = evaluate_qwk(ust_only.bundle.predict(unit.test.features), unit.test, unit.scale);

  const UstOutcome full = run_ust(unit, b1, true, config, derive_seed(unit_seed, 3));
  out.provenance["ust_full"] = full.provenance;
  nlohmann::json audit2 = nlohmann::json::array();
  const Eigen::MatrixXd p3 = full.bundle.predict(unit.test.features);
  out.rows["+LoRA+SA+UST"] = evaluate_qwk(
      align_predictions(unit, full.bundle.predict(unit.dev.features), unit.test, p3, config, &audit2), unit.test,
      unit.scale);
  out.provenance["alignment_full"] = audit2;
  return out;
}

using UnitRunner = std::function<UnitOutcome(const UnitData&, const RunConfig&, std::uint64_t)>;

RunReport execute(const RunConfig& config, const ScoreSchema& schema, const Corpus& corpus,
                  const std::vector<std::string>& rows, const std::string& kind, const UnitRunner& runner) {
  config.validate();
  for (const auto& e : corpus)
    if (!schema.has_prompt(e.prompt_id)) throw Error("essay " + e.essay_id + " has unknown prompt " + e.prompt_id);
  const auto encoder = make_encoder(config.encoder);
  std::vector<std::string> texts;
  for (const auto& e : corpus) texts.push_back(e.text);
  const Eigen::MatrixXd features = encode_all(*encoder, texts);

  struct Job {
    std::size_t seed_index;
    std::size_t unit_index;
  };
  std::vector<std::vector<UnitData>> units;
  std::vector<DatasetSplit> splits;
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < config.seeds.size(); ++s) {
    DatasetSplit split = full_split(corpus, config.seeds[s]);
    if (config.policy == SplitPolicy::k_data) split = k_split(corpus, config.seeds[s], config.k, split.test);
    units.push_back(build_units(config, schema, corpus, features, encoder->blocks(), split));
    splits.push_back(std::move(split));
    for (std::size_t u = 0; u < units.back().size(); ++u) jobs.push_back({s, u});
  }

  std::vector<UnitOutcome> outcomes(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    const Job& job = jobs[j];
    outcomes[j] = runner(units[job.seed_index][job.unit_index], config,
                         derive_seed(config.seeds[job.seed_index], job.unit_index + 1));
  });

  RunReport report;
  report.kind = kind;
  report.config = config.to_json();
  report.config_hash = config.hash();
  report.seeds = config.seeds;
  report.per_seed.resize(config.seeds.size());
  report.provenance.resize(config.seeds.size());
  for (std::size_t s = 0; s < config.seeds.size(); ++s) {
    report.provenance[s] = {{"split",
                             {{"train", splits[s].train.size()},
                              {"dev", splits[s].dev.size()},
                              {"test", splits[s].test.size()},
                              {"unlabeled", splits[s].unlabeled.size()},
                              {"strata", splits[s].provenance}}},
                            {"units", nlohmann::json::array()}};
  }
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    merge_rows(report.per_seed[jobs[j].seed_index], outcomes[j].rows);
    report.provenance[jobs[j].seed_index]["units"].push_back(outcomes[j].provenance);
  }
  for (const auto& row : rows) {
    if (!report.per_seed.front().count(row)) continue;
    report.rows.push_back(row);
    std::vector<QwkReport> per;
    for (const auto& ps : report.per_seed) per.push_back(ps.at(row));
    report.aggregate[row] = aes::aggregate(per);
  }
  return report;
}

}  // namespace

RunReport run(const RunConfig& config, const ScoreSchema& schema, const Corpus& corpus) {
  return execute(config, schema, corpus, {"base", "lora", "sa", "ust", "sa_after_ust"}, "run", run_unit);
}

RunReport run(const RunConfig& config) {
  config.validate();
  const ScoreSchema schema = ScoreSchema::load(config.schema_path);
  const Corpus corpus = ingest(config.corpus_path, schema);
  return run(config, schema, corpus);
}

RunReport five_runs(RunConfig config, const ScoreSchema& schema, const Corpus& corpus) {
  config.strategy = Strategy::five_runs;
  return run(config, schema, corpus);
}

RunReport ensemble(RunConfig config, const ScoreSchema& schema, const Corpus& corpus) {
  config.strategy = Strategy::ensemble;
  return run(config, schema, corpus);
}

RunReport ablation(const RunConfig& config, const ScoreSchema& schema, const Corpus& corpus) {
  RunConfig c = config;
  c.stages = StageFlags::parse("lora,sa,ust,sa");
  return execute(c, schema, corpus, {"base", "+LoRA", "+SA", "+UST", "+LoRA+SA+UST"}, "ablation", ablation_unit);
}

}  // namespace aes
