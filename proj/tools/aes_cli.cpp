// Command-line front end for the essay scoring pipeline.
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "aes/pipeline.hpp"
#include "aes/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_commas(s)) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw aes::Error("invalid seed '" + item + "'");
    out.push_back(v);
  }
  return out;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw aes::Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw aes::Error(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw aes::Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Options shared by every subcommand that works on one training unit.
struct UnitOptions {
  std::string config;
  std::string schema;
  std::string corpus;
  std::string split;
  std::string prompt;
  std::string mode;

  void add(CLI::App* app, bool need_split = true) {
    app->add_option("--config", config, "Run configuration (JSON)")->check(CLI::ExistingFile);
    app->add_option("--schema", schema, "Score schema (JSON); overrides the config")->check(CLI::ExistingFile);
    app->add_option("--corpus", corpus, "Corpus TSV; overrides the config")->check(CLI::ExistingFile);
    if (need_split) app->add_option("--split", split, "Split file from `split`")->required()->check(CLI::ExistingFile);
    app->add_option("--prompt", prompt, "Prompt id of the unit (STL mode)");
    app->add_option("--mode", mode, "stl or mtl; overrides the config");
  }
};

struct Context {
  aes::RunConfig config;
  aes::ScoreSchema schema;
  aes::Corpus corpus;
  aes::DatasetSplit split;
  aes::UnitData unit;
};

aes::RunConfig load_config(const std::string& path) {
  return path.empty() ? aes::RunConfig{} : aes::RunConfig::load(path);
}

Context load_unit(const UnitOptions& o) {
  Context c;
  c.config = load_config(o.config);
  if (!o.schema.empty()) c.config.schema_path = o.schema;
  if (!o.corpus.empty()) c.config.corpus_path = o.corpus;
  if (!o.mode.empty()) c.config.mode = aes::RunConfig::from_json({{"mode", o.mode}}).mode;
  if (c.config.schema_path.empty() || c.config.corpus_path.empty())
    throw aes::Error("a schema and a corpus are required (via --config or --schema/--corpus)");
  c.schema = aes::ScoreSchema::load(c.config.schema_path);
  c.corpus = aes::ingest(c.config.corpus_path, c.schema);
  c.split = aes::DatasetSplit::from_json(read_json(o.split));
  const auto encoder = aes::make_encoder(c.config.encoder);
  std::vector<std::string> texts;
  for (const auto& e : c.corpus) texts.push_back(e.text);
  auto units =
      aes::build_units(c.config, c.schema, c.corpus, aes::encode_all(*encoder, texts), encoder->blocks(), c.split);
  if (c.config.mode == aes::TrainingMode::mtl) {
    c.unit = std::move(units.front());
    return c;
  }
  if (o.prompt.empty()) {
    if (units.size() != 1) throw aes::Error("--prompt is required when the corpus has several prompts");
    c.unit = std::move(units.front());
    return c;
  }
  for (auto& u : units)
    if (u.prompts.front() == o.prompt) {
      c.unit = std::move(u);
      return c;
    }
  throw aes::Error("prompt " + o.prompt + " has no essays in this corpus");
}

void save_bundle(const fs::path& path, const aes::ModelBundle& bundle, const Context& c, const json& extra) {
  json members = json::array();
  for (const auto& m : bundle.members) members.push_back(aes::model_to_json(m));
  write_json(path, {{"format", "aes-bundle"},
                    {"version", 1},
                    {"prompts", c.unit.prompts},
                    {"config_hash", c.config.hash()},
                    {"members", members},
                    {"extra", extra}});
}

aes::ModelBundle load_bundle(const fs::path& path, const Context& c) {
  const json j = read_json(path);
  aes::ModelBundle b;
  if (j.value("format", std::string{}) == "aes-model") {
    b.members.push_back(aes::model_from_json(j));
  } else {
    if (j.value("format", std::string{}) != "aes-bundle") throw aes::Error(path.string() + ": not a model checkpoint");
    if (j.at("prompts").get<std::vector<std::string>>() != c.unit.prompts)
      throw aes::Error(path.string() + ": checkpoint was trained for different prompts");
    for (const auto& m : j.at("members")) b.members.push_back(aes::model_from_json(m));
  }
  if (b.members.empty()) throw aes::Error(path.string() + ": checkpoint has no models");
  if (b.traits() != c.unit.scale.traits) throw aes::Error(path.string() + ": checkpoint traits do not match the unit");
  return b;
}

const aes::TrainingSet& partition(const Context& c, const std::string& name) {
  if (name == "train") return c.unit.train;
  if (name == "dev") return c.unit.dev;
  if (name == "test") return c.unit.test;
  throw aes::Error("unknown partition '" + name + "' (expected train, dev, test)");
}

double denormalize(double v, const aes::ScoreRange& r) { return r.min_score + v * (r.max_score - r.min_score); }

void write_scores(const fs::path& path, const aes::TrainingSet& set, const Eigen::MatrixXd& scores, const Context& c,
                  const std::string& provenance) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw aes::Error("cannot write " + path.string());
  out << "essay_id\tprompt_id";
  for (const auto& t : c.unit.scale.traits) out << '\t' << t;
  out << "\tprovenance\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    out << set.ids[i] << '\t' << c.unit.prompts[set.group[i]];
    for (std::size_t t = 0; t < c.unit.scale.traits.size(); ++t) {
      out << '\t';
      const auto& r = c.unit.scale.ranges[set.group[i]][t];
      if (r) out << json(denormalize(scores(Eigen::Index(t), Eigen::Index(i)), *r)).dump();
    }
    out << '\t' << provenance << '\n';
  }
}

void print_report(const aes::QwkReport& r, const std::string& title) {
  std::cout << title << '\n';
  for (const auto& [cell, v] : r.kappa) std::cout << "  " << cell.first << '\t' << cell.second << '\t' << v << '\n';
  std::cout << "  mean\t" << r.grand_average() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-trait automated essay scoring: training, adaptation, alignment and self-training"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus and schema");
  aes::SyntheticConfig synth_cfg;
  std::string synth_out;
  synth->add_option("--out-dir", synth_out, "Output directory")->required();
  synth->add_option("--prompts", synth_cfg.prompts, "Number of prompts");
  synth->add_option("--essays", synth_cfg.essays_per_prompt, "Essays per prompt");
  synth->add_option("--seed", synth_cfg.seed, "Generator seed");
  synth->add_option("--label-noise", synth_cfg.label_noise, "Base label noise SD (normalized units)");
  synth->add_option("--heteroscedastic", synth_cfg.heteroscedastic, "Extra noise SD scaled by a per-essay latent");

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate a corpus against a schema");
  std::string ing_schema, ing_corpus, ing_out;
  ingest_cmd->add_option("--schema", ing_schema, "Score schema (JSON)")->required()->check(CLI::ExistingFile);
  ingest_cmd->add_option("--corpus", ing_corpus, "Corpus TSV")->required()->check(CLI::ExistingFile);
  ingest_cmd->add_option("--out", ing_out, "Write normalized scores as JSON");

  // split
  auto* split_cmd = app.add_subcommand("split", "Partition a corpus into train/dev/test/unlabeled");
  std::string sp_schema, sp_corpus, sp_out, sp_policy = "full";
  std::uint64_t sp_seed = 1;
  int sp_k = 32;
  split_cmd->add_option("--schema", sp_schema, "Score schema (JSON)")->required()->check(CLI::ExistingFile);
  split_cmd->add_option("--corpus", sp_corpus, "Corpus TSV")->required()->check(CLI::ExistingFile);
  split_cmd->add_option("--seed", sp_seed, "Split seed");
  split_cmd->add_option("--policy", sp_policy, "full or k_data")->check(CLI::IsMember({"full", "k_data"}));
  split_cmd->add_option("--k", sp_k, "Labeled essays per prompt for train and for dev (k_data)");
  split_cmd->add_option("--out", sp_out, "Output split file")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a base model (or strategy bundle) for one unit");
  UnitOptions train_opt;
  train_opt.add(train_cmd);
  std::uint64_t train_seed = 1;
  std::string train_out, train_strategy;
  train_cmd->add_option("--seed", train_seed, "Training seed");
  train_cmd->add_option("--strategy", train_strategy, "single, five_runs or ensemble");
  train_cmd->add_option("--out", train_out, "Checkpoint path")->required();

  // adapt
  auto* adapt_cmd = app.add_subcommand("adapt", "Two-stage low-rank adapter fine-tuning");
  UnitOptions adapt_opt;
  adapt_opt.add(adapt_cmd);
  std::string adapt_model, adapt_out;
  std::uint64_t adapt_seed = 1;
  adapt_cmd->add_option("--model", adapt_model, "Base checkpoint")->required()->check(CLI::ExistingFile);
  adapt_cmd->add_option("--seed", adapt_seed, "Adapter seed");
  adapt_cmd->add_option("--out", adapt_out, "Adapted checkpoint path")->required();

  // align
  auto* align_cmd = app.add_subcommand("align", "Score alignment of test predictions using the dev set");
  UnitOptions align_opt;
  align_opt.add(align_cmd);
  std::string align_model, align_out;
  align_cmd->add_option("--model", align_model, "Checkpoint")->required()->check(CLI::ExistingFile);
  align_cmd->add_option("--out", align_out, "Write aligned test scores (TSV)");

  // ust
  auto* ust_cmd = app.add_subcommand("ust", "Uncertainty-aware self-training from a trained checkpoint");
  UnitOptions ust_opt;
  ust_opt.add(ust_cmd);
  std::string ust_model, ust_out, ust_pseudo;
  std::uint64_t ust_seed = 1;
  bool ust_align = false;
  ust_cmd->add_option("--model", ust_model, "Teacher checkpoint")->required()->check(CLI::ExistingFile);
  ust_cmd->add_option("--seed", ust_seed, "Seed for MC passes and retraining");
  ust_cmd->add_flag("--align", ust_align, "Align the MC means before selection");
  ust_cmd->add_option("--out", ust_out, "Retrained checkpoint path")->required();
  ust_cmd->add_option("--pseudo-out", ust_pseudo, "Write the pseudo-labeled set (TSV)");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "QWK of a checkpoint on one partition");
  UnitOptions eval_opt;
  eval_opt.add(eval_cmd);
  std::string eval_model, eval_partition = "test";
  eval_cmd->add_option("--model", eval_model, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--partition", eval_partition, "train, dev or test");

  // run
  auto* run_cmd = app.add_subcommand("run", "Full pipeline over seeds with a report");
  std::string run_config, run_seeds, run_stages, run_strategy, run_mode, run_policy, run_out = "report",
                                                                              run_formats = "tsv,json,txt";
  std::optional<int> run_k;
  bool run_ablation = false;
  run_cmd->add_option("--config", run_config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--seeds", run_seeds, "Comma-separated seeds, e.g. 1,2,3");
  run_cmd->add_option("--stages", run_stages, "Comma-separated stages, e.g. lora,sa,ust,sa");
  run_cmd->add_option("--strategy", run_strategy, "single, five_runs or ensemble");
  run_cmd->add_option("--mode", run_mode, "stl or mtl");
  run_cmd->add_option("--policy", run_policy, "full or k_data");
  run_cmd->add_option("--k", run_k, "K for the k_data policy");
  run_cmd->add_flag("--ablation", run_ablation, "Report ablation rows instead of stage rows");
  run_cmd->add_option("--out-dir", run_out, "Report directory");
  run_cmd->add_option("--formats", run_formats, "Comma-separated: tsv, json, txt");

  // report
  auto* report_cmd = app.add_subcommand("report", "Re-render a JSON report dump");
  std::string rep_in, rep_out = ".", rep_formats = "txt";
  report_cmd->add_option("--input", rep_in, "report.json from `run`")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--out-dir", rep_out, "Output directory");
  report_cmd->add_option("--formats", rep_formats, "Comma-separated: tsv, json, txt");
  bool rep_stdout = false;
  report_cmd->add_flag("--stdout", rep_stdout, "Print the text tables instead of writing files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (synth->parsed()) {
      const auto sc = aes::make_synthetic_corpus(synth_cfg);
      fs::create_directories(synth_out);
      write_json(fs::path(synth_out) / "schema.json", sc.schema.to_json());
      aes::write_corpus(fs::path(synth_out) / "corpus.tsv", sc.corpus, sc.schema);
      std::cout << "wrote " << sc.corpus.size() << " essays to " << synth_out << '\n';
    } else if (ingest_cmd->parsed()) {
      const auto schema = aes::ScoreSchema::load(ing_schema);
      const auto corpus = aes::ingest(ing_corpus, schema);
      std::map<std::string, std::pair<int, int>> counts;
      json normalized = json::array();
      for (const auto& e : corpus) {
        auto& c = counts[e.prompt_id];
        ++(e.labeled() ? c.first : c.second);
        if (e.labeled()) normalized.push_back({{"essay_id", e.essay_id}, {"scores", aes::normalize(e, schema)}});
      }
      for (const auto& [p, c] : counts)
        std::cout << "prompt " << p << ": " << c.first << " scored, " << c.second << " unscored\n";
      if (!ing_out.empty()) write_json(ing_out, normalized);
    } else if (split_cmd->parsed()) {
      const auto schema = aes::ScoreSchema::load(sp_schema);
      const auto corpus = aes::ingest(sp_corpus, schema);
      aes::DatasetSplit split = aes::full_split(corpus, sp_seed);
      if (sp_policy == "k_data") split = aes::k_split(corpus, sp_seed, sp_k, split.test);
      write_json(sp_out, split.to_json());
      std::cout << "train " << split.train.size() << ", dev " << split.dev.size() << ", test " << split.test.size()
                << ", unlabeled " << split.unlabeled.size() << '\n';
    } else if (train_cmd->parsed()) {
      Context c = load_unit(train_opt);
      if (!train_strategy.empty())
        c.config.strategy = aes::RunConfig::from_json({{"strategy", train_strategy}}).strategy;
      const auto r = aes::train_strategy(c.unit, c.unit.train, c.config, train_seed);
      save_bundle(train_out, r.bundle, c, {{"selection", r.selection}});
      std::cout << "dev mean QWK " << r.selection.at("dev_qwk").get<double>() << '\n';
    } else if (adapt_cmd->parsed()) {
      Context c = load_unit(adapt_opt);
      json log = json::array();
      const auto b = aes::run_lora(c.unit, load_bundle(adapt_model, c), c.config, adapt_seed, &log);
      save_bundle(adapt_out, b, c, {{"lora", log}});
      for (const auto& m : log)
        std::cout << "member " << m.at("member") << ": deployed " << m.at("deployed").get<std::string>()
                  << " (base dev QWK " << m.at("base_dev_qwk").get<double>() << ")\n";
    } else if (align_cmd->parsed()) {
      Context c = load_unit(align_opt);
      const auto b = load_bundle(align_model, c);
      const Eigen::MatrixXd pred = b.predict(c.unit.test.features);
      json audit = json::array();
      const Eigen::MatrixXd aligned =
          aes::align_predictions(c.unit, b.predict(c.unit.dev.features), c.unit.test, pred, c.config, &audit);
      print_report(aes::evaluate_qwk(pred, c.unit.test, c.unit.scale), "test QWK before alignment");
      print_report(aes::evaluate_qwk(aligned, c.unit.test, c.unit.scale), "test QWK after alignment");
      for (const auto& a : audit)
        if (a.contains("warning"))
          std::cerr << "warning: " << a.at("prompt").get<std::string>() << "/" << a.at("trait").get<std::string>()
                    << ": " << a.at("warning").get<std::string>() << '\n';
      if (!align_out.empty()) write_scores(align_out, c.unit.test, aligned, c, "aligned");
    } else if (ust_cmd->parsed()) {
      Context c = load_unit(ust_opt);
      const auto outcome = aes::run_ust(c.unit, load_bundle(ust_model, c), ust_align, c.config, ust_seed);
      save_bundle(ust_out, outcome.bundle, c, {{"ust", outcome.provenance}});
      if (!ust_pseudo.empty())
        write_scores(ust_pseudo, outcome.pseudo, outcome.pseudo.targets, c,
                     "pseudo:seed=" + std::to_string(ust_seed) + ",passes=" + std::to_string(c.config.mc_passes));
      std::cout << "pseudo-labeled " << outcome.pseudo.size() << " essays\n";
    } else if (eval_cmd->parsed()) {
      Context c = load_unit(eval_opt);
      const auto& set = partition(c, eval_partition);
      const auto r = aes::evaluate_qwk(load_bundle(eval_model, c).predict(set.features), set, c.unit.scale);
      std::cout << r.to_json().dump(2) << '\n';
    } else if (run_cmd->parsed()) {
      aes::RunConfig config = aes::RunConfig::load(run_config);
      if (!run_strategy.empty()) config.strategy = aes::RunConfig::from_json({{"strategy", run_strategy}}).strategy;
      if (!run_mode.empty()) config.mode = aes::RunConfig::from_json({{"mode", run_mode}}).mode;
      if (!run_policy.empty())
        config.policy = aes::RunConfig::from_json({{"split", {{"policy", run_policy}}}}).policy;
      if (run_k) config.k = *run_k;
      if (!run_seeds.empty()) config.seeds = parse_seeds(run_seeds);
      if (!run_stages.empty()) config.stages = aes::StageFlags::parse(run_stages);
      const auto formats = split_commas(run_formats);
      config.validate();
      const auto schema = aes::ScoreSchema::load(config.schema_path);
      const auto corpus = aes::ingest(config.corpus_path, schema);
      const aes::RunReport report =
          run_ablation ? aes::ablation(config, schema, corpus) : aes::run(config, schema, corpus);
      const json dump = report.to_json();
      for (const auto& p : aes::write_report(dump, formats, run_out)) std::cout << "wrote " << p.string() << '\n';
      std::cout << aes::render_tables(dump);
    } else if (report_cmd->parsed()) {
      const json dump = read_json(rep_in);
      if (rep_stdout)
        std::cout << aes::render_tables(dump);
      else
        for (const auto& p : aes::write_report(dump, split_commas(rep_formats), rep_out))
          std::cout << "wrote " << p.string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
