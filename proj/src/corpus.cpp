#include "aes/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "aes/random.hpp"

namespace aes {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return cells;
}

std::optional<int> parse_int(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  std::size_t used = 0;
  int value = 0;
  try {
    value = std::stoi(cell, &used);
  } catch (const std::exception&) {
    throw Error("not an integer score: '" + cell + "'");
  }
  if (used != cell.size()) throw Error("not an integer score: '" + cell + "'");
  return value;
}

}  // namespace

std::optional<std::size_t> PromptSchema::trait_index(const std::string& trait) const {
  const auto it = std::find(traits.begin(), traits.end(), trait);
  if (it == traits.end()) return std::nullopt;
  return static_cast<std::size_t>(it - traits.begin());
}

const ScoreRange& PromptSchema::range(const std::string& trait) const {
  const auto idx = trait_index(trait);
  if (!idx) throw Error("prompt " + prompt_id + " has no trait " + trait);
  return ranges[*idx];
}

ScoreSchema::ScoreSchema(std::vector<PromptSchema> prompts) : prompts_(std::move(prompts)) {
  std::set<std::string> ids;
  for (const auto& p : prompts_) {
    if (!ids.insert(p.prompt_id).second) throw Error("duplicate prompt " + p.prompt_id);
    if (p.traits.empty() || p.traits.front() != kOverall)
      throw Error("prompt " + p.prompt_id + ": first trait must be \"overall\"");
    if (p.traits.size() != p.ranges.size())
      throw Error("prompt " + p.prompt_id + ": trait and range counts differ");
    std::set<std::string> names;
    for (std::size_t t = 0; t < p.traits.size(); ++t) {
      if (!names.insert(p.traits[t]).second)
        throw Error("prompt " + p.prompt_id + ": duplicate trait " + p.traits[t]);
      if (p.ranges[t].max_score <= p.ranges[t].min_score)
        throw Error("prompt " + p.prompt_id + ", trait " + p.traits[t] + ": max must exceed min");
    }
  }
}

// {"prompts": [{"id": "1", "traits": [{"name": "overall", "min": 2, "max": 12}, ...]}]}
ScoreSchema ScoreSchema::from_json(const nlohmann::json& j) {
  std::vector<PromptSchema> prompts;
  try {
    for (const auto& jp : j.at("prompts")) {
      PromptSchema p;
      p.prompt_id = jp.at("id").is_string() ? jp.at("id").get<std::string>()
                                            : jp.at("id").dump();
      for (const auto& jt : jp.at("traits")) {
        p.traits.push_back(jt.at("name").get<std::string>());
        p.ranges.push_back({jt.at("min").get<int>(), jt.at("max").get<int>()});
      }
      prompts.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed schema: ") + e.what());
  }
  return ScoreSchema(std::move(prompts));
}

ScoreSchema ScoreSchema::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open schema " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("schema " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json ScoreSchema::to_json() const {
  nlohmann::json prompts = nlohmann::json::array();
  for (const auto& p : prompts_) {
    nlohmann::json traits = nlohmann::json::array();
    for (std::size_t t = 0; t < p.traits.size(); ++t)
      traits.push_back({{"name", p.traits[t]}, {"min", p.ranges[t].min_score}, {"max", p.ranges[t].max_score}});
    prompts.push_back({{"id", p.prompt_id}, {"traits", traits}});
  }
  return {{"prompts", prompts}};
}

const PromptSchema& ScoreSchema::prompt(const std::string& prompt_id) const {
  for (const auto& p : prompts_)
    if (p.prompt_id == prompt_id) return p;
  throw Error("unknown prompt_id " + prompt_id);
}

bool ScoreSchema::has_prompt(const std::string& prompt_id) const {
  return std::any_of(prompts_.begin(), prompts_.end(),
                     [&](const PromptSchema& p) { return p.prompt_id == prompt_id; });
}

std::vector<std::string> ScoreSchema::all_traits() const {
  std::vector<std::string> out;
  for (const auto& p : prompts_)
    for (const auto& t : p.traits)
      if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  return out;
}

Corpus ingest(std::istream& in, const ScoreSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw Error("corpus is empty (missing header row)");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_tabs(line);
  if (header.size() < 3 || header[0] != "essay_id" || header[1] != "prompt_id" ||
      header[2] != "essay_text")
    throw Error("row 1: header must start with essay_id, prompt_id, essay_text");
  const std::vector<std::string> trait_cols(header.begin() + 3, header.end());

  Corpus corpus;
  std::set<std::string> seen;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_tabs(line);
    if (cells.size() != header.size())
      throw Error("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                  " columns, found " + std::to_string(cells.size()));
    Essay e{cells[0], cells[1], cells[2], {}};
    if (e.essay_id.empty()) throw Error("row " + std::to_string(row) + ": empty essay_id");
    if (!seen.insert(e.essay_id).second)
      throw Error("row " + std::to_string(row) + ": duplicate essay_id " + e.essay_id);
    if (!schema.has_prompt(e.prompt_id))
      throw Error("row " + std::to_string(row) + ": unknown prompt_id " + e.prompt_id);
    const PromptSchema& ps = schema.prompt(e.prompt_id);

    for (std::size_t c = 0; c < trait_cols.size(); ++c) {
      std::optional<int> v;
      try {
        v = parse_int(cells[3 + c]);
      } catch (const Error& err) {
        throw Error("row " + std::to_string(row) + ": " + err.what());
      }
      if (!v) continue;
      const auto idx = ps.trait_index(trait_cols[c]);
      if (!idx)
        throw Error("essay " + e.essay_id + ": trait " + trait_cols[c] + " is not scored for prompt " +
                    e.prompt_id);
      if (!ps.ranges[*idx].contains(*v))
        throw Error("essay " + e.essay_id + ", trait " + trait_cols[c] + ": score " +
                    std::to_string(*v) + " outside [" + std::to_string(ps.ranges[*idx].min_score) + "," +
                    std::to_string(ps.ranges[*idx].max_score) + "]");
      e.gold[trait_cols[c]] = *v;
    }
    if (!e.gold.empty() && e.gold.size() != ps.traits.size()) {
      for (const auto& t : ps.traits)
        if (!e.gold.count(t))
          throw Error("essay " + e.essay_id + " (row " + std::to_string(row) +
                      "): partially scored, missing trait " + t);
    }
    corpus.push_back(std::move(e));
  }
  return corpus;
}

Corpus ingest(const std::filesystem::path& path, const ScoreSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus " + path.string());
  return ingest(in, schema);
}

void write_corpus(std::ostream& out, const Corpus& corpus, const ScoreSchema& schema) {
  const auto traits = schema.all_traits();
  out << "essay_id\tprompt_id\tessay_text";
  for (const auto& t : traits) out << '\t' << t;
  out << '\n';
  for (const auto& e : corpus) {
    if (e.text.find_first_of("\t\n\r") != std::string::npos)
      throw Error("essay " + e.essay_id + ": text contains a tab or newline");
    out << e.essay_id << '\t' << e.prompt_id << '\t' << e.text;
    for (const auto& t : traits) {
      out << '\t';
      if (const auto it = e.gold.find(t); it != e.gold.end()) out << it->second;
    }
    out << '\n';
  }
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus, const ScoreSchema& schema) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_corpus(out, corpus, schema);
}

NormalizedScores normalize(const Essay& essay, const ScoreSchema& schema) {
  if (!essay.labeled()) throw Error("essay " + essay.essay_id + " has no gold scores");
  const PromptSchema& ps = schema.prompt(essay.prompt_id);
  NormalizedScores out;
  for (std::size_t t = 0; t < ps.traits.size(); ++t)
    out[ps.traits[t]] = ps.ranges[t].normalize(essay.gold.at(ps.traits[t]));
  return out;
}

std::map<std::string, const Essay*> index_by_id(const Corpus& corpus) {
  std::map<std::string, const Essay*> idx;
  for (const auto& e : corpus) idx[e.essay_id] = &e;
  return idx;
}

namespace {

// Essays grouped by prompt, in order of first appearance in the corpus.
std::vector<std::pair<std::string, std::vector<const Essay*>>> by_prompt(const Corpus& corpus) {
  std::vector<std::pair<std::string, std::vector<const Essay*>>> groups;
  for (const auto& e : corpus) {
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const auto& g) { return g.first == e.prompt_id; });
    if (it == groups.end()) {
      groups.emplace_back(e.prompt_id, std::vector<const Essay*>{});
      it = std::prev(groups.end());
    }
    it->second.push_back(&e);
  }
  return groups;
}

std::uint64_t prompt_stream(const std::string& prompt_id) {
  // FNV-1a: stable across platforms, unlike std::hash.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : prompt_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

const char* policy_name(SplitPolicy p) { return p == SplitPolicy::full ? "full" : "k_data"; }

}  // namespace

DatasetSplit full_split(const Corpus& corpus, std::uint64_t seed) {
  if (corpus.empty()) throw Error("cannot split an empty corpus");
  DatasetSplit split;
  split.seed = seed;
  split.policy = SplitPolicy::full;
  for (const auto& [prompt_id, essays] : by_prompt(corpus)) {
    std::vector<const Essay*> order;
    for (const Essay* e : essays)
      if (e->labeled()) order.push_back(e);
    Rng rng(derive_seed(seed, prompt_stream(prompt_id)));
    rng.shuffle(order);
    const std::size_t n = order.size();
    std::size_t sizes[3] = {n * 3 / 5, n / 5, n / 5};
    std::size_t left = n - sizes[0] - sizes[1] - sizes[2];
    for (std::size_t i = 0; left > 0; i = (i + 1) % 3, --left) ++sizes[i];
    std::size_t pos = 0;
    for (std::size_t i = 0; i < sizes[0]; ++i) split.train.push_back(order[pos++]->essay_id);
    for (std::size_t i = 0; i < sizes[1]; ++i) split.dev.push_back(order[pos++]->essay_id);
    for (std::size_t i = 0; i < sizes[2]; ++i) split.test.push_back(order[pos++]->essay_id);
  }
  return split;
}

DatasetSplit k_split(const Corpus& corpus, std::uint64_t seed, int k,
                     const std::vector<std::string>& test) {
  if (k < 1) throw Error("K must be positive");
  const std::set<std::string> test_ids(test.begin(), test.end());
  DatasetSplit split;
  split.seed = seed;
  split.policy = SplitPolicy::k_data;
  split.k = k;
  split.test = test;

  for (const auto& [prompt_id, essays] : by_prompt(corpus)) {
    std::map<int, std::vector<const Essay*>> strata;
    std::size_t pool = 0;
    for (const Essay* e : essays) {
      if (test_ids.count(e->essay_id) || !e->labeled()) continue;
      strata[e->gold.at(kOverall)].push_back(e);
      ++pool;
    }
    if (pool < 2 * static_cast<std::size_t>(k))
      throw Error("prompt " + prompt_id + ": k_split needs " + std::to_string(2 * k) +
                  " labeled non-test essays, only " + std::to_string(pool) + " available");
    Rng rng(derive_seed(seed, prompt_stream(prompt_id)));
    for (auto& [score, members] : strata) rng.shuffle(members);

    std::set<std::string> taken;
    std::map<int, std::size_t> cursor;
    auto draw = [&](std::vector<std::string>& dest, const char* label) {
      std::size_t drawn = 0;
      while (drawn < static_cast<std::size_t>(k)) {
        for (auto& [score, members] : strata) {
          if (drawn == static_cast<std::size_t>(k)) break;
          std::size_t& c = cursor[score];
          if (c >= members.size()) continue;
          dest.push_back(members[c]->essay_id);
          taken.insert(members[c]->essay_id);
          ++c;
          ++drawn;
          ++split.provenance[prompt_id + ":" + label + ":" + std::to_string(score)];
        }
      }
    };
    draw(split.train, "train");
    draw(split.dev, "dev");

    for (const Essay* e : essays)
      if (!test_ids.count(e->essay_id) && !taken.count(e->essay_id))
        split.unlabeled.push_back(e->essay_id);
  }
  return split;
}

nlohmann::json DatasetSplit::to_json() const {
  return {{"train", train}, {"dev", dev},   {"test", test}, {"unlabeled", unlabeled},
          {"seed", seed},   {"policy", policy_name(policy)}, {"k", k}, {"provenance", provenance}};
}

DatasetSplit DatasetSplit::from_json(const nlohmann::json& j) {
  DatasetSplit s;
  try {
    s.train = j.at("train").get<std::vector<std::string>>();
    s.dev = j.at("dev").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    s.unlabeled = j.at("unlabeled").get<std::vector<std::string>>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.policy = j.at("policy").get<std::string>() == "full" ? SplitPolicy::full : SplitPolicy::k_data;
    s.k = j.value("k", 0);
    if (j.contains("provenance")) s.provenance = j.at("provenance").get<std::map<std::string, int>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed split file: ") + e.what());
  }
  return s;
}

}  // namespace aes
