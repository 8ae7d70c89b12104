#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace aes {

/// Base error type for the library. Messages name the offending row, essay or key.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kOverall = "overall";

struct ScoreRange {
  int min_score = 0;
  int max_score = 1;

  int size() const { return max_score - min_score + 1; }
  bool contains(int s) const { return s >= min_score && s <= max_score; }
  double normalize(double s) const { return (s - min_score) / double(max_score - min_score); }
};

struct PromptSchema {
  std::string prompt_id;
  std::vector<std::string> traits;  // traits[0] == "overall"
  std::vector<ScoreRange> ranges;   // parallel to traits

  std::optional<std::size_t> trait_index(const std::string& trait) const;
  const ScoreRange& range(const std::string& trait) const;
};

/// Prompts, their ordered trait lists and inclusive integer score ranges.
class ScoreSchema {
 public:
  ScoreSchema() = default;
  explicit ScoreSchema(std::vector<PromptSchema> prompts);

  static ScoreSchema from_json(const nlohmann::json& j);
  static ScoreSchema load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  const std::vector<PromptSchema>& prompts() const { return prompts_; }
  const PromptSchema& prompt(const std::string& prompt_id) const;
  bool has_prompt(const std::string& prompt_id) const;

  /// Union of trait names in first-seen order ("overall" first).
  std::vector<std::string> all_traits() const;

 private:
  std::vector<PromptSchema> prompts_;
};

/// One essay; `gold` is empty for unlabeled essays and otherwise covers the prompt's traits.
struct Essay {
  std::string essay_id;
  std::string prompt_id;
  std::string text;
  std::map<std::string, int> gold;

  bool labeled() const { return !gold.empty(); }
  bool operator==(const Essay&) const = default;
};

using Corpus = std::vector<Essay>;

using NormalizedScores = std::map<std::string, double>;

/// Reads a tab-separated corpus: essay_id, prompt_id, essay_text, then one column per trait.
Corpus ingest(const std::filesystem::path& path, const ScoreSchema& schema);
Corpus ingest(std::istream& in, const ScoreSchema& schema);

/// Writes the same format `ingest` reads. Trait columns follow schema.all_traits().
void write_corpus(std::ostream& out, const Corpus& corpus, const ScoreSchema& schema);
void write_corpus(const std::filesystem::path& path, const Corpus& corpus, const ScoreSchema& schema);

NormalizedScores normalize(const Essay& essay, const ScoreSchema& schema);

enum class SplitPolicy { full, k_data };

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> dev;
  std::vector<std::string> test;
  std::vector<std::string> unlabeled;
  std::uint64_t seed = 0;
  SplitPolicy policy = SplitPolicy::full;
  int k = 0;
  /// Per-split, per-stratum counts recorded by k_split ("train:<score>" -> count).
  std::map<std::string, int> provenance;

  nlohmann::json to_json() const;
  static DatasetSplit from_json(const nlohmann::json& j);
};

/// Per prompt: seeded shuffle then 3:1:1; leftover essays go round-robin to train, dev, test.
/// Unscored essays are left out; `unlabeled` stays empty.
DatasetSplit full_split(const Corpus& corpus, std::uint64_t seed);

/// Per prompt: K train and K dev essays drawn round-robin across overall-score strata,
/// everything else that is not in `test` becomes unlabeled.
DatasetSplit k_split(const Corpus& corpus, std::uint64_t seed, int k,
                     const std::vector<std::string>& test);

/// Essays indexed by id, for resolving split lists.
std::map<std::string, const Essay*> index_by_id(const Corpus& corpus);

}  // namespace aes
