#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "aes/corpus.hpp"

namespace aes {

/// Generator for essay-like corpora with known latent quality.
///
/// Each essay has a latent quality q; every non-overall trait gets its own latent near q, and the
/// overall latent is their mean. Traits drive visible text properties in rotation: vocabulary
/// richness, structure (sentence count/length, connectives), then mechanics (capitalization,
/// commas, misspellings). Gold = round(min + clip(latent + noise) * (max - min)).
///
/// With `heteroscedastic` > 0 a second latent u in [0,1] adds label noise of SD
/// heteroscedastic * u and sprinkles the text with unseen filler tokens at rate 0.35 * u.
struct SyntheticConfig {
  int prompts = 1;
  int essays_per_prompt = 600;
  std::vector<std::pair<std::string, ScoreRange>> traits = {
      {"overall", {2, 12}}, {"content", {1, 6}}, {"organization", {1, 6}}, {"conventions", {1, 6}}};
  double label_noise = 0.04;
  double heteroscedastic = 0.0;
  std::uint64_t seed = 1;
};

struct SyntheticCorpus {
  ScoreSchema schema;
  Corpus corpus;
  std::map<std::string, double> latent_quality;  // essay_id -> q
  std::map<std::string, double> noise_level;     // essay_id -> u
};

SyntheticCorpus make_synthetic_corpus(const SyntheticConfig& config);

}  // namespace aes
