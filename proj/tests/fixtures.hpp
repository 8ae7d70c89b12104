#pragma once

#include <vector>

#include "aes/pipeline.hpp"
#include "aes/synthetic.hpp"

namespace fixture {

/// Small, fast settings for tests that exercise whole stages.
inline aes::RunConfig small_config() {
  aes::RunConfig c;
  c.seeds = {1};
  c.encoder = {{"type", "reference"}, {"hashed_dim", 256}};
  c.model.trunk_dim = 16;
  c.model.head_dim = 8;
  c.train.max_epochs = 25;
  c.train.patience = 5;
  c.adapter.rank = 4;
  c.adapter.alpha = 4.0;
  c.n_bins = 4;
  c.per_bin = 8;
  c.diagnostic_k = 32;
  return c;
}

struct Data {
  aes::SyntheticCorpus synthetic;
  aes::DatasetSplit split;
  std::vector<aes::UnitData> units;
};

inline Data make(const aes::RunConfig& config, aes::SyntheticConfig sc, std::uint64_t split_seed = 1) {
  Data d;
  d.synthetic = aes::make_synthetic_corpus(sc);
  const auto& corpus = d.synthetic.corpus;
  d.split = aes::full_split(corpus, split_seed);
  if (config.policy == aes::SplitPolicy::k_data) d.split = aes::k_split(corpus, split_seed, config.k, d.split.test);
  const auto encoder = aes::make_encoder(config.encoder);
  std::vector<std::string> texts;
  for (const auto& e : corpus) texts.push_back(e.text);
  d.units = aes::build_units(config, d.synthetic.schema, corpus, aes::encode_all(*encoder, texts), encoder->blocks(),
                             d.split);
  return d;
}

inline aes::SyntheticConfig corpus(int essays, int prompts = 1, std::uint64_t seed = 1) {
  aes::SyntheticConfig sc;
  sc.essays_per_prompt = essays;
  sc.prompts = prompts;
  sc.seed = seed;
  return sc;
}

}  // namespace fixture
