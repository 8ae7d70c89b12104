#include "aes/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>

#include "aes/random.hpp"

namespace aes {

namespace {

std::string pseudo_word(Rng& rng, int min_len, int max_len) {
  static constexpr std::string_view consonants = "bcdfghjklmnprstvwz";
  static constexpr std::string_view vowels = "aeiou";
  const int len = min_len + static_cast<int>(rng.below(static_cast<std::size_t>(max_len - min_len + 1)));
  std::string w;
  for (int i = 0; i < len; ++i) {
    const auto& pool = (i % 2 == 0) ? consonants : vowels;
    w.push_back(pool[rng.below(pool.size())]);
  }
  return w;
}

struct Vocabulary {
  std::vector<std::string> basic;
  std::vector<std::string> rich;

  Vocabulary() {
    Rng rng(0x5eedf00dULL);
    for (int i = 0; i < 150; ++i) basic.push_back(pseudo_word(rng, 2, 5));
    for (int i = 0; i < 300; ++i) rich.push_back(pseudo_word(rng, 7, 11));
  }
};

const Vocabulary& vocabulary() {
  static const Vocabulary v;
  return v;
}

constexpr std::array<const char*, 8> kConnectives = {"However", "Therefore", "Furthermore", "First",
                                                      "Finally", "Moreover", "In addition", "As a result"};

std::string misspell(std::string w, Rng& rng) {
  if (w.size() < 2) return w + w;
  const std::size_t i = rng.below(w.size());
  if (rng.bernoulli(0.5))
    w.insert(i, 1, w[i]);
  else
    std::swap(w[i], w[(i + 1) % w.size()]);
  return w;
}

struct Aspects {
  double vocabulary = 0.5;
  double structure = 0.5;
  double mechanics = 0.5;
};

std::string write_essay(const Aspects& a, double filler_rate, Rng& rng) {
  const Vocabulary& vocab = vocabulary();
  const int sentences = std::max(2, static_cast<int>(std::lround(3.0 + 10.0 * a.structure + rng.normal(0.0, 0.8))));
  std::string text;
  for (int s = 0; s < sentences; ++s) {
    std::vector<std::string> words;
    if (rng.bernoulli(0.7 * a.structure)) {
      words.emplace_back(kConnectives[rng.below(kConnectives.size())]);
      if (rng.bernoulli(a.mechanics)) words.back().push_back(',');
    }
    const int len = std::max(3, static_cast<int>(std::lround(5.0 + 8.0 * a.structure + rng.normal(0.0, 1.5))));
    for (int w = 0; w < len; ++w) {
      std::string word = rng.bernoulli(0.1 + 0.7 * a.vocabulary) ? vocab.rich[rng.below(vocab.rich.size())]
                                                                 : vocab.basic[rng.below(vocab.basic.size())];
      if (rng.bernoulli(0.25 * (1.0 - a.mechanics))) word = misspell(word, rng);
      if (filler_rate > 0.0 && rng.bernoulli(filler_rate)) {
        Rng filler(rng.bits());
        std::string junk;
        for (int k = 0; k < 6; ++k) junk.push_back(static_cast<char>('a' + filler.below(26)));
        words.push_back(junk);
      }
      if (w + 1 < len && rng.bernoulli(0.08 * a.mechanics)) word.push_back(',');
      words.push_back(std::move(word));
    }
    if (rng.bernoulli(0.4 + 0.6 * a.mechanics))
      words.front()[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(words.front()[0])));
    for (std::size_t w = 0; w < words.size(); ++w) {
      if (!text.empty()) text.push_back(' ');
      text += words[w];
    }
    if (text.back() == ',') text.pop_back();
    text.push_back('.');
  }
  return text;
}

}  // namespace

SyntheticCorpus make_synthetic_corpus(const SyntheticConfig& config) {
  if (config.traits.empty() || config.traits.front().first != kOverall)
    throw Error("synthetic corpus: first trait must be overall");
  SyntheticCorpus out;
  std::vector<PromptSchema> prompts;
  for (int p = 0; p < config.prompts; ++p) {
    PromptSchema ps;
    ps.prompt_id = std::to_string(p + 1);
    for (const auto& [name, range] : config.traits) {
      ps.traits.push_back(name);
      ps.ranges.push_back(range);
    }
    prompts.push_back(std::move(ps));
  }
  out.schema = ScoreSchema(prompts);

  const std::size_t n_traits = config.traits.size();
  for (int p = 0; p < config.prompts; ++p) {
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(p)));
    for (int i = 0; i < config.essays_per_prompt; ++i) {
      const double q = 0.5 * (rng.uniform() + rng.uniform());
      const double u = config.heteroscedastic > 0.0 ? rng.uniform() : 0.0;

      std::vector<double> latent(n_traits, q);
      double sum = 0.0;
      for (std::size_t t = 1; t < n_traits; ++t) {
        latent[t] = std::clamp(q + rng.normal(0.0, 0.12), 0.0, 1.0);
        sum += latent[t];
      }
      if (n_traits > 1) latent[0] = std::clamp(sum / double(n_traits - 1) + rng.normal(0.0, 0.03), 0.0, 1.0);

      std::array<double, 3> aspect_sum{0.0, 0.0, 0.0};
      std::array<int, 3> aspect_n{0, 0, 0};
      for (std::size_t t = 1; t < n_traits; ++t) {
        aspect_sum[(t - 1) % 3] += latent[t];
        aspect_n[(t - 1) % 3] += 1;
      }
      auto level = [&](std::size_t k) { return aspect_n[k] ? aspect_sum[k] / aspect_n[k] : latent[0]; };
      const Aspects aspects{level(0), level(1), level(2)};

      Essay e;
      e.essay_id = "p" + std::to_string(p + 1) + "_" + std::to_string(i + 1);
      e.prompt_id = std::to_string(p + 1);
      e.text = write_essay(aspects, 0.35 * u, rng);
      const double sd = config.label_noise + config.heteroscedastic * u;
      for (std::size_t t = 0; t < n_traits; ++t) {
        const ScoreRange& r = config.traits[t].second;
        const double v = std::clamp(latent[t] + rng.normal(0.0, sd), 0.0, 1.0);
        e.gold[config.traits[t].first] = static_cast<int>(std::lround(r.min_score + v * (r.max_score - r.min_score)));
      }
      out.latent_quality[e.essay_id] = q;
      out.noise_level[e.essay_id] = u;
      out.corpus.push_back(std::move(e));
    }
  }
  return out;
}

}  // namespace aes
