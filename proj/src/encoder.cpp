#include "aes/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <unordered_map>

#include "aes/corpus.hpp"

namespace aes {

namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool is_word_char(unsigned char c) { return std::isalnum(c) || c == '\'' || c >= 0x80; }

bool is_sentence_end(char c) { return c == '.' || c == '!' || c == '?'; }

struct Tokenized {
  std::vector<std::string> words;             // lowercased
  std::vector<std::vector<std::size_t>> sentences;  // word indices per sentence
  std::vector<bool> sentence_capitalized;
};

Tokenized tokenize(std::string_view text) {
  Tokenized t;
  std::vector<std::size_t> current;
  bool capitalized = false;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_word_char(c)) {
      std::string w;
      const bool upper = std::isupper(c) != 0;
      while (i < text.size() && is_word_char(static_cast<unsigned char>(text[i]))) {
        w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i]))));
        ++i;
      }
      if (current.empty()) capitalized = upper;
      current.push_back(t.words.size());
      t.words.push_back(std::move(w));
      continue;
    }
    if (is_sentence_end(static_cast<char>(c)) && !current.empty()) {
      t.sentences.push_back(std::move(current));
      t.sentence_capitalized.push_back(capitalized);
      current.clear();
    }
    ++i;
  }
  if (!current.empty()) {
    t.sentences.push_back(std::move(current));
    t.sentence_capitalized.push_back(capitalized);
  }
  return t;
}

}  // namespace

ReferenceEncoder::ReferenceEncoder(ReferenceEncoderConfig config) : config_(config) {
  if (config_.hashed_dim == 0) throw Error("reference encoder: hashed_dim must be positive");
  if (config_.stats_dim != 16) throw Error("reference encoder: stats_dim is fixed at 16");
}

Eigen::VectorXd ReferenceEncoder::hashed_channel(std::string_view text) const {
  const Tokenized tok = tokenize(text);
  std::unordered_map<std::size_t, double> counts;
  const std::size_t dim = config_.hashed_dim;
  for (std::size_t i = 0; i < tok.words.size(); ++i) {
    const std::string& w = tok.words[i];
    ++counts[fnv1a(w, fnv1a("w1:")) % dim];
    if (i + 1 < tok.words.size()) ++counts[fnv1a(tok.words[i + 1], fnv1a(w + " ", fnv1a("w2:"))) % dim];
    const std::string padded = "<" + w + ">";
    for (std::size_t k = 0; k + 3 <= padded.size(); ++k)
      ++counts[fnv1a(std::string_view(padded).substr(k, 3), fnv1a("c3:")) % dim];
  }
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  for (const auto& [bucket, n] : counts) v(static_cast<Eigen::Index>(bucket)) = std::log1p(n);
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return v;
}

Eigen::VectorXd ReferenceEncoder::sentence_statistics(std::string_view text) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(16);
  const Tokenized tok = tokenize(text);
  if (tok.words.empty()) return s;

  const double n_words = double(tok.words.size());
  const double n_sent = double(tok.sentences.size());
  double mean_len = 0.0, max_len = 0.0;
  for (const auto& sent : tok.sentences) {
    mean_len += double(sent.size());
    max_len = std::max(max_len, double(sent.size()));
  }
  mean_len /= n_sent;
  double var_len = 0.0;
  for (const auto& sent : tok.sentences) var_len += (double(sent.size()) - mean_len) * (double(sent.size()) - mean_len);
  var_len /= n_sent;

  std::unordered_map<std::string, int> freq;
  double letters = 0.0, long_words = 0.0;
  for (const auto& w : tok.words) {
    ++freq[w];
    letters += double(w.size());
    if (w.size() >= 7) long_words += 1.0;
  }
  double hapax = 0.0;
  for (const auto& [w, n] : freq)
    if (n == 1) hapax += 1.0;
  std::set<std::pair<std::string, std::string>> bigrams;
  for (std::size_t i = 0; i + 1 < tok.words.size(); ++i) bigrams.emplace(tok.words[i], tok.words[i + 1]);

  double punct = 0.0, commas = 0.0, digits = 0.0, odd = 0.0, qe = 0.0, chars = 0.0;
  for (unsigned char c : text) {
    chars += 1.0;
    if (std::ispunct(c)) punct += 1.0;
    if (c == ',') commas += 1.0;
    if (c == '?' || c == '!') qe += 1.0;
    if (std::isdigit(c)) digits += 1.0;
    if (c >= 0x80 || (c < 0x20 && c != '\t') || c == '@' || c == '#' || c == '^' || c == '~' ||
        c == '|' || c == '`')
      odd += 1.0;
  }
  double capitalized = 0.0;
  for (bool b : tok.sentence_capitalized) capitalized += b ? 1.0 : 0.0;

  s(0) = std::log1p(n_sent);
  s(1) = mean_len;
  s(2) = max_len;
  s(3) = double(freq.size()) / n_words;
  s(4) = punct / n_words;
  s(5) = letters / n_words;
  s(6) = odd / chars;
  s(7) = std::log1p(n_words);
  s(8) = std::sqrt(var_len);
  s(9) = long_words / n_words;
  s(10) = commas / n_words;
  s(11) = capitalized / n_sent;
  s(12) = digits / chars;
  s(13) = n_words > 1.0 ? double(bigrams.size()) / (n_words - 1.0) : 0.0;
  s(14) = qe / n_sent;
  s(15) = hapax / n_words;
  return s;
}

Eigen::VectorXd ReferenceEncoder::encode(std::string_view text) const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(dimension()));
  v << hashed_channel(text), sentence_statistics(text);
  return v;
}

std::vector<FeatureBlock> ReferenceEncoder::blocks() const {
  return {{0, config_.hashed_dim, BlockScaling::rms},
          {config_.hashed_dim, config_.stats_dim, BlockScaling::standardize}};
}

nlohmann::json ReferenceEncoder::config() const {
  return {{"type", "reference"}, {"hashed_dim", config_.hashed_dim}, {"stats_dim", config_.stats_dim}};
}

std::unique_ptr<Encoder> make_encoder(const nlohmann::json& config) {
  const std::string type = config.value("type", "reference");
  if (type != "reference") throw Error("unknown encoder type " + type);
  ReferenceEncoderConfig c;
  c.hashed_dim = config.value("hashed_dim", c.hashed_dim);
  c.stats_dim = config.value("stats_dim", c.stats_dim);
  return std::make_unique<ReferenceEncoder>(c);
}

Eigen::MatrixXd encode_all(const Encoder& encoder, const std::vector<std::string>& texts) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(encoder.dimension()), static_cast<Eigen::Index>(texts.size()));
  for (std::size_t i = 0; i < texts.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = encoder.encode(texts[i]);
  return m;
}

}  // namespace aes
