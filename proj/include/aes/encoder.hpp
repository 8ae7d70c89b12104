#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace aes {

/// How the model's input scaler treats a contiguous run of features.
enum class BlockScaling {
  standardize,  // per-feature centering and unit variance
  rms,          // one shared scale for the whole block, no centering (sparse counts)
  identity,
};

struct FeatureBlock {
  std::size_t offset = 0;
  std::size_t size = 0;
  BlockScaling scaling = BlockScaling::identity;
};

/// Maps essay text to a fixed-width, finite, deterministic feature vector.
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual std::size_t dimension() const = 0;
  virtual Eigen::VectorXd encode(std::string_view text) const = 0;
  virtual std::vector<FeatureBlock> blocks() const = 0;
  virtual nlohmann::json config() const = 0;
};

struct ReferenceEncoderConfig {
  std::size_t hashed_dim = 2048;  // channel A
  std::size_t stats_dim = 16;     // channel B, fixed set of statistics
};

/// Two channels: hashed word and character n-gram counts (log(1+count), L2-normalized),
/// followed by essay-level sentence statistics.
class ReferenceEncoder final : public Encoder {
 public:
  explicit ReferenceEncoder(ReferenceEncoderConfig config = {});

  std::size_t dimension() const override { return config_.hashed_dim + config_.stats_dim; }
  Eigen::VectorXd encode(std::string_view text) const override;
  std::vector<FeatureBlock> blocks() const override;
  nlohmann::json config() const override;

  Eigen::VectorXd hashed_channel(std::string_view text) const;
  static Eigen::VectorXd sentence_statistics(std::string_view text);

 private:
  ReferenceEncoderConfig config_;
};

std::unique_ptr<Encoder> make_encoder(const nlohmann::json& config);

/// Encodes each text as one column of an F x n matrix.
Eigen::MatrixXd encode_all(const Encoder& encoder, const std::vector<std::string>& texts);

}  // namespace aes
