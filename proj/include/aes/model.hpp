#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aes/corpus.hpp"
#include "aes/dense.hpp"
#include "aes/encoder.hpp"
#include "aes/random.hpp"

namespace aes {

struct ModelConfig {
  std::size_t input_dim = 0;
  std::size_t trunk_dim = 128;
  std::size_t head_dim = 32;
  double dropout = 0.1;
  std::vector<std::string> traits;  // traits[0] == "overall"
};

/// Per-feature affine map applied to raw encoder output before the trunk.
template <typename Scalar>
struct FeatureScaler {
  VectorX<Scalar> mean;
  VectorX<Scalar> scale;

  static FeatureScaler identity(Eigen::Index dim) {
    return {VectorX<Scalar>::Zero(dim), VectorX<Scalar>::Ones(dim)};
  }

  /// Fits on the columns of `features`. Features outside every block pass through unchanged.
  static FeatureScaler fit(const MatrixX<Scalar>& features, const std::vector<FeatureBlock>& blocks) {
    FeatureScaler s = identity(features.rows());
    const double n = double(features.cols());
    if (n == 0) return s;
    for (const auto& block : blocks) {
      const auto off = static_cast<Eigen::Index>(block.offset);
      const auto len = static_cast<Eigen::Index>(block.size);
      if (block.scaling == BlockScaling::standardize) {
        for (Eigen::Index r = off; r < off + len; ++r) {
          const Scalar mu = features.row(r).mean();
          const double var = double((features.row(r).array() - mu).square().sum()) / n;
          s.mean(r) = mu;
          s.scale(r) = var > 1e-24 ? Scalar(1.0 / std::sqrt(var)) : Scalar(1);
        }
      } else if (block.scaling == BlockScaling::rms) {
        const double ms = double(features.middleRows(off, len).squaredNorm()) / (n * double(len));
        const Scalar k = ms > 1e-24 ? Scalar(1.0 / std::sqrt(ms)) : Scalar(1);
        s.scale.segment(off, len).setConstant(k);
      }
    }
    return s;
  }

  MatrixX<Scalar> apply(const MatrixX<Scalar>& x) const {
    return (x.colwise() - mean).array().colwise() * scale.array();
  }
};

/// Shared trunk, one hidden head per trait and a sigmoid output per trait. The overall output
/// reads the concatenation of its own head vector and every other trait's head vector.
///
/// Layer order: [trunk, head(overall), head(t1).., out(overall), out(t1)..].
template <typename Scalar>
class TraitModel {
 public:
  ModelConfig config;
  FeatureScaler<Scalar> scaler;
  std::vector<DenseLayer<Scalar>> layers;
  bool trained = false;

  static TraitModel create(ModelConfig config, std::uint64_t seed) {
    if (config.traits.empty() || config.traits.front() != kOverall)
      throw Error("model: first trait must be \"overall\"");
    if (config.input_dim == 0) throw Error("model: input_dim must be positive");
    TraitModel m;
    m.config = config;
    const auto in = static_cast<Eigen::Index>(config.input_dim);
    const auto hidden = static_cast<Eigen::Index>(config.trunk_dim);
    const auto head = static_cast<Eigen::Index>(config.head_dim);
    const auto n_traits = static_cast<Eigen::Index>(config.traits.size());
    m.scaler = FeatureScaler<Scalar>::identity(in);
    std::uint64_t stream = 0;
    auto next_rng = [&] { return Rng(derive_seed(seed, stream++)); };
    {
      Rng rng = next_rng();
      m.layers.push_back(DenseLayer<Scalar>::init("trunk", hidden, in, rng));
    }
    for (const auto& t : config.traits) {
      Rng rng = next_rng();
      m.layers.push_back(DenseLayer<Scalar>::init("head:" + t, head, hidden, rng));
    }
    for (const auto& t : config.traits) {
      Rng rng = next_rng();
      const Eigen::Index fan_in = t == kOverall ? head * n_traits : head;
      m.layers.push_back(DenseLayer<Scalar>::init("out:" + t, 1, fan_in, rng));
    }
    return m;
  }

  std::size_t trait_count() const { return config.traits.size(); }
  std::size_t head_index(std::size_t t) const { return 1 + t; }
  std::size_t out_index(std::size_t t) const { return 1 + trait_count() + t; }

  std::optional<std::size_t> layer_index(const std::string& name) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].name == name) return i;
    return std::nullopt;
  }

  void set_frozen(bool frozen) {
    for (auto& l : layers) l.frozen = frozen;
  }

  bool has_adapters() const {
    for (const auto& l : layers)
      if (l.adapter) return true;
    return false;
  }
};

template <typename Scalar>
struct ForwardCache {
  std::vector<DenseCache<Scalar>> dense;  // parallel to layers
  std::vector<MatrixX<Scalar>> activation;  // tanh output per hidden layer [trunk, heads...]
  std::vector<MatrixX<Scalar>> mask;        // dropout mask per hidden layer (empty = none)
  MatrixX<Scalar> output;                   // traits x n
};

namespace detail {

template <typename Scalar>
MatrixX<Scalar> hidden_forward(const DenseLayer<Scalar>& layer, const MatrixX<Scalar>& x, Scalar rate,
                               bool dropout_active, Rng* rng, DenseCache<Scalar>* dcache,
                               MatrixX<Scalar>* act, MatrixX<Scalar>* mask) {
  MatrixX<Scalar> h = dense_forward(layer, x, dropout_active, rng, dcache).array().tanh().matrix();
  MatrixX<Scalar> m;
  MatrixX<Scalar> out;
  if (dropout_active && rate > Scalar(0)) {
    m = dropout_mask<Scalar>(h.rows(), h.cols(), rate, *rng);
    out = h.cwiseProduct(m);
  } else {
    out = h;
  }
  if (act) *act = std::move(h);
  if (mask) *mask = std::move(m);
  return out;
}

template <typename Scalar>
MatrixX<Scalar> sigmoid(const MatrixX<Scalar>& z) {
  return (Scalar(1) / (Scalar(1) + (-z.array()).exp())).matrix();
}

}  // namespace detail

/// Per-trait sigmoid outputs (traits x n) for raw feature columns `features`.
/// `rng` must be non-null when dropout is active; masks are drawn in layer order.
template <typename Scalar>
MatrixX<Scalar> forward(const TraitModel<Scalar>& model, const MatrixX<Scalar>& features,
                        bool dropout_active, Rng* rng, ForwardCache<Scalar>* cache = nullptr) {
  if (features.rows() != static_cast<Eigen::Index>(model.config.input_dim))
    throw Error("forward: feature dimension " + std::to_string(features.rows()) + " != model input " +
                std::to_string(model.config.input_dim));
  if (dropout_active && !rng) throw Error("forward: dropout requires an rng stream");
  const std::size_t n_traits = model.trait_count();
  const Scalar rate = Scalar(model.config.dropout);
  const Eigen::Index n = features.cols();

  if (cache) {
    cache->dense.assign(model.layers.size(), {});
    cache->activation.assign(1 + n_traits, {});
    cache->mask.assign(1 + n_traits, {});
  }
  auto dc = [&](std::size_t i) { return cache ? &cache->dense[i] : nullptr; };
  auto act = [&](std::size_t i) { return cache ? &cache->activation[i] : nullptr; };
  auto msk = [&](std::size_t i) { return cache ? &cache->mask[i] : nullptr; };

  const MatrixX<Scalar> x = model.scaler.apply(features);
  const MatrixX<Scalar> trunk =
      detail::hidden_forward(model.layers[0], x, rate, dropout_active, rng, dc(0), act(0), msk(0));

  std::vector<MatrixX<Scalar>> heads(n_traits);
  for (std::size_t t = 0; t < n_traits; ++t) {
    const std::size_t li = model.head_index(t);
    heads[t] = detail::hidden_forward(model.layers[li], trunk, rate, dropout_active, rng, dc(li),
                                      act(1 + t), msk(1 + t));
  }

  const Eigen::Index head_dim = static_cast<Eigen::Index>(model.config.head_dim);
  MatrixX<Scalar> out(static_cast<Eigen::Index>(n_traits), n);
  for (std::size_t t = 0; t < n_traits; ++t) {
    const std::size_t li = model.out_index(t);
    MatrixX<Scalar> z;
    if (t == 0) {
      MatrixX<Scalar> concat(head_dim * static_cast<Eigen::Index>(n_traits), n);
      for (std::size_t u = 0; u < n_traits; ++u)
        concat.middleRows(static_cast<Eigen::Index>(u) * head_dim, head_dim) = heads[u];
      z = dense_forward(model.layers[li], concat, dropout_active, rng, dc(li));
    } else {
      z = dense_forward(model.layers[li], heads[t], dropout_active, rng, dc(li));
    }
    out.row(static_cast<Eigen::Index>(t)) = detail::sigmoid<Scalar>(z);
  }
  if (cache) cache->output = out;
  return out;
}

/// Loss weights: total = alpha_overall * L_overall + (1 - alpha_overall) * sum_t alpha_t * L_t.
struct LossWeights {
  double alpha_overall = 0.7;
  std::map<std::string, double> alpha;  // non-overall traits

  static LossWeights uniform(const std::vector<std::string>& traits, double alpha_overall,
                             double alpha_trait) {
    LossWeights w;
    w.alpha_overall = alpha_overall;
    for (const auto& t : traits)
      if (t != kOverall) w.alpha[t] = alpha_trait;
    return w;
  }

  /// Effective multiplier per trait, in `traits` order.
  std::vector<double> per_trait(const std::vector<std::string>& traits) const {
    std::vector<double> out;
    for (const auto& t : traits) {
      if (t == kOverall) {
        out.push_back(alpha_overall);
        continue;
      }
      const auto it = alpha.find(t);
      if (it == alpha.end()) throw Error("loss weights: no weight for trait " + t);
      out.push_back((1.0 - alpha_overall) * it->second);
    }
    if (alpha.size() + 1 != traits.size()) throw Error("loss weights: trait set mismatch");
    return out;
  }
};

/// Per-trait masked MSE combined with per-trait multipliers. Rows are traits, columns samples;
/// a trait with no unmasked samples contributes zero.
template <typename Scalar>
Scalar weighted_mse(const MatrixX<Scalar>& pred, const MatrixX<Scalar>& target, const MatrixX<Scalar>& mask,
                    const std::vector<double>& trait_weight) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols() || mask.rows() != pred.rows() ||
      mask.cols() != pred.cols() || static_cast<Eigen::Index>(trait_weight.size()) != pred.rows())
    throw Error("loss: prediction/target/mask shapes disagree");
  Scalar total = 0;
  for (Eigen::Index t = 0; t < pred.rows(); ++t) {
    const Scalar count = mask.row(t).sum();
    if (count <= Scalar(0)) continue;
    const Scalar sq = ((pred.row(t) - target.row(t)).array().square() * mask.row(t).array()).sum();
    total += Scalar(trait_weight[static_cast<std::size_t>(t)]) * sq / count;
  }
  return total;
}

template <typename Scalar>
using Gradients = std::vector<DenseGrad<Scalar>>;

/// Backpropagates weighted_mse through a cached forward pass. Returns the loss.
template <typename Scalar>
Scalar backward(const TraitModel<Scalar>& model, const ForwardCache<Scalar>& cache,
                const MatrixX<Scalar>& target, const MatrixX<Scalar>& mask,
                const std::vector<double>& trait_weight, Gradients<Scalar>& grads) {
  const std::size_t n_traits = model.trait_count();
  const Scalar loss = weighted_mse(cache.output, target, mask, trait_weight);
  grads.clear();
  for (const auto& l : model.layers) grads.push_back(DenseGrad<Scalar>::zeros_like(l));

  const Eigen::Index head_dim = static_cast<Eigen::Index>(model.config.head_dim);
  const Eigen::Index n = cache.output.cols();
  std::vector<MatrixX<Scalar>> dhead(n_traits, MatrixX<Scalar>::Zero(head_dim, n));

  for (std::size_t t = 0; t < n_traits; ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    const Scalar count = mask.row(ti).sum();
    if (count <= Scalar(0)) continue;
    const auto y = cache.output.row(ti).array();
    MatrixX<Scalar> dz = (Scalar(2 * trait_weight[t]) / count *
                          (y - target.row(ti).array()) * mask.row(ti).array() * y * (Scalar(1) - y))
                             .matrix();
    const std::size_t li = model.out_index(t);
    MatrixX<Scalar> dx;
    dense_backward(model.layers[li], cache.dense[li], dz, grads[li], &dx);
    if (t == 0) {
      for (std::size_t u = 0; u < n_traits; ++u)
        dhead[u] += dx.middleRows(static_cast<Eigen::Index>(u) * head_dim, head_dim);
    } else {
      dhead[t] += dx;
    }
  }

  auto through_activation = [&](std::size_t hidden, MatrixX<Scalar> d) {
    if (cache.mask[hidden].size() > 0) d = d.cwiseProduct(cache.mask[hidden]);
    return MatrixX<Scalar>(d.array() * (Scalar(1) - cache.activation[hidden].array().square()));
  };

  MatrixX<Scalar> dtrunk = MatrixX<Scalar>::Zero(static_cast<Eigen::Index>(model.config.trunk_dim), n);
  for (std::size_t t = 0; t < n_traits; ++t) {
    const std::size_t li = model.head_index(t);
    MatrixX<Scalar> dx;
    dense_backward(model.layers[li], cache.dense[li], through_activation(1 + t, dhead[t]), grads[li], &dx);
    dtrunk += dx;
  }
  dense_backward(model.layers[0], cache.dense[0], through_activation(0, dtrunk), grads[0],
                 static_cast<MatrixX<Scalar>*>(nullptr));
  return loss;
}

/// Loss and exact gradients for one batch. Dropout masks come from `rng` when active.
template <typename Scalar>
Scalar gradients(const TraitModel<Scalar>& model, const MatrixX<Scalar>& features,
                 const MatrixX<Scalar>& target, const MatrixX<Scalar>& mask,
                 const std::vector<double>& trait_weight, bool dropout_active, Rng* rng,
                 Gradients<Scalar>& grads) {
  if (features.cols() == 0) throw Error("gradients: empty batch");
  ForwardCache<Scalar> cache;
  forward(model, features, dropout_active, rng, &cache);
  return backward(model, cache, target, mask, trait_weight, grads);
}

using Model = TraitModel<double>;

}  // namespace aes
