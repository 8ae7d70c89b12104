#pragma once

#include <cmath>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "aes/random.hpp"

namespace aes {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Inverted-dropout mask (entries 0 or 1/(1-rate)). Empty when the mask would be a no-op.
template <typename Scalar>
MatrixX<Scalar> dropout_mask(Eigen::Index rows, Eigen::Index cols, Scalar rate, Rng& rng) {
  MatrixX<Scalar> mask(rows, cols);
  const Scalar keep = Scalar(1) / (Scalar(1) - rate);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) mask(i, j) = rng.uniform() < double(rate) ? Scalar(0) : keep;
  return mask;
}

/// Trainable factors B*A added to a frozen dense weight, scaled by alpha/rank.
template <typename Scalar>
struct LowRankAdapter {
  MatrixX<Scalar> a;  // rank x inputs
  MatrixX<Scalar> b;  // outputs x rank
  int rank = 1;
  Scalar alpha = 1;
  Scalar dropout = 0;

  Scalar scale() const { return alpha / Scalar(rank); }
};

/// y = W x + b, plus the adapter path when one is attached.
template <typename Scalar>
struct DenseLayer {
  std::string name;
  MatrixX<Scalar> weight;  // outputs x inputs
  VectorX<Scalar> bias;
  bool frozen = false;
  std::optional<LowRankAdapter<Scalar>> adapter;

  Eigen::Index inputs() const { return weight.cols(); }
  Eigen::Index outputs() const { return weight.rows(); }

  /// Fan-in scaled uniform init, U(-1/sqrt(n), 1/sqrt(n)) for weight and bias.
  static DenseLayer init(std::string name, Eigen::Index outputs, Eigen::Index inputs, Rng& rng) {
    DenseLayer layer;
    layer.name = std::move(name);
    const double bound = 1.0 / std::sqrt(double(inputs));
    layer.weight.resize(outputs, inputs);
    for (Eigen::Index j = 0; j < inputs; ++j)
      for (Eigen::Index i = 0; i < outputs; ++i) layer.weight(i, j) = Scalar(rng.uniform(-bound, bound));
    layer.bias.resize(outputs);
    for (Eigen::Index i = 0; i < outputs; ++i) layer.bias(i) = Scalar(rng.uniform(-bound, bound));
    return layer;
  }
};

template <typename Scalar>
struct DenseCache {
  MatrixX<Scalar> input;
  MatrixX<Scalar> adapter_mask;    // empty when adapter dropout is inactive
  MatrixX<Scalar> adapter_input;   // dropout(x)
  MatrixX<Scalar> adapter_hidden;  // A * dropout(x)
};

template <typename Scalar>
struct DenseGrad {
  MatrixX<Scalar> weight;
  VectorX<Scalar> bias;
  MatrixX<Scalar> a;
  MatrixX<Scalar> b;

  static DenseGrad zeros_like(const DenseLayer<Scalar>& layer) {
    DenseGrad g;
    g.weight = MatrixX<Scalar>::Zero(layer.outputs(), layer.inputs());
    g.bias = VectorX<Scalar>::Zero(layer.outputs());
    if (layer.adapter) {
      g.a = MatrixX<Scalar>::Zero(layer.adapter->a.rows(), layer.adapter->a.cols());
      g.b = MatrixX<Scalar>::Zero(layer.adapter->b.rows(), layer.adapter->b.cols());
    }
    return g;
  }
};

/// Columns of `x` are samples. `rng` is only drawn from when adapter dropout is active.
template <typename Scalar>
MatrixX<Scalar> dense_forward(const DenseLayer<Scalar>& layer, const MatrixX<Scalar>& x,
                              bool dropout_active, Rng* rng, DenseCache<Scalar>* cache) {
  MatrixX<Scalar> z = layer.weight * x;
  z.colwise() += layer.bias;
  if (layer.adapter) {
    const auto& ad = *layer.adapter;
    MatrixX<Scalar> xin;
    MatrixX<Scalar> mask;
    if (dropout_active && ad.dropout > Scalar(0)) {
      mask = dropout_mask<Scalar>(x.rows(), x.cols(), ad.dropout, *rng);
      xin = x.cwiseProduct(mask);
    } else {
      xin = x;
    }
    MatrixX<Scalar> hidden = ad.a * xin;
    z.noalias() += ad.scale() * (ad.b * hidden);
    if (cache) {
      cache->adapter_mask = std::move(mask);
      cache->adapter_input = std::move(xin);
      cache->adapter_hidden = std::move(hidden);
    }
  }
  if (cache) cache->input = x;
  return z;
}

/// Accumulates parameter gradients into `grad` and, if `dx` is non-null, writes dL/dx.
/// A frozen layer contributes nothing to weight/bias.
template <typename Scalar>
void dense_backward(const DenseLayer<Scalar>& layer, const DenseCache<Scalar>& cache,
                    const MatrixX<Scalar>& dz, DenseGrad<Scalar>& grad, MatrixX<Scalar>* dx) {
  if (!layer.frozen) {
    grad.weight.noalias() += dz * cache.input.transpose();
    grad.bias += dz.rowwise().sum();
  }
  if (dx) *dx = layer.weight.transpose() * dz;
  if (layer.adapter) {
    const auto& ad = *layer.adapter;
    const Scalar s = ad.scale();
    grad.b.noalias() += s * (dz * cache.adapter_hidden.transpose());
    const MatrixX<Scalar> dhidden = s * (ad.b.transpose() * dz);
    grad.a.noalias() += dhidden * cache.adapter_input.transpose();
    if (dx) {
      MatrixX<Scalar> dxin = ad.a.transpose() * dhidden;
      if (cache.adapter_mask.size() > 0) dxin = dxin.cwiseProduct(cache.adapter_mask);
      *dx += dxin;
    }
  }
}

}  // namespace aes
