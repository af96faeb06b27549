// SPDX-License-Identifier: Apache-2.0
//
// Minimal fully-connected network with explicit forward/backward passes.
// Weights are plain per-layer matrices (row = input neuron, col = output
// neuron); every pass takes a per-layer binary mask that is multiplied into
// the weights, so the same store can serve many subnetworks.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "subnetcl/errors.hpp"
#include "subnetcl/rng.hpp"
#include "subnetcl/types.hpp"

namespace subnetcl::nn {

enum class Activation { kRelu };

struct ModelSpec {
  std::vector<int> layer_dims;  // input, hidden..., output neuron counts
  Activation activation = Activation::kRelu;
  std::uint64_t seed = 0;

  int num_weight_layers() const {
    return static_cast<int>(layer_dims.size()) - 1;
  }

  void validate() const {
    if (layer_dims.size() < 2)
      throw ConfigError("model needs at least 2 layer dims, got " +
                        std::to_string(layer_dims.size()));
    for (int d : layer_dims)
      if (d < 1) throw ConfigError("layer dim must be >= 1, got " + std::to_string(d));
  }
};

template <typename Scalar>
struct WeightStore {
  LayerMats<Scalar> theta;
  LayerMats<Scalar> scores;  // trainable selection scores, same shapes as theta
  Scalar learning_rate = Scalar(0.1);
};

// Per-layer post-activation outputs of one forward pass; the last entry holds
// the raw logits.
template <typename Scalar>
struct ActivationTrace {
  LayerMats<Scalar> outputs;

  const Mat<Scalar>& logits() const { return outputs.back(); }
};

template <typename Scalar>
struct Gradients {
  LayerMats<Scalar> theta;   // dL/dtheta (already mask-gated by the chain rule)
  LayerMats<Scalar> scores;  // straight-through dL/ds
  double loss = 0.0;
};

template <typename Scalar>
WeightStore<Scalar> init_model(const ModelSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  WeightStore<Scalar> w;
  const int L = spec.num_weight_layers();
  w.theta.resize(L);
  for (int i = 0; i < L; ++i) {
    const int fan_in = spec.layer_dims[i];
    const int fan_out = spec.layer_dims[i + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Mat<Scalar>& m = w.theta[i];
    m.resize(fan_in, fan_out);
    for (int r = 0; r < fan_in; ++r)
      for (int c = 0; c < fan_out; ++c)
        m(r, c) = static_cast<Scalar>(rng.uniform(-limit, limit));
  }
  w.scores.resize(L);
  for (int i = 0; i < L; ++i) {
    Mat<Scalar>& m = w.scores[i];
    m.resize(w.theta[i].rows(), w.theta[i].cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        m(r, c) = static_cast<Scalar>(rng.uniform());
  }
  return w;
}

template <typename Scalar>
void check_shapes(const LayerMats<Scalar>& theta, const MaskLayers& masks) {
  if (theta.size() != masks.size())
    throw DimensionError("mask layer count " + std::to_string(masks.size()) +
                         " != weight layer count " + std::to_string(theta.size()));
  for (std::size_t i = 0; i < theta.size(); ++i)
    if (theta[i].rows() != masks[i].rows() || theta[i].cols() != masks[i].cols())
      throw DimensionError("mask shape mismatch at layer " + std::to_string(i));
}

// x: one row per sample, width = layer_dims[0].
template <typename Scalar>
ActivationTrace<Scalar> forward(const LayerMats<Scalar>& theta,
                                const MaskLayers& masks, const Mat<Scalar>& x) {
  check_shapes(theta, masks);
  if (x.cols() != theta.front().rows())
    throw DimensionError("input width " + std::to_string(x.cols()) +
                         " != model input dim " + std::to_string(theta.front().rows()));
  ActivationTrace<Scalar> trace;
  trace.outputs.resize(theta.size());
  Mat<Scalar> h = x;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    Mat<Scalar> z =
        h * theta[i].cwiseProduct(masks[i].template cast<Scalar>());
    if (i + 1 < theta.size()) z = z.cwiseMax(Scalar(0));
    trace.outputs[i] = std::move(z);
    h = trace.outputs[i];
  }
  return trace;
}

// Row-wise numerically stable log(sum(exp(logits))).
template <typename Scalar>
Vec<Scalar> log_sum_exp_rows(const Mat<Scalar>& logits) {
  Vec<Scalar> lse(logits.rows());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Scalar m = logits.row(r).maxCoeff();
    lse(r) = m + std::log((logits.row(r).array() - m).exp().sum());
  }
  return lse;
}

template <typename Scalar>
double cross_entropy(const Mat<Scalar>& logits, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows())
    throw DimensionError("label count != batch size");
  const Vec<Scalar> lse = log_sum_exp_rows(logits);
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= logits.cols())
      throw InputError("label " + std::to_string(y) + " out of class range");
    total += static_cast<double>(lse(r) - logits(r, y));
  }
  return total / static_cast<double>(logits.rows());
}

// Cross entropy plus a layer distillation term: distill_weight times the sum
// over layers of the per-element mean squared difference between the two
// traces.
template <typename Scalar>
double loss(const Mat<Scalar>& logits, const std::vector<int>& labels,
            const ActivationTrace<Scalar>& full_trace,
            const ActivationTrace<Scalar>& compressed_trace,
            double distill_weight) {
  if (distill_weight < 0.0) throw InputError("distill_weight must be >= 0");
  if (full_trace.outputs.size() != compressed_trace.outputs.size())
    throw DimensionError("trace layer count mismatch");
  double total = cross_entropy(logits, labels);
  for (std::size_t i = 0; i < full_trace.outputs.size(); ++i) {
    const auto& a = compressed_trace.outputs[i];
    const auto& b = full_trace.outputs[i];
    if (a.rows() != b.rows() || a.cols() != b.cols())
      throw DimensionError("trace shape mismatch at layer " + std::to_string(i));
    total += distill_weight *
             static_cast<double>((a - b).array().square().mean());
  }
  return total;
}

// Backpropagation through a masked forward pass. Returns dL/dtheta with the
// mask already applied, and straight-through score gradients (the binary mask
// acts as identity in the backward direction for s, so dL/ds = dL/dz * theta).
// full_trace is the constant distillation target; pass nullptr to skip the
// distillation term.
template <typename Scalar>
Gradients<Scalar> backward(const WeightStore<Scalar>& w, const MaskLayers& masks,
                           const Mat<Scalar>& x, const std::vector<int>& labels,
                           const ActivationTrace<Scalar>* full_trace,
                           double distill_weight) {
  const ActivationTrace<Scalar> trace = forward(w.theta, masks, x);
  const std::size_t L = w.theta.size();
  const auto B = static_cast<double>(x.rows());

  Gradients<Scalar> g;
  g.theta.resize(L);
  g.scores.resize(L);
  g.loss = full_trace
               ? loss(trace.logits(), labels, *full_trace, trace, distill_weight)
               : cross_entropy(trace.logits(), labels);

  // dCE/dlogits = (softmax - onehot) / B
  const Mat<Scalar>& logits = trace.logits();
  const Vec<Scalar> lse = log_sum_exp_rows(logits);
  Mat<Scalar> grad_h =
      ((logits.colwise() - lse).array().exp() / Scalar(B)).matrix();
  for (Eigen::Index r = 0; r < logits.rows(); ++r)
    grad_h(r, labels[static_cast<std::size_t>(r)]) -= Scalar(1.0 / B);

  for (std::size_t i = L; i-- > 0;) {
    if (full_trace && distill_weight != 0.0) {
      const auto& comp = trace.outputs[i];
      const auto& full = full_trace->outputs[i];
      grad_h += (comp - full) *
                static_cast<Scalar>(2.0 * distill_weight / (B * comp.cols()));
    }
    Mat<Scalar> grad_z = std::move(grad_h);
    if (i + 1 < L) {
      // rectifier derivative; post-activation > 0 iff pre-activation > 0
      grad_z = grad_z.cwiseProduct(
          (trace.outputs[i].array() > Scalar(0)).template cast<Scalar>().matrix());
    }
    const Mat<Scalar>& h_in = (i == 0) ? x : trace.outputs[i - 1];
    const Mat<Scalar> grad_masked_w = h_in.transpose() * grad_z;
    g.scores[i] = grad_masked_w.cwiseProduct(w.theta[i]);
    g.theta[i] =
        grad_masked_w.cwiseProduct(masks[i].template cast<Scalar>());
    if (i > 0)
      grad_h = grad_z * w.theta[i].cwiseProduct(
                            masks[i].template cast<Scalar>()).transpose();
  }
  return g;
}

// theta <- theta - eta * (grad .* (1 - frozen)); weights with frozen bit 1 are
// bit-identical before and after.
template <typename Scalar>
void masked_sgd_step(WeightStore<Scalar>& w, const LayerMats<Scalar>& grads,
                     const MaskLayers& frozen) {
  check_shapes(w.theta, frozen);
  for (std::size_t i = 0; i < w.theta.size(); ++i) {
    const auto keep = (1 - frozen[i].array()).template cast<Scalar>();
    w.theta[i].array() -= w.learning_rate * grads[i].array() * keep;
  }
}

template <typename Scalar>
void score_step(WeightStore<Scalar>& w, const LayerMats<Scalar>& score_grads) {
  for (std::size_t i = 0; i < w.scores.size(); ++i)
    w.scores[i] -= w.learning_rate * score_grads[i];
}

// Fraction of argmax-correct predictions; argmax ties resolve to the lowest
// class index. Deterministic.
template <typename Scalar>
double evaluate(const LayerMats<Scalar>& theta, const MaskLayers& masks,
                const Mat<Scalar>& x, const std::vector<int>& labels) {
  if (x.rows() == 0) throw InputError("evaluate: empty dataset");
  constexpr Eigen::Index kChunk = 4096;
  std::int64_t correct = 0;
  for (Eigen::Index start = 0; start < x.rows(); start += kChunk) {
    const Eigen::Index n = std::min<Eigen::Index>(kChunk, x.rows() - start);
    const ActivationTrace<Scalar> trace =
        forward<Scalar>(theta, masks, x.middleRows(start, n));
    const Mat<Scalar>& logits = trace.logits();
    for (Eigen::Index r = 0; r < n; ++r) {
      Eigen::Index best = 0;
      for (Eigen::Index c = 1; c < logits.cols(); ++c)
        if (logits(r, c) > logits(r, best)) best = c;
      if (best == labels[static_cast<std::size_t>(start + r)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(x.rows());
}

}  // namespace subnetcl::nn
