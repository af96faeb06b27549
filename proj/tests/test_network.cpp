// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "subnetcl/masks.hpp"
#include "subnetcl/network.hpp"

using namespace subnetcl;

namespace {

MaskLayers ones_masks(const LayerMats<double>& theta) {
  MaskLayers m(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i)
    m[i] = MaskMat::Ones(theta[i].rows(), theta[i].cols());
  return m;
}

MaskLayers random_masks(const LayerMats<double>& theta, double keep, Rng& rng) {
  MaskLayers m(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m[i] = MaskMat::Zero(theta[i].rows(), theta[i].cols());
    for (Eigen::Index r = 0; r < m[i].rows(); ++r)
      for (Eigen::Index c = 0; c < m[i].cols(); ++c)
        if (rng.uniform() < keep) m[i](r, c) = 1;
  }
  return m;
}

}  // namespace

TEST_CASE("init is deterministic per seed and shaped correctly") {
  nn::ModelSpec spec;
  spec.layer_dims = {2, 2};
  spec.seed = 7;
  const auto a = nn::init_model<float>(spec);
  const auto b = nn::init_model<float>(spec);
  for (std::size_t i = 0; i < a.theta.size(); ++i) {
    CHECK(a.theta[i] == b.theta[i]);
    CHECK(a.scores[i] == b.scores[i]);
  }

  nn::ModelSpec big;
  big.layer_dims = {784, 100, 10};
  const auto w = nn::init_model<float>(big);
  REQUIRE(w.theta.size() == 2);
  CHECK(w.theta[0].rows() == 784);
  CHECK(w.theta[0].cols() == 100);
  CHECK(w.theta[1].rows() == 100);
  CHECK(w.theta[1].cols() == 10);
  CHECK(w.scores[0].rows() == 784);
}

TEST_CASE("init respects the Xavier-uniform bound") {
  nn::ModelSpec spec;
  spec.layer_dims = {4, 3};
  spec.seed = 1;
  const auto w = nn::init_model<double>(spec);
  const double limit = std::sqrt(6.0 / (4 + 3));
  CHECK(w.theta[0].cwiseAbs().maxCoeff() <= limit);
  // scores live on [0,1)
  CHECK(w.scores[0].minCoeff() >= 0.0);
  CHECK(w.scores[0].maxCoeff() < 1.0);
}

TEST_CASE("init rejects invalid dims") {
  nn::ModelSpec spec;
  spec.layer_dims = {5};
  CHECK_THROWS_AS(nn::init_model<float>(spec), ConfigError);
  spec.layer_dims = {5, 0};
  CHECK_THROWS_AS(nn::init_model<float>(spec), ConfigError);
}

TEST_CASE("forward: identity mask equals unmasked, zero mask gives equal logits") {
  nn::ModelSpec spec;
  spec.layer_dims = {6, 5, 3};
  spec.seed = 11;
  const auto w = nn::init_model<double>(spec);
  Rng rng(3);
  Mat<double> x(4, 6);
  for (Eigen::Index r = 0; r < 4; ++r)
    for (Eigen::Index c = 0; c < 6; ++c) x(r, c) = rng.uniform();

  auto ones = ones_masks(w.theta);
  const auto t1 = nn::forward(w.theta, ones, x);

  MaskLayers zeros(ones.size());
  for (std::size_t i = 0; i < ones.size(); ++i)
    zeros[i] = MaskMat::Zero(ones[i].rows(), ones[i].cols());
  const auto t0 = nn::forward(w.theta, zeros, x);
  // the zero map yields all-equal logits per row
  for (Eigen::Index r = 0; r < 4; ++r) {
    CHECK(t0.logits()(r, 0) == 0.0);
    CHECK(t0.logits().row(r).maxCoeff() == t0.logits().row(r).minCoeff());
  }
  CHECK(t1.outputs.size() == 2);
  CHECK(t1.outputs[0].cols() == 5);
  CHECK(t1.logits().cols() == 3);
}

TEST_CASE("forward matches a hand matrix multiply on a 2x2 layer") {
  nn::WeightStore<double> w;
  w.theta.resize(1);
  w.theta[0].resize(2, 2);
  w.theta[0] << 1, 2, 3, 4;  // row = input neuron
  MaskLayers mask(1);
  mask[0].resize(2, 2);
  mask[0] << 1, 0, 1, 1;
  Mat<double> x(1, 2);
  x << 1, 2;
  const auto trace = nn::forward(w.theta, mask, x);
  // masked weights [[1,0],[3,4]]; x.W = [1+6, 0+8]
  CHECK(trace.logits()(0, 0) == doctest::Approx(7.0));
  CHECK(trace.logits()(0, 1) == doctest::Approx(8.0));
}

TEST_CASE("forward rejects shape mismatches") {
  nn::ModelSpec spec;
  spec.layer_dims = {4, 2};
  const auto w = nn::init_model<double>(spec);
  MaskLayers mask(1);
  mask[0] = MaskMat::Ones(3, 2);
  Mat<double> x(1, 4);
  x.setZero();
  CHECK_THROWS_AS(nn::forward(w.theta, mask, x), DimensionError);
}

TEST_CASE("cross entropy of uniform logits is ln(C)") {
  Mat<double> logits = Mat<double>::Zero(3, 5);
  const std::vector<int> labels{0, 2, 4};
  CHECK(nn::cross_entropy(logits, labels) == doctest::Approx(std::log(5.0)));
}

TEST_CASE("cross entropy matches scalar softmax arithmetic") {
  Mat<double> logits(1, 2);
  logits << 2, 0;
  CHECK(nn::cross_entropy(logits, {0}) ==
        doctest::Approx(std::log(1.0 + std::exp(-2.0))));
  CHECK_THROWS_AS(nn::cross_entropy(logits, {5}), InputError);
}

TEST_CASE("loss decomposition: zero distill weight is plain cross entropy") {
  nn::ModelSpec spec;
  spec.layer_dims = {4, 3, 2};
  spec.seed = 5;
  const auto w = nn::init_model<double>(spec);
  Rng rng(9);
  Mat<double> x(6, 4);
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = rng.uniform();
  std::vector<int> labels{0, 1, 0, 1, 1, 0};
  const auto ones = ones_masks(w.theta);
  const auto trace = nn::forward(w.theta, ones, x);

  const double ce = nn::cross_entropy(trace.logits(), labels);
  CHECK(nn::loss(trace.logits(), labels, trace, trace, 0.0) == ce);
  // identical traces contribute exactly zero at any weight
  CHECK(nn::loss(trace.logits(), labels, trace, trace, 3.7) == ce);

  // a perturbed target makes the term strictly positive
  auto bumped = trace;
  bumped.outputs[0](0, 0) += 0.5;
  CHECK(nn::loss(trace.logits(), labels, bumped, trace, 1.0) > ce);
}

TEST_CASE("analytic theta gradients match central finite differences") {
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(100 + static_cast<std::uint64_t>(trial));
    nn::ModelSpec spec;
    spec.layer_dims = {5, 4, 3};
    spec.seed = 200 + static_cast<std::uint64_t>(trial);
    auto w = nn::init_model<double>(spec);
    Mat<double> x(6, 5);
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = rng.uniform(-1, 1);
    std::vector<int> labels(6);
    for (auto& l : labels) l = static_cast<int>(rng.below(3));
    const auto mask = random_masks(w.theta, 0.6, rng);

    // distillation target from a perturbed shadow copy
    auto shadow = w.theta;
    for (auto& layer : shadow) layer.array() += 0.05;
    const auto full_trace = nn::forward(shadow, mask, x);
    const double dw = 0.3;

    const auto grads = nn::backward(w, mask, x, labels, &full_trace, dw);

    const double h = 1e-6;
    for (std::size_t l = 0; l < w.theta.size(); ++l) {
      for (Eigen::Index r = 0; r < w.theta[l].rows(); ++r)
        for (Eigen::Index c = 0; c < w.theta[l].cols(); ++c) {
          const double orig = w.theta[l](r, c);
          w.theta[l](r, c) = orig + h;
          const auto tp = nn::forward(w.theta, mask, x);
          const double lp = nn::loss(tp.logits(), labels, full_trace, tp, dw);
          w.theta[l](r, c) = orig - h;
          const auto tm = nn::forward(w.theta, mask, x);
          const double lm = nn::loss(tm.logits(), labels, full_trace, tm, dw);
          w.theta[l](r, c) = orig;
          const double fd = (lp - lm) / (2 * h);
          const double an = grads.theta[l](r, c);
          CHECK(std::abs(an - fd) <= 1e-4 * std::max({1e-2, std::abs(fd)}));
        }
    }
  }
}

TEST_CASE("masked sgd freezes exactly and updates otherwise") {
  nn::ModelSpec spec;
  spec.layer_dims = {3, 2};
  spec.seed = 21;
  auto w = nn::init_model<float>(spec);
  w.learning_rate = 0.5f;
  const auto before = w.theta[0];
  LayerMats<float> grads(1);
  grads[0] = Mat<float>::Constant(3, 2, 1.0f);

  MaskLayers frozen(1);
  frozen[0] = MaskMat::Ones(3, 2);
  nn::masked_sgd_step(w, grads, frozen);
  CHECK(w.theta[0] == before);  // bit-identical

  frozen[0].setZero();
  nn::masked_sgd_step(w, grads, frozen);
  CHECK((w.theta[0].array() == (before.array() - 0.5f)).all());
}

TEST_CASE("score step: zero gradient is a no-op, positive gradient decreases") {
  nn::ModelSpec spec;
  spec.layer_dims = {3, 2};
  spec.seed = 22;
  auto w = nn::init_model<float>(spec);
  w.learning_rate = 0.1f;
  const auto before = w.scores[0];
  LayerMats<float> zeros(1);
  zeros[0] = Mat<float>::Zero(3, 2);
  nn::score_step(w, zeros);
  CHECK(w.scores[0] == before);

  LayerMats<float> g(1);
  g[0] = Mat<float>::Zero(3, 2);
  g[0](1, 1) = 2.0f;
  nn::score_step(w, g);
  CHECK(w.scores[0](1, 1) < before(1, 1));
  CHECK(w.scores[0](0, 0) == before(0, 0));
}

TEST_CASE("evaluate: perfect model and chance level") {
  // single layer favoring class 0 for every input
  LayerMats<double> theta(1);
  theta[0] = Mat<double>::Zero(4, 3);
  theta[0](0, 0) = 5.0;
  MaskLayers mask(1);
  mask[0] = MaskMat::Ones(4, 3);
  Mat<double> x = Mat<double>::Constant(10, 4, 1.0);
  std::vector<int> labels(10, 0);
  CHECK(nn::evaluate(theta, mask, x, labels) == 1.0);

  CHECK_THROWS_AS(nn::evaluate(theta, mask, Mat<double>(0, 4), {}), InputError);

  nn::ModelSpec spec;
  spec.layer_dims = {20, 10};
  spec.seed = 77;
  const auto w = nn::init_model<double>(spec);
  Rng rng(5);
  Mat<double> xr(2000, 20);
  std::vector<int> yr(2000);
  for (Eigen::Index r = 0; r < xr.rows(); ++r) {
    for (Eigen::Index c = 0; c < xr.cols(); ++c) xr(r, c) = rng.uniform();
    yr[static_cast<std::size_t>(r)] = static_cast<int>(rng.below(10));
  }
  const double acc = nn::evaluate(w.theta, ones_masks(w.theta), xr, yr);
  CHECK(acc == doctest::Approx(0.1).epsilon(0.5));  // chance level +- 0.05
}

TEST_CASE("top-c selection stabilizes while training a separable toy task") {
  // two well-separated clusters; after a few epochs the selected mask stops
  // changing between consecutive epochs
  nn::ModelSpec spec;
  spec.layer_dims = {4, 6, 2};
  spec.seed = 31;
  auto w = nn::init_model<float>(spec);
  w.learning_rate = 0.2f;
  Rng rng(13);
  Mat<float> x(64, 4);
  std::vector<int> y(64);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const int cls = r % 2;
    y[static_cast<std::size_t>(r)] = cls;
    for (Eigen::Index c = 0; c < 4; ++c)
      x(r, c) = static_cast<float>((cls ? 0.8 : 0.2) + 0.05 * rng.uniform());
  }
  MaskLayers pool(2);
  pool[0] = MaskMat::Ones(4, 6);
  pool[1] = MaskMat::Ones(6, 2);

  MaskLayers prev, last;
  for (int epoch = 0; epoch < 30; ++epoch) {
    const auto mask = masks::top_c_mask(w.scores, 0.5, pool);
    const auto trace = nn::forward(w.theta, mask, x);
    const auto grads = nn::backward<float>(w, mask, x, y, nullptr, 0.0);
    MaskLayers none(2);
    none[0] = MaskMat::Zero(4, 6);
    none[1] = MaskMat::Zero(6, 2);
    nn::masked_sgd_step(w, grads.theta, none);
    nn::score_step(w, grads.scores);
    prev = last;
    last = mask;
  }
  REQUIRE(!prev.empty());
  for (std::size_t i = 0; i < last.size(); ++i) CHECK(prev[i] == last[i]);
}
