// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace subnetcl {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatF = Mat<float>;
using MatD = Mat<double>;
using VecF = Vec<float>;
using VecD = Vec<double>;

// Binary mask over one layer's weight matrix. Entries are 0 or 1; the matrix
// has the same shape as the layer it masks (row = input neuron, col = output).
using MaskMat = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using LayerMats = std::vector<Mat<Scalar>>;

using MaskLayers = std::vector<MaskMat>;

inline std::int64_t popcount(const MaskMat& m) {
  return m.template cast<std::int64_t>().sum();
}

inline std::int64_t popcount(const MaskLayers& layers) {
  std::int64_t n = 0;
  for (const auto& m : layers) n += popcount(m);
  return n;
}

inline std::int64_t mask_size(const MaskLayers& layers) {
  std::int64_t n = 0;
  for (const auto& m : layers) n += m.size();
  return n;
}

inline MaskLayers mask_and(const MaskLayers& a, const MaskLayers& b) {
  MaskLayers out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = (a[i].array() * b[i].array()).matrix();
  return out;
}

inline MaskLayers mask_and_not(const MaskLayers& a, const MaskLayers& b) {
  MaskLayers out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = (a[i].array() * (1 - b[i].array())).matrix();
  return out;
}

inline MaskLayers zero_masks_like(const MaskLayers& shapes) {
  MaskLayers out(shapes.size());
  for (std::size_t i = 0; i < shapes.size(); ++i)
    out[i] = MaskMat::Zero(shapes[i].rows(), shapes[i].cols());
  return out;
}

}  // namespace subnetcl
