// SPDX-License-Identifier: Apache-2.0
//
// Post-training, gradient-free greedy sparsification of a task mask. Each
// iteration prunes a small quantum of the task's smallest surviving weights
// in one layer and keeps the change only if the fitness
// gamma = alpha * accuracy + beta * sparsity strictly improves.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "subnetcl/errors.hpp"
#include "subnetcl/masks.hpp"
#include "subnetcl/types.hpp"

namespace subnetcl::finetune {

struct FinetuneResult {
  MaskLayers mask_opt;
  double gamma_opt = 0.0;
  double accuracy_initial = 0.0;
  double accuracy_opt = 0.0;
  double sparsity_initial = 0.0;
  double sparsity_opt = 0.0;
  std::vector<double> gamma_history;  // gamma_opt after each iteration
  int evaluations = 0;
};

struct FinetuneParams {
  int iterations = 50;
  double delta = 0.01;  // fraction of a layer pruned per increment
  double alpha = 0.95;
  double beta = 0.05;
};

// Prunes the n smallest-|weight| kept entries of one layer; ties go to the
// lower row-major flat index. Returns how many entries were actually pruned.
template <typename Scalar>
int prune_smallest(const Mat<Scalar>& theta, MaskMat& mask, int n) {
  std::vector<std::pair<Scalar, std::int64_t>> kept;
  const Eigen::Index cols = mask.cols();
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      if (mask(r, c)) kept.emplace_back(std::abs(theta(r, c)), r * cols + c);
  if (kept.empty()) return 0;
  const int take = std::min<int>(n, static_cast<int>(kept.size()));
  auto smaller = [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second < b.second;
  };
  if (take < static_cast<int>(kept.size()))
    std::nth_element(kept.begin(), kept.begin() + take, kept.end(), smaller);
  for (int i = 0; i < take; ++i) {
    const std::int64_t flat = kept[static_cast<std::size_t>(i)].second;
    mask(flat / cols, flat % cols) = 0;
  }
  return take;
}

// theta: the trained weights; mask_t: the task's trained mask; other_union:
// OR of every other task's mask (global sparsity only moves when a slot this
// task owned exclusively is released). accuracy_of evaluates theta .* mask on
// the task's validation split; it is called at most iterations+1 times.
template <typename Scalar>
FinetuneResult finetune_prune(
    const LayerMats<Scalar>& theta, const MaskLayers& mask_t,
    const MaskLayers& other_union, const FinetuneParams& params,
    const std::function<double(const MaskLayers&)>& accuracy_of) {
  if (params.delta <= 0.0 || params.delta >= 1.0)
    throw InputError("finetune: delta must lie in (0,1)");
  if (params.iterations < 1)
    throw InputError("finetune: iterations must be >= 1");

  auto weighted_sparsity = [&](const MaskLayers& m) {
    return masks::sparsity(other_union.empty()
                               ? m
                               : masks::consolidate(other_union, m))
        .weighted;
  };

  FinetuneResult res;
  res.mask_opt = mask_t;
  res.accuracy_initial = accuracy_of(mask_t);
  res.evaluations = 1;
  res.sparsity_initial = weighted_sparsity(mask_t);
  res.accuracy_opt = res.accuracy_initial;
  res.sparsity_opt = res.sparsity_initial;
  res.gamma_opt =
      params.alpha * res.accuracy_initial + params.beta * res.sparsity_initial;

  const int num_layers = static_cast<int>(mask_t.size());
  for (int i = 0; i < params.iterations; ++i) {
    const int l = i % num_layers;  // round-robin layer choice
    MaskLayers trial = res.mask_opt;
    const int quantum = static_cast<int>(
        std::ceil(params.delta * static_cast<double>(theta[l].size())));
    const int pruned = prune_smallest(theta[l], trial[l], quantum);
    if (pruned == 0) {
      res.gamma_history.push_back(res.gamma_opt);
      continue;  // layer already fully pruned
    }
    const double acc = accuracy_of(trial);
    ++res.evaluations;
    const double sp = weighted_sparsity(trial);
    const double gamma = params.alpha * acc + params.beta * sp;
    if (gamma > res.gamma_opt) {
      res.mask_opt = std::move(trial);
      res.gamma_opt = gamma;
      res.accuracy_opt = acc;
      res.sparsity_opt = sp;
    }
    res.gamma_history.push_back(res.gamma_opt);
  }
  return res;
}

}  // namespace subnetcl::finetune
