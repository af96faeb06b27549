// SPDX-License-Identifier: Apache-2.0
//
// Per-task binary masks over the weight grid: score-driven top-c selection,
// random bank seeding, consolidation (element-wise OR across tasks), and the
// sparsity formulas used for capacity accounting.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "subnetcl/errors.hpp"
#include "subnetcl/rng.hpp"
#include "subnetcl/types.hpp"

namespace subnetcl::masks {

struct SparsityReport {
  std::vector<double> per_layer;  // fraction of each layer not assigned to any task
  double weighted = 1.0;          // size-weighted mean, in [0,1]
};

// Ownership ledger for the whole run: one mask per task plus the running OR.
struct MaskSet {
  std::vector<MaskLayers> per_task;  // index = task id
  std::vector<int> task_bank;        // bank id per task
  MaskLayers consolidated;           // OR over all per-task masks

  void add_task(MaskLayers mask, int bank) {
    if (consolidated.empty()) consolidated = zero_masks_like(mask);
    for (std::size_t i = 0; i < mask.size(); ++i)
      consolidated[i] = (consolidated[i].array().max(mask[i].array())).matrix();
    per_task.push_back(std::move(mask));
    task_bank.push_back(bank);
  }

  // Swap in a refined mask for one task (post-training pruning) and rebuild
  // the OR; bits shared with other tasks survive the rebuild.
  void replace_task(std::size_t task, MaskLayers mask) {
    per_task.at(task) = std::move(mask);
    rebuild_consolidated();
  }

  void rebuild_consolidated() {
    if (per_task.empty()) {
      consolidated.clear();
      return;
    }
    consolidated = zero_masks_like(per_task.front());
    for (const auto& m : per_task)
      for (std::size_t i = 0; i < m.size(); ++i)
        consolidated[i] = (consolidated[i].array().max(m[i].array())).matrix();
  }

  // OR over the masks of one bank's tasks only.
  MaskLayers bank_consolidated(int bank) const {
    MaskLayers out;
    for (std::size_t t = 0; t < per_task.size(); ++t) {
      if (task_bank[t] != bank) continue;
      if (out.empty()) out = zero_masks_like(per_task[t]);
      for (std::size_t i = 0; i < per_task[t].size(); ++i)
        out[i] = (out[i].array().max(per_task[t][i].array())).matrix();
    }
    return out;
  }
};

inline int top_count(double c, std::int64_t pool_size) {
  return static_cast<int>(
      std::min<std::int64_t>(pool_size,
                             static_cast<std::int64_t>(
                                 std::ceil(c * static_cast<double>(pool_size)))));
}

// Per layer, the ceil(c*|pool|) highest-score entries within candidate_pool.
// Ties break toward the lowest row-major flat index.
template <typename Scalar>
MaskLayers top_c_mask(const LayerMats<Scalar>& scores, double c,
                      const MaskLayers& candidate_pool) {
  if (scores.size() != candidate_pool.size())
    throw DimensionError("top_c_mask: layer count mismatch");
  MaskLayers out(scores.size());
  std::vector<std::pair<Scalar, std::int64_t>> entries;
  for (std::size_t l = 0; l < scores.size(); ++l) {
    const auto& s = scores[l];
    const auto& pool = candidate_pool[l];
    if (s.rows() != pool.rows() || s.cols() != pool.cols())
      throw DimensionError("top_c_mask: shape mismatch at layer " + std::to_string(l));
    entries.clear();
    const Eigen::Index cols = s.cols();
    for (Eigen::Index r = 0; r < s.rows(); ++r)
      for (Eigen::Index cc = 0; cc < cols; ++cc)
        if (pool(r, cc)) entries.emplace_back(s(r, cc), r * cols + cc);
    if (entries.empty())
      throw CapacityError("top_c_mask: empty candidate pool at layer " +
                          std::to_string(l));
    const int k = top_count(c, static_cast<std::int64_t>(entries.size()));
    auto better = [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    };
    if (k < static_cast<int>(entries.size()))
      std::nth_element(entries.begin(), entries.begin() + k, entries.end(), better);
    out[l] = MaskMat::Zero(s.rows(), s.cols());
    for (int i = 0; i < k; ++i) {
      const std::int64_t flat = entries[static_cast<std::size_t>(i)].second;
      out[l](flat / cols, flat % cols) = 1;
    }
  }
  return out;
}

// Uniformly random selection of ceil(c*|pool|) positions inside the pool;
// deterministic per seed.
inline MaskLayers random_bank_mask(const MaskLayers& pool, double c,
                                   std::uint64_t seed) {
  Rng rng(seed);
  MaskLayers out(pool.size());
  for (std::size_t l = 0; l < pool.size(); ++l) {
    std::vector<std::int64_t> flats;
    const Eigen::Index cols = pool[l].cols();
    for (Eigen::Index r = 0; r < pool[l].rows(); ++r)
      for (Eigen::Index cc = 0; cc < cols; ++cc)
        if (pool[l](r, cc)) flats.push_back(r * cols + cc);
    if (flats.empty())
      throw CapacityError("random_bank_mask: no unassigned slots at layer " +
                          std::to_string(l));
    const int k = top_count(c, static_cast<std::int64_t>(flats.size()));
    rng.shuffle(flats);
    out[l] = MaskMat::Zero(pool[l].rows(), pool[l].cols());
    for (int i = 0; i < k; ++i) out[l](flats[i] / cols, flats[i] % cols) = 1;
  }
  return out;
}

inline MaskLayers consolidate(const MaskLayers& prev, const MaskLayers& mask_t) {
  if (prev.empty()) return mask_t;
  if (prev.size() != mask_t.size())
    throw DimensionError("consolidate: layer count mismatch");
  MaskLayers out(prev.size());
  for (std::size_t i = 0; i < prev.size(); ++i) {
    if (prev[i].rows() != mask_t[i].rows() || prev[i].cols() != mask_t[i].cols())
      throw DimensionError("consolidate: shape mismatch at layer " + std::to_string(i));
    out[i] = (prev[i].array().max(mask_t[i].array())).matrix();
  }
  return out;
}

// Per-layer fraction of weights not assigned to any task, plus the
// size-weighted model value (normalized by total weight count so it stays in
// [0,1]).
inline SparsityReport sparsity(const MaskLayers& consolidated) {
  SparsityReport rep;
  double weighted_sum = 0.0;
  double total = 0.0;
  for (const auto& m : consolidated) {
    const auto size = static_cast<double>(m.size());
    const double unassigned = size - static_cast<double>(popcount(m));
    rep.per_layer.push_back(unassigned / size);
    weighted_sum += unassigned;
    total += size;
  }
  rep.weighted = total > 0 ? weighted_sum / total : 1.0;
  return rep;
}

inline SparsityReport sparsity(const MaskSet& set) {
  return sparsity(set.consolidated);
}

}  // namespace subnetcl::masks
