// SPDX-License-Identifier: Apache-2.0
//
// Task routing: class-balanced replay buffers, a histogram KL-divergence
// estimate between task input distributions, and the share-vs-new-bank
// decision.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "subnetcl/errors.hpp"
#include "subnetcl/rng.hpp"
#include "subnetcl/types.hpp"

namespace subnetcl::routing {

struct ReplayBuffer {
  int task = -1;
  MatF samples;  // one row per stored sample
  std::vector<int> labels;

  Eigen::Index size() const { return samples.rows(); }
};

enum class RunMode { kTsn, kTsnWr };

// "break" follows the first-below-threshold scan; "min" shares with the
// minimum-divergence task when any falls below the threshold.
enum class RoutingRule { kBreak, kMin };

struct RoutingDecision {
  enum class Mode { kShareWith, kNewBank, kSharedPool };
  Mode mode = Mode::kNewBank;
  int share_with = -1;  // task p when kShareWith
  int bank = 0;
  bool fallback = false;  // bank budget exhausted, forced to share
  std::map<int, double> kl_values;
};

// Uniform per-class sampling without replacement, s_r samples total,
// deterministic per seed. When s_r does not divide evenly the earliest class
// ids take the remainder; short classes are topped up from the rest.
inline ReplayBuffer fill_replay(const MatF& x, const std::vector<int>& labels,
                                int task, int s_r, std::uint64_t seed) {
  if (x.rows() == 0) throw InputError("fill_replay: empty task data");
  Rng rng(seed);
  std::map<int, std::vector<Eigen::Index>> by_class;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    by_class[labels[static_cast<std::size_t>(i)]].push_back(i);

  const auto total = static_cast<int>(x.rows());
  const int want = std::min(s_r, total);
  const int num_classes = static_cast<int>(by_class.size());
  std::vector<Eigen::Index> chosen;
  std::vector<Eigen::Index> leftover;
  int cls_idx = 0;
  for (auto& [cls, idx] : by_class) {
    int quota = want / num_classes + (cls_idx < want % num_classes ? 1 : 0);
    quota = std::min<int>(quota, static_cast<int>(idx.size()));
    const auto picks =
        rng.sample_indices(idx.size(), static_cast<std::size_t>(quota));
    std::vector<bool> taken(idx.size(), false);
    for (std::size_t p : picks) {
      chosen.push_back(idx[p]);
      taken[p] = true;
    }
    for (std::size_t i = 0; i < idx.size(); ++i)
      if (!taken[i]) leftover.push_back(idx[i]);
    ++cls_idx;
  }
  if (static_cast<int>(chosen.size()) < want) {
    const auto need = static_cast<std::size_t>(want) - chosen.size();
    const auto picks = rng.sample_indices(leftover.size(), need);
    for (std::size_t p : picks) chosen.push_back(leftover[p]);
  }

  ReplayBuffer buf;
  buf.task = task;
  buf.samples.resize(static_cast<Eigen::Index>(chosen.size()), x.cols());
  buf.labels.resize(chosen.size());
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    buf.samples.row(static_cast<Eigen::Index>(i)) = x.row(chosen[i]);
    buf.labels[i] = labels[static_cast<std::size_t>(chosen[i])];
  }
  return buf;
}

inline constexpr int kKlBins = 32;
inline constexpr double kKlSmoothing = 1e-6;

// D(new || old), estimated per input dimension with 32-bin histograms over
// the pooled range and additive smoothing, then averaged over dimensions.
inline double kl_divergence(const ReplayBuffer& r_new, const ReplayBuffer& r_old) {
  if (r_new.samples.cols() != r_old.samples.cols())
    throw InputError("kl_divergence: input dimensionality mismatch");
  const Eigen::Index dims = r_new.samples.cols();
  const auto n_new = static_cast<double>(r_new.samples.rows());
  const auto n_old = static_cast<double>(r_old.samples.rows());
  double total = 0.0;
  std::vector<double> cnt_new(kKlBins), cnt_old(kKlBins);
  for (Eigen::Index d = 0; d < dims; ++d) {
    const double lo =
        std::min(r_new.samples.col(d).minCoeff(), r_old.samples.col(d).minCoeff());
    const double hi =
        std::max(r_new.samples.col(d).maxCoeff(), r_old.samples.col(d).maxCoeff());
    if (!(hi > lo)) continue;  // degenerate dimension, identical point mass
    std::fill(cnt_new.begin(), cnt_new.end(), 0.0);
    std::fill(cnt_old.begin(), cnt_old.end(), 0.0);
    const double scale = kKlBins / (hi - lo);
    auto bin_of = [&](double v) {
      const int b = static_cast<int>((v - lo) * scale);
      return std::min(std::max(b, 0), kKlBins - 1);
    };
    for (Eigen::Index i = 0; i < r_new.samples.rows(); ++i)
      cnt_new[static_cast<std::size_t>(bin_of(r_new.samples(i, d)))] += 1.0;
    for (Eigen::Index i = 0; i < r_old.samples.rows(); ++i)
      cnt_old[static_cast<std::size_t>(bin_of(r_old.samples(i, d)))] += 1.0;
    double div = 0.0;
    for (int b = 0; b < kKlBins; ++b) {
      const double p = (cnt_new[static_cast<std::size_t>(b)] + kKlSmoothing) /
                       (n_new + kKlBins * kKlSmoothing);
      const double q = (cnt_old[static_cast<std::size_t>(b)] + kKlSmoothing) /
                       (n_old + kKlBins * kKlSmoothing);
      div += p * std::log(p / q);
    }
    total += std::max(0.0, div);
  }
  return std::max(0.0, total / static_cast<double>(dims));
}

// Sharing decision for task t. TSN scans previous tasks newest-first and
// shares at the first divergence below omega; otherwise it opens the next
// memory bank, falling back to minimum-divergence sharing once max_banks is
// reached. TSN-wr skips replay entirely: the mask pool spans all slots.
inline RoutingDecision route(int t, const std::vector<ReplayBuffer>& replay_store,
                             double omega, RunMode mode, int num_banks,
                             int max_banks,
                             RoutingRule rule = RoutingRule::kBreak) {
  RoutingDecision d;
  if (mode == RunMode::kTsnWr) {
    d.mode = RoutingDecision::Mode::kSharedPool;
    d.bank = 0;
    return d;
  }
  if (t == 0 || replay_store.empty()) {
    d.mode = RoutingDecision::Mode::kNewBank;
    d.bank = 0;
    return d;
  }
  const ReplayBuffer& current = replay_store.at(static_cast<std::size_t>(t));
  if (rule == RoutingRule::kBreak) {
    for (int p = t - 1; p >= 0; --p) {
      const double kl =
          kl_divergence(current, replay_store.at(static_cast<std::size_t>(p)));
      d.kl_values[p] = kl;
      if (kl < omega) {
        d.mode = RoutingDecision::Mode::kShareWith;
        d.share_with = p;
        return d;
      }
    }
  } else {
    int best = -1;
    for (int p = t - 1; p >= 0; --p) {
      const double kl =
          kl_divergence(current, replay_store.at(static_cast<std::size_t>(p)));
      d.kl_values[p] = kl;
      if (best < 0 || kl < d.kl_values[best]) best = p;
    }
    if (d.kl_values[best] < omega) {
      d.mode = RoutingDecision::Mode::kShareWith;
      d.share_with = best;
      return d;
    }
  }
  if (num_banks < max_banks) {
    d.mode = RoutingDecision::Mode::kNewBank;
    d.bank = num_banks;
    return d;
  }
  // all banks taken: share with the least-divergent task (computing any
  // divergences the early-break scan skipped)
  for (int p = t - 1; p >= 0; --p)
    if (!d.kl_values.count(p))
      d.kl_values[p] =
          kl_divergence(current, replay_store.at(static_cast<std::size_t>(p)));
  int best = 0;
  for (const auto& [p, kl] : d.kl_values)
    if (kl < d.kl_values[best]) best = p;
  d.mode = RoutingDecision::Mode::kShareWith;
  d.share_with = best;
  d.fallback = true;
  return d;
}

}  // namespace subnetcl::routing
