// SPDX-License-Identifier: Apache-2.0
//
// Bit-exact capacity accounting, analytic FLOPs estimates, and the lifelong
// accuracy / backward / forward transfer metrics.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "subnetcl/masks.hpp"
#include "subnetcl/quantize.hpp"
#include "subnetcl/types.hpp"

namespace subnetcl::metrics {

enum class CapacityMode { kPerLayer, kPerTaskShared };

struct CapacityReport {
  std::int64_t weight_bits = 0;
  std::int64_t codebook_bits = 0;
  std::int64_t mask_bits_raw = 0;
  std::int64_t mask_bits_huffman = 0;  // reported, not part of the total
  std::int64_t cap_total_bits = 0;     // weight + codebook + mask_raw
  std::int64_t original_bits = 0;      // 32 bits per weight, whole model
  double ratio = 0.0;                  // cap_total / original
  CapacityMode accounting_mode = CapacityMode::kPerLayer;
};

// Per-layer mode evaluates the three-term capacity sum directly: assigned
// weights times b (key + prefix + bank bits), one 2^b table of (32+b)-bit
// entries per layer, and one raw mask bit per assigned slot. Per-task-shared
// mode instead charges each task's newly assigned slots at its own key width
// plus one 2^psi table of (32+psi)-bit centroids per task that added slots,
// with no mask term.
CapacityReport capacity(const masks::MaskSet& maskset,
                        const std::vector<quant::Codebook>& codebooks, int b,
                        CapacityMode mode);

// Effective b for the per-layer weight term: widest key among the codebooks
// plus prefix and bank identifier bits (zero for singleton banks/tasks).
int capacity_bit_width(const quant::BankLayout& layout,
                       const std::vector<quant::Codebook>& codebooks);

inline constexpr double kDefaultFullPrecisionFactor = 9.0;

// Analytic cost of one forward pass in 8-bit MAC units. bit_width 0 selects
// the full-precision baseline (fp_factor times the 8-bit cost, unpruned).
double flops_estimate(const std::vector<int>& layer_dims, int bit_width,
                      double sparsity,
                      double fp_factor = kDefaultFullPrecisionFactor);

struct LifelongMetrics {
  double accuracy = 0.0;
  std::optional<double> bwt;
  std::optional<double> fwt;
};

// R(i, j) = accuracy on task j after training task i. FWT needs the random
// baseline per task; pass an empty vector to skip it.
LifelongMetrics lifelong_metrics(const MatD& r,
                                 const std::vector<double>& random_baseline = {});

}  // namespace subnetcl::metrics
