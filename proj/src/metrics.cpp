// SPDX-License-Identifier: Apache-2.0

#include "subnetcl/metrics.hpp"

#include <cmath>
#include <string>

#include "subnetcl/errors.hpp"
#include "subnetcl/huffman.hpp"

namespace subnetcl::metrics {

CapacityReport capacity(const masks::MaskSet& maskset,
                        const std::vector<quant::Codebook>& codebooks, int b,
                        CapacityMode mode) {
  if (b < 1 && mode == CapacityMode::kPerLayer)
    throw InputError("capacity: bit width must be >= 1");
  CapacityReport rep;
  rep.accounting_mode = mode;
  for (const auto& m : maskset.consolidated)
    rep.original_bits += 32 * static_cast<std::int64_t>(m.size());

  if (mode == CapacityMode::kPerLayer) {
    const std::int64_t assigned = popcount(maskset.consolidated);
    rep.weight_bits = assigned * b;
    rep.codebook_bits = static_cast<std::int64_t>(maskset.consolidated.size()) *
                        (std::int64_t(1) << b) * (32 + b);
    rep.mask_bits_raw = assigned;
  } else {
    MaskLayers seen;
    for (std::size_t t = 0; t < maskset.per_task.size(); ++t) {
      const MaskLayers& m = maskset.per_task[t];
      const std::int64_t fresh =
          seen.empty() ? popcount(m) : popcount(mask_and_not(m, seen));
      seen = seen.empty() ? m : masks::consolidate(seen, m);
      if (fresh == 0) continue;  // pure value sharing: no new keys, no table
      const int psi = codebooks.at(t).bitwidth;
      rep.weight_bits += fresh * psi;
      rep.codebook_bits += (std::int64_t(1) << psi) * (32 + psi);
    }
  }

  for (const auto& m : maskset.per_task)
    rep.mask_bits_huffman +=
        static_cast<std::int64_t>(huffman::encode_mask(m).code.total_bits());

  rep.cap_total_bits = rep.weight_bits + rep.codebook_bits + rep.mask_bits_raw;
  rep.ratio = rep.original_bits > 0
                  ? static_cast<double>(rep.cap_total_bits) /
                        static_cast<double>(rep.original_bits)
                  : 0.0;
  return rep;
}

int capacity_bit_width(const quant::BankLayout& layout,
                       const std::vector<quant::Codebook>& codebooks) {
  int psi = 1;
  for (const auto& cb : codebooks) psi = std::max(psi, cb.bitwidth);
  int prefix = 0;
  for (int bank = 0; bank < layout.num_banks(); ++bank)
    prefix = std::max(prefix, layout.prefix_field_bits(bank));
  return psi + prefix + layout.bank_field_bits();
}

double flops_estimate(const std::vector<int>& layer_dims, int bit_width,
                      double sparsity, double fp_factor) {
  double base = 0.0;  // two ops per weight: multiply and accumulate
  for (std::size_t i = 0; i + 1 < layer_dims.size(); ++i)
    base += 2.0 * static_cast<double>(layer_dims[i]) *
            static_cast<double>(layer_dims[i + 1]);
  if (bit_width == 0) return fp_factor * base;
  if (bit_width != 4 && bit_width != 8 && bit_width != 16)
    throw ConfigError("flops_estimate: unsupported bit width " +
                      std::to_string(bit_width));
  const double b = static_cast<double>(bit_width);
  return base * (1.0 - sparsity) * (b / 8.0) * (b / 8.0);
}

LifelongMetrics lifelong_metrics(const MatD& r,
                                 const std::vector<double>& random_baseline) {
  const Eigen::Index t = r.rows();
  if (t == 0 || r.cols() != t)
    throw InputError("lifelong_metrics: accuracy matrix must be square");
  LifelongMetrics out;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < t; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) sum += r(i, j);
  out.accuracy = 2.0 * sum / (static_cast<double>(t) * static_cast<double>(t + 1));
  if (t < 2) return out;

  double bwt = 0.0;
  for (Eigen::Index j = 0; j + 1 < t; ++j) bwt += r(t - 1, j) - r(j, j);
  out.bwt = bwt / static_cast<double>(t - 1);

  if (!random_baseline.empty()) {
    if (static_cast<Eigen::Index>(random_baseline.size()) != t)
      throw InputError("lifelong_metrics: baseline size must match task count");
    double fwt = 0.0;
    for (Eigen::Index j = 1; j < t; ++j)
      fwt += r(j - 1, j) - random_baseline[static_cast<std::size_t>(j)];
    out.fwt = fwt / static_cast<double>(t - 1);
  }
  return out;
}

}  // namespace subnetcl::metrics
