// SPDX-License-Identifier: Apache-2.0
//
// Non-linear codebook quantization of task weights: 1-D k-means clustering
// per layer, adaptive bit-width search against a validation accuracy bound,
// and the bank/prefix/key bitstream coding of quantized weights.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "subnetcl/errors.hpp"
#include "subnetcl/rng.hpp"
#include "subnetcl/types.hpp"

namespace subnetcl::quant {

// Per-task quantization state. Centroids are stored at 32-bit precision; a
// key k in layer l decodes to tables[l][k].
struct Codebook {
  int bitwidth = 0;  // psi: key bits
  int bank = 0;
  int prefix = 0;  // position of the task within its bank
  std::vector<std::vector<float>> tables;

  int max_table_size() const { return 1 << bitwidth; }
};

using KeyMat = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;
using KeyMats = std::vector<KeyMat>;  // -1 outside the quantized mask

struct KMeansResult {
  std::vector<double> centroids;  // ascending
  std::vector<int> assignments;   // nearest centroid, ties to lower index
  double inertia = 0.0;
};

KMeansResult kmeans_1d(const std::vector<double>& values, int k,
                       std::uint64_t seed);

inline int nearest_centroid(const std::vector<double>& centroids, double v) {
  // centroids ascending; equidistant values resolve to the lower index
  int best = 0;
  for (std::size_t i = 1; i < centroids.size(); ++i) {
    const double mid = 0.5 * (centroids[i - 1] + centroids[i]);
    if (v > mid) best = static_cast<int>(i);
  }
  return best;
}

template <typename Scalar>
struct QuantizeResult {
  KeyMats keys;
  Codebook codebook;
};

// Clusters the masked weight values of each layer with 2^psi centroids and
// replaces each masked weight by its centroid key. Layers whose mask is empty
// get an empty table.
template <typename Scalar>
QuantizeResult<Scalar> nonlinear_quantize(const LayerMats<Scalar>& theta,
                                          const MaskLayers& mask, int psi,
                                          std::uint64_t seed) {
  if (psi < 1) throw InputError("bit-width must be >= 1");
  QuantizeResult<Scalar> out;
  out.codebook.bitwidth = psi;
  const int k = 1 << psi;
  for (std::size_t l = 0; l < theta.size(); ++l) {
    std::vector<double> values;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> where;
    for (Eigen::Index r = 0; r < theta[l].rows(); ++r)
      for (Eigen::Index c = 0; c < theta[l].cols(); ++c)
        if (mask[l](r, c)) {
          values.push_back(static_cast<double>(theta[l](r, c)));
          where.emplace_back(r, c);
        }
    KeyMat keys = KeyMat::Constant(theta[l].rows(), theta[l].cols(), -1);
    std::vector<float> table;
    if (!values.empty()) {
      const KMeansResult km =
          kmeans_1d(values, k, mix_seed(seed, static_cast<std::uint64_t>(l)));
      table.reserve(km.centroids.size());
      for (double c : km.centroids) table.push_back(static_cast<float>(c));
      for (std::size_t i = 0; i < where.size(); ++i)
        keys(where[i].first, where[i].second) = km.assignments[i];
    }
    out.codebook.tables.push_back(std::move(table));
    out.keys.push_back(std::move(keys));
  }
  return out;
}

// Writes centroid values into theta at every keyed position.
template <typename Scalar>
void dequantize_into(LayerMats<Scalar>& theta, const KeyMats& keys,
                     const Codebook& codebook) {
  for (std::size_t l = 0; l < theta.size(); ++l)
    for (Eigen::Index r = 0; r < theta[l].rows(); ++r)
      for (Eigen::Index c = 0; c < theta[l].cols(); ++c)
        if (keys[l](r, c) >= 0)
          theta[l](r, c) = static_cast<Scalar>(
              codebook.tables[l][static_cast<std::size_t>(keys[l](r, c))]);
}

template <typename Scalar>
struct AdaptiveResult {
  int psi = 0;
  KeyMats keys;
  Codebook codebook;
  double acc_before = 0.0;  // unquantized baseline on the validation set
  double acc_after = 0.0;   // accuracy of the returned bit-width
  bool warning = false;     // psi reached 32 without satisfying the bound
};

// Starts at psi0 and grows the bit-width until quantized validation accuracy
// is within delta of the unquantized baseline.
template <typename Scalar>
AdaptiveResult<Scalar> adaptive_quantize(
    const LayerMats<Scalar>& theta, const MaskLayers& quant_mask, double delta,
    int psi0, std::uint64_t seed,
    const std::function<double(const LayerMats<Scalar>&)>& accuracy_of) {
  AdaptiveResult<Scalar> out;
  out.acc_before = accuracy_of(theta);
  int psi = psi0;
  for (;;) {
    QuantizeResult<Scalar> q = nonlinear_quantize(theta, quant_mask, psi, seed);
    LayerMats<Scalar> candidate = theta;
    dequantize_into(candidate, q.keys, q.codebook);
    const double acc = accuracy_of(candidate);
    if (acc >= out.acc_before - delta || psi >= 32) {
      out.psi = psi;
      out.keys = std::move(q.keys);
      out.codebook = std::move(q.codebook);
      out.acc_after = acc;
      out.warning = psi >= 32 && acc < out.acc_before - delta;
      return out;
    }
    ++psi;
  }
}

// Bank bookkeeping: which task sits in which bank, and the field widths of
// the bank|prefix|key encoding. Field widths collapse to zero for singleton
// banks/tasks, so a single-bank single-task layout encodes as the key alone.
struct BankLayout {
  int max_banks = 2;
  std::vector<std::vector<int>> bank_tasks;  // bank id -> task ids in prefix order

  int num_banks() const { return static_cast<int>(bank_tasks.size()); }

  static int bits_for(int n) {
    int bits = 0;
    while ((1 << bits) < n) ++bits;
    return bits;
  }

  int bank_field_bits() const { return bits_for(num_banks()); }
  int prefix_field_bits(int bank) const {
    return bits_for(static_cast<int>(bank_tasks.at(bank).size()));
  }

  void add_task(int task, int bank) {
    if (bank >= max_banks)
      throw CapacityError("bank id " + std::to_string(bank) +
                          " exceeds max_banks " + std::to_string(max_banks));
    if (bank >= num_banks()) bank_tasks.resize(bank + 1);
    bank_tasks[static_cast<std::size_t>(bank)].push_back(task);
  }

  int bank_of(int task) const {
    for (int b = 0; b < num_banks(); ++b)
      for (int t : bank_tasks[static_cast<std::size_t>(b)])
        if (t == task) return b;
    throw InputError("task " + std::to_string(task) + " not in any bank");
  }

  int prefix_of(int task) const {
    const int b = bank_of(task);
    const auto& tasks = bank_tasks[static_cast<std::size_t>(b)];
    for (std::size_t i = 0; i < tasks.size(); ++i)
      if (tasks[i] == task) return static_cast<int>(i);
    return 0;
  }
};

struct WeightCode {
  std::string bank;    // bank_field_bits chars
  std::string prefix;  // prefix_field_bits chars of the bank
  std::string key;     // psi chars
  std::string joined() const;  // fields separated by single spaces
};

WeightCode encode_weight(const BankLayout& layout,
                         const std::vector<Codebook>& codebooks, int task,
                         int key);

struct DecodedWeight {
  int bank = 0;
  int task = 0;
  int key = 0;
  float value = 0.0f;
};

// Parses a bank|prefix|key bitstring (spaces ignored) against the layout and
// resolves the centroid value in the given layer's table.
DecodedWeight decode_weight(const std::string& bits, const BankLayout& layout,
                            const std::vector<Codebook>& codebooks, int layer);

// Disjoint bit ranges carved out of the 32-bit weight slot, one per bank:
// width = prefix bits + widest key among the bank's tasks.
std::vector<std::pair<int, int>> bank_bit_ranges(
    const BankLayout& layout, const std::vector<Codebook>& codebooks);

}  // namespace subnetcl::quant
