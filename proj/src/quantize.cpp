// SPDX-License-Identifier: Apache-2.0

#include "subnetcl/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace subnetcl::quant {

namespace {

struct SortedView {
  std::vector<double> values;  // ascending
  std::vector<double> sum;     // prefix sums, sum[i] = x0+..+x_{i-1}
  std::vector<double> sumsq;

  explicit SortedView(std::vector<double> v) : values(std::move(v)) {
    std::sort(values.begin(), values.end());
    sum.resize(values.size() + 1, 0.0);
    sumsq.resize(values.size() + 1, 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      sum[i + 1] = sum[i] + values[i];
      sumsq[i + 1] = sumsq[i] + values[i] * values[i];
    }
  }

  // within-cluster squared error of values[a..b] around their mean
  double cost(std::size_t a, std::size_t b) const {
    const double n = static_cast<double>(b - a + 1);
    const double s = sum[b + 1] - sum[a];
    const double q = sumsq[b + 1] - sumsq[a];
    return std::max(0.0, q - s * s / n);
  }

  double mean(std::size_t a, std::size_t b) const {
    return (sum[b + 1] - sum[a]) / static_cast<double>(b - a + 1);
  }
};

// Exact 1-D k-means: the optimal clustering is contiguous in sorted order, so
// dynamic programming over split points finds the global optimum.
std::vector<double> kmeans_exact(const SortedView& sv, int k) {
  const std::size_t n = sv.values.size();
  const auto uk = static_cast<std::size_t>(k);
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best(uk + 1, std::vector<double>(n, inf));
  std::vector<std::vector<std::size_t>> split(uk + 1,
                                              std::vector<std::size_t>(n, 0));
  for (std::size_t j = 0; j < n; ++j) best[1][j] = sv.cost(0, j);
  for (std::size_t m = 2; m <= uk; ++m) {
    for (std::size_t j = m - 1; j < n; ++j) {
      for (std::size_t i = m - 1; i <= j; ++i) {
        const double c = best[m - 1][i - 1] + sv.cost(i, j);
        if (c < best[m][j]) {
          best[m][j] = c;
          split[m][j] = i;
        }
      }
    }
  }
  std::vector<double> centroids(uk);
  std::size_t j = n - 1;
  for (std::size_t m = uk; m >= 1; --m) {
    const std::size_t i = (m == 1) ? 0 : split[m][j];
    centroids[m - 1] = sv.mean(i, j);
    if (m > 1) j = i - 1;
  }
  return centroids;
}

struct LloydOutcome {
  std::vector<double> centroids;
  double inertia = 0.0;
};

// Cluster boundaries for sorted data: index of the first value strictly above
// the midpoint between adjacent centroids (equidistant values go left).
std::vector<std::size_t> boundaries(const SortedView& sv,
                                    const std::vector<double>& centroids) {
  std::vector<std::size_t> b(centroids.size() + 1, 0);
  b[centroids.size()] = sv.values.size();
  for (std::size_t i = 0; i + 1 < centroids.size(); ++i) {
    const double mid = 0.5 * (centroids[i] + centroids[i + 1]);
    b[i + 1] = static_cast<std::size_t>(
        std::upper_bound(sv.values.begin(), sv.values.end(), mid) -
        sv.values.begin());
  }
  return b;
}

LloydOutcome lloyd_once(const SortedView& sv, int k, Rng& rng) {
  const std::size_t n = sv.values.size();
  const auto uk = static_cast<std::size_t>(k);

  // k-means++ seeding on the sorted values
  std::vector<double> centroids;
  centroids.push_back(sv.values[rng.below(n)]);
  std::vector<double> d2(n);
  for (std::size_t added = 1; added < uk; ++added) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centroids)
        best = std::min(best, (sv.values[i] - c) * (sv.values[i] - c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) break;  // fewer distinct values than k
    const double draw = rng.uniform() * total;
    double acc = 0.0;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      acc += d2[i];
      if (acc > draw) {
        pick = i;
        break;
      }
    }
    centroids.push_back(sv.values[pick]);
  }
  std::sort(centroids.begin(), centroids.end());

  double prev_inertia = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 100; ++iter) {
    std::vector<std::size_t> b = boundaries(sv, centroids);
    // relocate empty clusters to the far end of the worst segment
    for (std::size_t i = 0; i < centroids.size(); ++i) {
      if (b[i + 1] > b[i]) continue;
      std::size_t worst = 0;
      double worst_cost = -1.0;
      for (std::size_t m = 0; m < centroids.size(); ++m) {
        if (b[m + 1] <= b[m]) continue;
        const double c = sv.cost(b[m], b[m + 1] - 1);
        if (c > worst_cost) {
          worst_cost = c;
          worst = m;
        }
      }
      const std::size_t lo = b[worst], hi = b[worst + 1] - 1;
      const double mu = sv.mean(lo, hi);
      centroids[i] = (std::abs(sv.values[lo] - mu) >= std::abs(sv.values[hi] - mu))
                         ? sv.values[lo]
                         : sv.values[hi];
      std::sort(centroids.begin(), centroids.end());
      b = boundaries(sv, centroids);
    }
    double inertia = 0.0;
    for (std::size_t i = 0; i < centroids.size(); ++i) {
      if (b[i + 1] <= b[i]) continue;
      centroids[i] = sv.mean(b[i], b[i + 1] - 1);
      inertia += sv.cost(b[i], b[i + 1] - 1);
    }
    std::sort(centroids.begin(), centroids.end());
    if (prev_inertia - inertia <= 1e-6 * std::max(prev_inertia, 1e-300) &&
        iter > 0)
      break;
    prev_inertia = inertia;
  }
  std::vector<std::size_t> b = boundaries(sv, centroids);
  double inertia = 0.0;
  for (std::size_t i = 0; i < centroids.size(); ++i)
    if (b[i + 1] > b[i]) inertia += sv.cost(b[i], b[i + 1] - 1);
  return {std::move(centroids), inertia};
}

constexpr std::size_t kExactCutoffN = 2048;
constexpr int kExactCutoffK = 64;
constexpr int kLloydRestarts = 4;

}  // namespace

KMeansResult kmeans_1d(const std::vector<double>& values, int k,
                       std::uint64_t seed) {
  if (values.empty()) throw InputError("kmeans_1d: empty values");
  if (k < 1) throw InputError("kmeans_1d: k must be >= 1");

  KMeansResult out;
  std::vector<double> distinct = values;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (static_cast<int>(distinct.size()) <= k) {
    out.centroids = std::move(distinct);
  } else {
    SortedView sv(values);
    if (values.size() <= kExactCutoffN && k <= kExactCutoffK) {
      out.centroids = kmeans_exact(sv, k);
    } else {
      LloydOutcome best;
      best.inertia = std::numeric_limits<double>::infinity();
      for (int r = 0; r < kLloydRestarts; ++r) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(r) + 0x517Cull));
        LloydOutcome o = lloyd_once(sv, k, rng);
        if (o.inertia < best.inertia) best = std::move(o);
      }
      out.centroids = std::move(best.centroids);
    }
  }
  out.assignments.reserve(values.size());
  out.inertia = 0.0;
  for (double v : values) {
    const int a = nearest_centroid(out.centroids, v);
    out.assignments.push_back(a);
    const double d = v - out.centroids[static_cast<std::size_t>(a)];
    out.inertia += d * d;
  }
  return out;
}

namespace {

std::string to_bits(int value, int width) {
  std::string s(static_cast<std::size_t>(width), '0');
  for (int i = 0; i < width; ++i)
    if (value & (1 << (width - 1 - i))) s[static_cast<std::size_t>(i)] = '1';
  return s;
}

}  // namespace

std::string WeightCode::joined() const {
  std::string s;
  for (const std::string* part : {&bank, &prefix, &key}) {
    if (part->empty()) continue;
    if (!s.empty()) s += ' ';
    s += *part;
  }
  return s;
}

WeightCode encode_weight(const BankLayout& layout,
                         const std::vector<Codebook>& codebooks, int task,
                         int key) {
  const int bank = layout.bank_of(task);
  const int psi = codebooks.at(static_cast<std::size_t>(task)).bitwidth;
  if (key < 0 || key >= (1 << psi))
    throw InputError("key " + std::to_string(key) + " out of range for " +
                     std::to_string(psi) + "-bit codebook");
  WeightCode code;
  code.bank = to_bits(bank, layout.bank_field_bits());
  code.prefix = to_bits(layout.prefix_of(task), layout.prefix_field_bits(bank));
  code.key = to_bits(key, psi);
  return code;
}

DecodedWeight decode_weight(const std::string& bits, const BankLayout& layout,
                            const std::vector<Codebook>& codebooks, int layer) {
  std::string s;
  for (char c : bits) {
    if (c == ' ') continue;
    if (c != '0' && c != '1')
      throw DecodeError(std::string("invalid bit character '") + c + "'");
    s += c;
  }
  std::size_t pos = 0;
  auto take = [&](int width, const char* what) {
    if (pos + static_cast<std::size_t>(width) > s.size())
      throw DecodeError(std::string("bitstring too short reading ") + what);
    int v = 0;
    for (int i = 0; i < width; ++i) v = (v << 1) | (s[pos++] == '1' ? 1 : 0);
    return v;
  };

  DecodedWeight out;
  out.bank = take(layout.bank_field_bits(), "bank");
  if (out.bank >= layout.num_banks())
    throw DecodeError("unknown bank " + std::to_string(out.bank));
  const int prefix = take(layout.prefix_field_bits(out.bank), "prefix");
  const auto& tasks = layout.bank_tasks[static_cast<std::size_t>(out.bank)];
  if (prefix >= static_cast<int>(tasks.size()))
    throw DecodeError("unknown prefix " + std::to_string(prefix) + " in bank " +
                      std::to_string(out.bank));
  out.task = tasks[static_cast<std::size_t>(prefix)];
  const Codebook& cb = codebooks.at(static_cast<std::size_t>(out.task));
  out.key = take(cb.bitwidth, "key");
  if (pos != s.size())
    throw DecodeError("trailing bits after key");
  if (layer < 0 || layer >= static_cast<int>(cb.tables.size()))
    throw InputError("layer " + std::to_string(layer) + " out of range");
  const auto& table = cb.tables[static_cast<std::size_t>(layer)];
  if (out.key >= static_cast<int>(table.size()))
    throw DecodeError("key " + std::to_string(out.key) +
                      " has no centroid in layer " + std::to_string(layer));
  out.value = table[static_cast<std::size_t>(out.key)];
  return out;
}

std::vector<std::pair<int, int>> bank_bit_ranges(
    const BankLayout& layout, const std::vector<Codebook>& codebooks) {
  std::vector<std::pair<int, int>> ranges;
  int offset = 0;
  for (int b = 0; b < layout.num_banks(); ++b) {
    int widest_key = 0;
    for (int t : layout.bank_tasks[static_cast<std::size_t>(b)])
      widest_key = std::max(widest_key,
                            codebooks.at(static_cast<std::size_t>(t)).bitwidth);
    const int width = layout.prefix_field_bits(b) + widest_key;
    ranges.emplace_back(offset, width);
    offset += width;
  }
  if (offset > 32)
    throw CapacityError("bank bit ranges exceed the 32-bit weight slot");
  return ranges;
}

}  // namespace subnetcl::quant
