// SPDX-License-Identifier: Apache-2.0

#include "subnetcl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "subnetcl/errors.hpp"
#include "subnetcl/rng.hpp"

namespace subnetcl::data {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_u32_be(std::ifstream& in, const std::string& path,
                          std::uint64_t offset) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (in.gcount() != 4)
    throw ParseError(path + ": truncated at byte offset " +
                     std::to_string(offset));
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

void write_u32_be(std::ofstream& out, std::uint32_t v) {
  const unsigned char buf[4] = {
      static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
      static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(buf), 4);
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%08x", v);
  return buf;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot open " + images_path);
  const std::uint32_t img_magic = read_u32_be(img, images_path, 0);
  if (img_magic != kImageMagic)
    throw ParseError(images_path + ": wrong magic " + hex32(img_magic) +
                     " at offset 0, expected " + hex32(kImageMagic));
  const std::uint32_t count = read_u32_be(img, images_path, 4);
  const std::uint32_t rows = read_u32_be(img, images_path, 8);
  const std::uint32_t cols = read_u32_be(img, images_path, 12);
  const std::uint64_t pixels =
      std::uint64_t(count) * std::uint64_t(rows) * std::uint64_t(cols);
  std::vector<unsigned char> raw(pixels);
  img.read(reinterpret_cast<char*>(raw.data()),
           static_cast<std::streamsize>(pixels));
  if (static_cast<std::uint64_t>(img.gcount()) != pixels)
    throw ParseError(images_path + ": truncated payload at byte offset " +
                     std::to_string(16 + img.gcount()) + ", expected " +
                     std::to_string(pixels) + " pixel bytes");

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("cannot open " + labels_path);
  const std::uint32_t lab_magic = read_u32_be(lab, labels_path, 0);
  if (lab_magic != kLabelMagic)
    throw ParseError(labels_path + ": wrong magic " + hex32(lab_magic) +
                     " at offset 0, expected " + hex32(kLabelMagic));
  const std::uint32_t lab_count = read_u32_be(lab, labels_path, 4);
  if (lab_count != count)
    throw ParseError("image/label count mismatch: " + std::to_string(count) +
                     " images vs " + std::to_string(lab_count) + " labels");
  std::vector<unsigned char> raw_labels(lab_count);
  lab.read(reinterpret_cast<char*>(raw_labels.data()), lab_count);
  if (static_cast<std::uint32_t>(lab.gcount()) != lab_count)
    throw ParseError(labels_path + ": truncated payload at byte offset " +
                     std::to_string(8 + lab.gcount()));

  Dataset d;
  d.x.resize(count, static_cast<Eigen::Index>(rows) * cols);
  for (std::uint32_t i = 0; i < count; ++i)
    for (std::uint32_t p = 0; p < rows * cols; ++p)
      d.x(i, p) = static_cast<float>(raw[std::uint64_t(i) * rows * cols + p]) /
                  255.0f;
  d.labels.assign(raw_labels.begin(), raw_labels.end());
  return d;
}

void write_idx(const Dataset& d, const std::string& images_path,
               const std::string& labels_path, int rows, int cols) {
  if (d.x.cols() != static_cast<Eigen::Index>(rows) * cols)
    throw InputError("write_idx: sample width != rows*cols");
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot open " + images_path + " for writing");
  write_u32_be(img, kImageMagic);
  write_u32_be(img, static_cast<std::uint32_t>(d.x.rows()));
  write_u32_be(img, static_cast<std::uint32_t>(rows));
  write_u32_be(img, static_cast<std::uint32_t>(cols));
  for (Eigen::Index i = 0; i < d.x.rows(); ++i)
    for (Eigen::Index p = 0; p < d.x.cols(); ++p) {
      const auto b = static_cast<unsigned char>(
          std::lround(std::clamp(d.x(i, p), 0.0f, 1.0f) * 255.0f));
      img.write(reinterpret_cast<const char*>(&b), 1);
    }
  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("cannot open " + labels_path + " for writing");
  write_u32_be(lab, kLabelMagic);
  write_u32_be(lab, static_cast<std::uint32_t>(d.labels.size()));
  for (int l : d.labels) {
    const auto b = static_cast<unsigned char>(l);
    lab.write(reinterpret_cast<const char*>(&b), 1);
  }
}

namespace {

std::map<int, std::vector<Eigen::Index>> group_by_class(
    const std::vector<int>& labels) {
  std::map<int, std::vector<Eigen::Index>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i)
    by_class[labels[i]].push_back(static_cast<Eigen::Index>(i));
  return by_class;
}

Dataset take_rows(const Dataset& d, const std::vector<Eigen::Index>& rows) {
  Dataset out;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), d.x.cols());
  out.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.x.row(static_cast<Eigen::Index>(i)) = d.x.row(rows[i]);
    out.labels[i] = d.labels[static_cast<std::size_t>(rows[i])];
  }
  return out;
}

// Stratified draw of n samples (all if n == 0 or n >= size), seeded.
std::vector<Eigen::Index> stratified_sample(const std::vector<int>& labels,
                                            int n, Rng& rng) {
  auto by_class = group_by_class(labels);
  std::vector<Eigen::Index> chosen;
  if (n <= 0 || n >= static_cast<int>(labels.size())) {
    chosen.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
      chosen[i] = static_cast<Eigen::Index>(i);
    return chosen;
  }
  const int num_classes = static_cast<int>(by_class.size());
  std::vector<Eigen::Index> leftover;
  int cls_idx = 0;
  for (auto& [cls, idx] : by_class) {
    int quota = n / num_classes + (cls_idx < n % num_classes ? 1 : 0);
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
  if (static_cast<int>(chosen.size()) < n) {
    const auto picks = rng.sample_indices(
        leftover.size(), static_cast<std::size_t>(n) - chosen.size());
    for (std::size_t p : picks) chosen.push_back(leftover[p]);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

// Splits off a stratified validation fraction; remaining rows stay in train.
void split_valid(Dataset& train, Dataset& valid, double fraction, Rng& rng) {
  auto by_class = group_by_class(train.labels);
  std::vector<Eigen::Index> valid_rows;
  for (auto& [cls, idx] : by_class) {
    const auto quota = static_cast<std::size_t>(
        std::floor(fraction * static_cast<double>(idx.size())));
    const auto picks = rng.sample_indices(idx.size(), quota);
    for (std::size_t p : picks) valid_rows.push_back(idx[p]);
  }
  std::sort(valid_rows.begin(), valid_rows.end());
  std::vector<bool> is_valid(train.labels.size(), false);
  for (Eigen::Index r : valid_rows) is_valid[static_cast<std::size_t>(r)] = true;
  std::vector<Eigen::Index> train_rows;
  for (std::size_t i = 0; i < train.labels.size(); ++i)
    if (!is_valid[i]) train_rows.push_back(static_cast<Eigen::Index>(i));
  const Dataset base = train;
  valid = take_rows(base, valid_rows);
  train = take_rows(base, train_rows);
}

std::vector<Eigen::Index> pixel_permutation(Eigen::Index dim, std::uint64_t seed) {
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(dim));
  for (Eigen::Index i = 0; i < dim; ++i) perm[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(perm);
  return perm;
}

void apply_permutation(Dataset& d, const std::vector<Eigen::Index>& perm) {
  MatF permuted(d.x.rows(), d.x.cols());
  for (Eigen::Index c = 0; c < d.x.cols(); ++c)
    permuted.col(c) = d.x.col(perm[static_cast<std::size_t>(c)]);
  d.x = std::move(permuted);
}

}  // namespace

std::vector<TaskDataset> make_scenario(const ScenarioSpec& spec,
                                       const Dataset& train_base,
                                       const Dataset& test_base,
                                       std::uint64_t seed) {
  if (spec.tasks < 1) throw ConfigError("scenario needs at least one task");
  std::vector<TaskDataset> tasks;

  if (spec.kind == ScenarioKind::kSynthetic) {
    for (int t = 0; t < spec.tasks; ++t) {
      TaskDataset task;
      task.task = t;
      for (int c = 0; c < spec.synth_classes; ++c) task.classes.push_back(c);
      Rng mean_rng(mix_seed(seed, 0x7000 + static_cast<std::uint64_t>(t)));
      std::vector<VecF> means;
      for (int c = 0; c < spec.synth_classes; ++c) {
        VecF mu(spec.synth_dim);
        for (int d = 0; d < spec.synth_dim; ++d)
          mu(d) = static_cast<float>(mean_rng.uniform(0.15, 0.85));
        means.push_back(std::move(mu));
      }
      auto draw = [&](int per_class, Rng& rng) {
        Dataset d;
        d.x.resize(per_class * spec.synth_classes, spec.synth_dim);
        d.labels.resize(static_cast<std::size_t>(d.x.rows()));
        Eigen::Index row = 0;
        for (int c = 0; c < spec.synth_classes; ++c)
          for (int i = 0; i < per_class; ++i, ++row) {
            for (int k = 0; k < spec.synth_dim; ++k)
              d.x(row, k) = std::clamp(
                  static_cast<float>(means[c](k) +
                                     rng.normal(0.0, spec.synth_spread)),
                  0.0f, 1.0f);
            d.labels[static_cast<std::size_t>(row)] = c;
          }
        return d;
      };
      Rng train_rng(mix_seed(seed, 0x7100 + static_cast<std::uint64_t>(t)));
      Rng test_rng(mix_seed(seed, 0x7200 + static_cast<std::uint64_t>(t)));
      task.train = draw(spec.synth_train_per_class, train_rng);
      task.test = draw(spec.synth_test_per_class, test_rng);
      Rng valid_rng(mix_seed(seed, 0x7300 + static_cast<std::uint64_t>(t)));
      split_valid(task.train, task.valid, spec.valid_fraction, valid_rng);
      tasks.push_back(std::move(task));
    }
    return tasks;
  }

  if (train_base.size() == 0 || test_base.size() == 0)
    throw ConfigError("permuted/split scenarios need base train and test data");

  if (spec.kind == ScenarioKind::kPermuted) {
    for (int t = 0; t < spec.tasks; ++t) {
      TaskDataset task;
      task.task = t;
      {
        std::map<int, bool> seen;
        for (int l : train_base.labels) seen[l] = true;
        for (auto& [cls, _] : seen) task.classes.push_back(cls);
      }
      Rng sub_rng(mix_seed(seed, 0x5100 + static_cast<std::uint64_t>(t)));
      task.train = take_rows(
          train_base,
          stratified_sample(train_base.labels, spec.subsample_per_task, sub_rng));
      task.test = test_base;
      Rng valid_rng(mix_seed(seed, 0x5200 + static_cast<std::uint64_t>(t)));
      split_valid(task.train, task.valid, spec.valid_fraction, valid_rng);
      if (t > 0) {  // task 0 keeps the identity permutation
        const auto perm = pixel_permutation(
            train_base.x.cols(), mix_seed(seed, 0x5300 + static_cast<std::uint64_t>(t)));
        apply_permutation(task.train, perm);
        apply_permutation(task.valid, perm);
        apply_permutation(task.test, perm);
      }
      tasks.push_back(std::move(task));
    }
    return tasks;
  }

  // split-by-class
  auto train_by_class = group_by_class(train_base.labels);
  std::vector<int> all_classes;
  for (auto& [cls, _] : train_by_class) all_classes.push_back(cls);
  if (spec.classes_per_task < 1)
    throw ConfigError("split scenario needs classes_per_task >= 1");
  if (spec.tasks * spec.classes_per_task > static_cast<int>(all_classes.size()))
    throw ConfigError("split scenario infeasible: " + std::to_string(spec.tasks) +
                      " tasks x " + std::to_string(spec.classes_per_task) +
                      " classes exceed " + std::to_string(all_classes.size()) +
                      " available classes");
  auto test_by_class = group_by_class(test_base.labels);
  for (int t = 0; t < spec.tasks; ++t) {
    TaskDataset task;
    task.task = t;
    std::map<int, int> relabel;
    for (int c = 0; c < spec.classes_per_task; ++c) {
      const int cls = all_classes[static_cast<std::size_t>(t * spec.classes_per_task + c)];
      task.classes.push_back(cls);
      relabel[cls] = c;
    }
    auto filter = [&](const Dataset& base,
                      const std::map<int, std::vector<Eigen::Index>>& by_class) {
      std::vector<Eigen::Index> rows;
      for (int cls : task.classes) {
        auto it = by_class.find(cls);
        if (it != by_class.end())
          rows.insert(rows.end(), it->second.begin(), it->second.end());
      }
      std::sort(rows.begin(), rows.end());
      Dataset d = take_rows(base, rows);
      for (auto& l : d.labels) l = relabel.at(l);
      return d;
    };
    task.train = filter(train_base, train_by_class);
    task.test = filter(test_base, test_by_class);
    Rng sub_rng(mix_seed(seed, 0x5100 + static_cast<std::uint64_t>(t)));
    task.train = take_rows(
        task.train,
        stratified_sample(task.train.labels, spec.subsample_per_task, sub_rng));
    Rng valid_rng(mix_seed(seed, 0x5200 + static_cast<std::uint64_t>(t)));
    split_valid(task.train, task.valid, spec.valid_fraction, valid_rng);
    tasks.push_back(std::move(task));
  }
  return tasks;
}

namespace {

struct Point {
  double x, y;
};

constexpr int kGlyphSize = 28;

// seven-segment endpoints
const Point kSegments[7][2] = {
    {{8, 5}, {20, 5}},    // A top
    {{20, 5}, {20, 14}},  // B top right
    {{20, 14}, {20, 23}}, // C bottom right
    {{8, 23}, {20, 23}},  // D bottom
    {{8, 14}, {8, 23}},   // E bottom left
    {{8, 5}, {8, 14}},    // F top left
    {{8, 14}, {20, 14}},  // G middle
};

const char* kDigitSegs[10] = {"ABCDEF", "BC",      "ABGED", "ABGCD", "FGBC",
                              "AFGCD",  "AFGEDC",  "ABC",   "ABCDEFG",
                              "ABCDFG"};

void render_glyph(int digit, Rng& rng, float* out) {
  constexpr double jitter = 1.4, shift = 3.0, noise = 0.08, sigma = 1.15;
  constexpr int steps = 24;
  std::fill(out, out + kGlyphSize * kGlyphSize, 0.0f);
  const double dx = rng.uniform(-shift, shift);
  const double dy = rng.uniform(-shift, shift);
  for (const char* s = kDigitSegs[digit]; *s; ++s) {
    const int seg = *s - 'A';
    Point p0{kSegments[seg][0].x + rng.uniform(-jitter, jitter) + dx,
             kSegments[seg][0].y + rng.uniform(-jitter, jitter) + dy};
    Point p1{kSegments[seg][1].x + rng.uniform(-jitter, jitter) + dx,
             kSegments[seg][1].y + rng.uniform(-jitter, jitter) + dy};
    Point pm{0.5 * (p0.x + p1.x) + rng.uniform(-jitter, jitter),
             0.5 * (p0.y + p1.y) + rng.uniform(-jitter, jitter)};
    const double amp = rng.uniform(0.7, 1.0);
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      const double qx =
          (1 - t) * (1 - t) * p0.x + 2 * (1 - t) * t * pm.x + t * t * p1.x;
      const double qy =
          (1 - t) * (1 - t) * p0.y + 2 * (1 - t) * t * pm.y + t * t * p1.y;
      const int x0 = std::max(0, static_cast<int>(qx) - 3);
      const int x1 = std::min(kGlyphSize - 1, static_cast<int>(qx) + 3);
      const int y0 = std::max(0, static_cast<int>(qy) - 3);
      const int y1 = std::min(kGlyphSize - 1, static_cast<int>(qy) + 3);
      for (int yy = y0; yy <= y1; ++yy)
        for (int xx = x0; xx <= x1; ++xx) {
          const double d2 = (xx - qx) * (xx - qx) + (yy - qy) * (yy - qy);
          const auto v =
              static_cast<float>(amp * std::exp(-d2 / (2 * sigma * sigma)));
          float& px = out[yy * kGlyphSize + xx];
          px = std::max(px, v);
        }
    }
  }
  for (int p = 0; p < kGlyphSize * kGlyphSize; ++p)
    out[p] = std::clamp(out[p] + static_cast<float>(rng.normal(0.0, noise)),
                        0.0f, 1.0f);
}

}  // namespace

Dataset make_glyph_corpus(int per_class, std::uint64_t seed) {
  Dataset d;
  d.x.resize(static_cast<Eigen::Index>(per_class) * 10,
             kGlyphSize * kGlyphSize);
  d.labels.resize(static_cast<std::size_t>(d.x.rows()));
  std::vector<float> buf(kGlyphSize * kGlyphSize);
  Eigen::Index row = 0;
  for (int cls = 0; cls < 10; ++cls) {
    Rng rng(mix_seed(seed, 0x61F0 + static_cast<std::uint64_t>(cls)));
    for (int i = 0; i < per_class; ++i, ++row) {
      render_glyph(cls, rng, buf.data());
      for (int p = 0; p < kGlyphSize * kGlyphSize; ++p) d.x(row, p) = buf[p];
      d.labels[static_cast<std::size_t>(row)] = cls;
    }
  }
  // interleave classes
  std::vector<Eigen::Index> order(static_cast<std::size_t>(d.x.rows()));
  for (std::size_t i = 0; i < order.size(); ++i)
    order[i] = static_cast<Eigen::Index>(i);
  Rng rng(mix_seed(seed, 0x6200));
  rng.shuffle(order);
  return take_rows(d, order);
}

}  // namespace subnetcl::data
