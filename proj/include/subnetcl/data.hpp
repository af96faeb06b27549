// SPDX-License-Identifier: Apache-2.0
//
// Dataset ingestion and continual-learning scenario construction: IDX file
// parsing, permuted / split-by-class / synthetic task streams, and a seeded
// glyph corpus for runs without external data.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "subnetcl/types.hpp"

namespace subnetcl::data {

struct Dataset {
  MatF x;  // one row per sample, values in [0,1]
  std::vector<int> labels;

  Eigen::Index size() const { return x.rows(); }
};

struct TaskDataset {
  int task = 0;
  Dataset train, valid, test;
  std::vector<int> classes;  // original class ids covered by this task

  int num_classes() const { return static_cast<int>(classes.size()); }
};

enum class ScenarioKind { kPermuted, kSplit, kSynthetic };

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::kSynthetic;
  int tasks = 1;
  double valid_fraction = 0.1;
  int subsample_per_task = 0;  // stratified train subsample; 0 keeps all
  int classes_per_task = 0;    // split only
  // synthetic only: seeded Gaussian clusters per class per task
  int synth_dim = 16;
  int synth_classes = 4;
  int synth_train_per_class = 64;
  int synth_test_per_class = 32;
  double synth_spread = 0.05;
};

// Parses the big-endian IDX pair bit-exactly; bytes scale to [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Inverse of load_idx (values quantized back to bytes).
void write_idx(const Dataset& d, const std::string& images_path,
               const std::string& labels_path, int rows = 28, int cols = 28);

// Builds the task stream. Permuted and split scenarios consume the base
// datasets; synthetic ones ignore them. Deterministic per (spec, seed).
std::vector<TaskDataset> make_scenario(const ScenarioSpec& spec,
                                       const Dataset& train_base,
                                       const Dataset& test_base,
                                       std::uint64_t seed);

// Seven-segment digit glyphs (28x28, 10 classes) with per-sample stroke
// jitter, translation, and pixel noise; a self-contained stand-in for
// handwritten-digit corpora.
Dataset make_glyph_corpus(int per_class, std::uint64_t seed);

}  // namespace subnetcl::data
