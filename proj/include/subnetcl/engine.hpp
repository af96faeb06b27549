// SPDX-License-Identifier: Apache-2.0
//
// End-to-end orchestration: per-task routing, masked training with periodic
// adaptive quantization, mask consolidation, fine-tuned pruning, metric
// bookkeeping, checkpointing, and report emission.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "subnetcl/data.hpp"
#include "subnetcl/finetune.hpp"
#include "subnetcl/masks.hpp"
#include "subnetcl/metrics.hpp"
#include "subnetcl/network.hpp"
#include "subnetcl/quantize.hpp"
#include "subnetcl/routing.hpp"

namespace subnetcl::engine {

struct RunConfig {
  data::ScenarioSpec scenario;
  std::string train_images, train_labels, test_images, test_labels;

  std::vector<int> model_dims{16, 16, 4};
  routing::RunMode mode = routing::RunMode::kTsnWr;
  routing::RoutingRule routing_rule = routing::RoutingRule::kBreak;

  double c = 0.5;  // initial capacity per task
  int epochs = 15;
  int batch_size = 256;
  double lr_start = 0.3;
  double lr_end = 1e-4;
  double omega = 0.5;       // KL threshold
  double delta_acc = 0.005; // max accuracy loss per quantization
  int psi0 = 2;             // initial bit-width
  int s_r = 50;             // replay samples per task
  int max_banks = 2;
  int quant_triggers_per_epoch = 3;
  double distill_weight = 0.1;
  finetune::FinetuneParams finetune;
  double fp_flops_factor = metrics::kDefaultFullPrecisionFactor;

  std::uint64_t seed = 1;
  std::string out_dir;
  bool resume = true;
  int stop_after_task = 0;  // > 0: checkpoint and stop after that many tasks

  void validate() const;
  // Canonical key=value echo; doubles as the resume-compatibility identity.
  std::string canonical_text() const;
};

RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);

struct TaskRecord {
  int task = 0;
  int bank = 0;
  int shared_with = -1;
  bool shared_pool = false;  // tsn-wr: score-driven pool over all slots
  bool fallback = false;     // bank budget exhausted, forced sharing
  std::map<int, double> kl_values;

  int psi = 0;
  bool quant_warning = false;
  // min over triggers of acc_after - (acc_before - delta); >= 0 means the
  // adaptive quantization bound held at every trigger
  double min_quant_margin = 0.0;

  double acc_valid_before_ft = 0.0;
  double acc_valid_after_ft = 0.0;
  double sparsity_before_ft = 1.0;
  double sparsity_after_ft = 1.0;
  bool gamma_monotone = true;  // fitness never decreased during fine-tuning

  metrics::CapacityReport capacity;
  bool freeze_ok = true;
  double train_seconds = 0.0;  // stdout only, never serialized
};

struct RunReport {
  MatD accuracy;  // T x T, row i = evaluated after training task i
  std::vector<TaskRecord> tasks;
  metrics::LifelongMetrics lifelong;
  double final_sparsity = 1.0;      // consolidated, post fine-tuning
  double final_sparsity_raw = 1.0;  // consolidated over pre-finetune masks
  bool completed = false;
  bool capacity_exhausted = false;
  int tasks_done = 0;
  std::string config_echo;
  double total_seconds = 0.0;
};

// Full training state; everything needed to resume at a task boundary.
struct EngineState {
  nn::ModelSpec spec;
  std::vector<LayerMats<float>> planes;  // per-bank full-precision weights
  LayerMats<float> scores;
  masks::MaskSet maskset;
  MaskLayers consolidated_raw;  // OR over pre-finetune task masks
  quant::BankLayout layout;
  std::vector<quant::Codebook> codebooks;      // per task
  std::vector<routing::ReplayBuffer> replay;   // per task (tsn mode)
  std::vector<TaskRecord> records;
  std::vector<std::vector<double>> accuracy_rows;
  std::vector<double> random_baseline;  // chance accuracy per task, for FWT
  int tasks_done = 0;
};

// Runs (or resumes) the scenario, checkpointing after every task and writing
// reports into config.out_dir when set.
RunReport run_scenario(const RunConfig& config);

// Writes accuracy_matrix.csv and capacity.json into out_dir and prints the
// summary table to stdout.
void emit_reports(const RunReport& report, const std::string& out_dir);

// Rebuilds the report from a checkpoint (for `report` / `inspect-codebook`).
RunReport report_from_state(const EngineState& state,
                            const std::string& config_echo);

}  // namespace subnetcl::engine
