// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// fails. argv[1] is the CLI binary (used for the codebook-inspection check).

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "subnetcl/checkpoint.hpp"
#include "subnetcl/data.hpp"
#include "subnetcl/engine.hpp"
#include "subnetcl/huffman.hpp"
#include "subnetcl/masks.hpp"
#include "subnetcl/metrics.hpp"
#include "subnetcl/quantize.hpp"
#include "subnetcl/routing.hpp"

using namespace subnetcl;

namespace {

int g_failures = 0;

void report(int criterion, bool ok, const std::string& what) {
  std::printf("[%s] criterion %2d: %s\n", ok ? "PASS" : "FAIL", criterion,
              what.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

MaskLayers fig2_mask(std::initializer_list<int> l0, std::initializer_list<int> l1) {
  MaskLayers m(2);
  m[0].resize(3, 2);
  m[1].resize(2, 3);
  auto it = l0.begin();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) m[0](r, c) = static_cast<std::uint8_t>(*it++);
  it = l1.begin();
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) m[1](r, c) = static_cast<std::uint8_t>(*it++);
  return m;
}

// --- criterion 1: case-study capacity walkthrough, exact -------------------

void criterion_1() {
  masks::MaskSet set;
  std::vector<quant::Codebook> books;
  std::array<std::int64_t, 3> caps{};

  set.add_task(fig2_mask({1, 1, 1, 1, 0, 0}, {1, 1, 1, 1, 0, 0}), 0);
  books.push_back({2, 0, 0, {{}, {}}});
  auto rep = metrics::capacity(set, books, 2, metrics::CapacityMode::kPerTaskShared);
  caps[0] = rep.cap_total_bits;
  const std::int64_t original = rep.original_bits;

  set.add_task(fig2_mask({1, 1, 1, 1, 1, 0}, {1, 1, 1, 1, 1, 0}), 0);
  books.push_back({1, 0, 1, {{}, {}}});
  caps[1] = metrics::capacity(set, books, 2, metrics::CapacityMode::kPerTaskShared)
                .cap_total_bits;

  set.add_task(fig2_mask({1, 0, 1, 1, 1, 0}, {0, 1, 1, 1, 1, 0}), 0);
  books.push_back({0, 0, 2, {{}, {}}});
  caps[2] = metrics::capacity(set, books, 2, metrics::CapacityMode::kPerTaskShared)
                .cap_total_bits;

  const bool ok = original == 384 && caps[0] == 152 && caps[1] == 220 && caps[2] == 220;
  report(1, ok,
         "case-study capacity 384 -> " + std::to_string(caps[0]) + " -> " +
             std::to_string(caps[1]) + " -> " + std::to_string(caps[2]) +
             " bits (per-task-shared, zero tolerance)");
}

// --- criteria 2/3/4/6 share the end-to-end runs ----------------------------

engine::RunConfig synthetic_config(int tasks, routing::RunMode mode) {
  engine::RunConfig cfg;
  cfg.scenario.kind = data::ScenarioKind::kSynthetic;
  cfg.scenario.tasks = tasks;
  cfg.scenario.synth_dim = 12;
  cfg.scenario.synth_classes = 3;
  cfg.scenario.synth_train_per_class = 40;
  cfg.scenario.synth_test_per_class = 15;
  cfg.scenario.synth_spread = 0.08;
  cfg.model_dims = {12, 10, 3};
  cfg.mode = mode;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.lr_start = 0.2;
  cfg.lr_end = 0.02;
  cfg.omega = 5.0;
  cfg.s_r = 9;
  cfg.finetune.iterations = 6;
  cfg.seed = 4;
  return cfg;
}

struct DeskArtifacts {
  engine::RunReport report;
  double seconds = 0.0;
  std::string out_dir;
};

DeskArtifacts run_desk(const std::string& data_dir) {
  const auto train = data::make_glyph_corpus(1200, 1);
  const auto test = data::make_glyph_corpus(200, mix_seed(1, 0x7E57));
  data::write_idx(train, data_dir + "/train-images-idx3-ubyte",
                  data_dir + "/train-labels-idx1-ubyte");
  data::write_idx(test, data_dir + "/t10k-images-idx3-ubyte",
                  data_dir + "/t10k-labels-idx1-ubyte");

  engine::RunConfig cfg;
  cfg.scenario.kind = data::ScenarioKind::kPermuted;
  cfg.scenario.tasks = 5;
  cfg.scenario.subsample_per_task = 10000;
  cfg.scenario.valid_fraction = 0.1;
  cfg.train_images = data_dir + "/train-images-idx3-ubyte";
  cfg.train_labels = data_dir + "/train-labels-idx1-ubyte";
  cfg.test_images = data_dir + "/t10k-images-idx3-ubyte";
  cfg.test_labels = data_dir + "/t10k-labels-idx1-ubyte";
  cfg.model_dims = {784, 100, 10};
  cfg.mode = routing::RunMode::kTsnWr;
  cfg.epochs = 15;
  cfg.batch_size = 256;
  cfg.lr_start = 0.3;
  cfg.lr_end = 1e-4;
  cfg.psi0 = 2;
  cfg.delta_acc = 0.005;
  cfg.seed = 1;
  cfg.out_dir = data_dir + "/run";

  DeskArtifacts art;
  art.out_dir = cfg.out_dir;
  const auto start = std::chrono::steady_clock::now();
  art.report = engine::run_scenario(cfg);
  art.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return art;
}

bool forget_free(const engine::RunReport& rep) {
  if (!rep.completed) return false;
  if (rep.lifelong.bwt && *rep.lifelong.bwt != 0.0) return false;
  for (const auto& rec : rep.tasks)
    if (!rec.freeze_ok) return false;
  const auto t = static_cast<Eigen::Index>(rep.tasks_done);
  for (Eigen::Index j = 0; j < t; ++j)
    for (Eigen::Index i = j; i < t; ++i)
      if (rep.accuracy(i, j) != rep.accuracy(j, j)) return false;
  return true;
}

// --- criterion 5: k-means vs brute-force oracle -----------------------------

double segment_cost(const std::vector<double>& v, std::size_t a, std::size_t b) {
  double mean = 0.0;
  for (std::size_t i = a; i < b; ++i) mean += v[i];
  mean /= static_cast<double>(b - a);
  double cost = 0.0;
  for (std::size_t i = a; i < b; ++i) cost += (v[i] - mean) * (v[i] - mean);
  return cost;
}

double best_partition(const std::vector<double>& v, std::size_t from, int groups) {
  if (from == v.size()) return 0.0;
  if (groups == 1) return segment_cost(v, from, v.size());
  double best = segment_cost(v, from, v.size());
  for (std::size_t cut = from + 1; cut < v.size(); ++cut)
    best = std::min(best,
                    segment_cost(v, from, cut) + best_partition(v, cut, groups - 1));
  return best;
}

void criterion_5() {
  Rng rng(20240);
  int failures = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(11));
    const int k = 1 + static_cast<int>(rng.below(3));
    std::vector<double> values(static_cast<std::size_t>(n));
    for (auto& v : values) v = rng.uniform(-4, 4);
    const auto r = quant::kmeans_1d(values, k, 31 + trial);
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    const double opt = best_partition(sorted, 0, k);
    if (r.inertia > opt + 1e-9) ++failures;
  }
  report(5, failures == 0,
         "kmeans_1d inertia <= brute-force optimum + 1e-9 on 200 instances "
         "(n<=12, k<=3), failures=" + std::to_string(failures));
}

// --- criterion 7: huffman codec ---------------------------------------------

void criterion_7() {
  Rng rng(777);
  int bad_roundtrips = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double density = rng.uniform();
    MaskLayers m(1);
    const int rows = 4 + static_cast<int>(rng.below(20));
    const int cols = 4 + static_cast<int>(rng.below(20));
    m[0] = MaskMat::Zero(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c)
        m[0](r, c) = rng.uniform() < density ? 1 : 0;
    const auto enc = huffman::encode_mask(m);
    const auto back = huffman::decode_mask(enc);
    if (back[0] != m[0]) ++bad_roundtrips;
  }

  // structured mask: >= 90% zero bytes
  MaskLayers sparse(1);
  sparse[0] = MaskMat::Zero(128, 80);
  for (Eigen::Index r = 0; r < 128; ++r)
    for (Eigen::Index c = 0; c < 8; ++c)
      sparse[0](r, c) = rng.uniform() < 0.6 ? 1 : 0;
  const auto enc = huffman::encode_mask(sparse);
  const double ratio = static_cast<double>(sparse[0].size()) /
                       static_cast<double>(enc.code.total_bits());
  const bool ok = bad_roundtrips == 0 && ratio > 2.0;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "huffman roundtrip identity on 1000 masks (failures=%d), "
                "compression %.2fx > 2x on 90%% zero bytes",
                bad_roundtrips, ratio);
  report(7, ok, buf);
}

// --- criterion 8: flops row --------------------------------------------------

void criterion_8() {
  const std::vector<int> dims{784, 4096, 10};
  const double factor = 9.49;
  struct Row {
    const char* name;
    double got;
    double want;
  };
  const double f8 = metrics::flops_estimate(dims, 8, 0.0);
  const Row rows[] = {
      {"fp", metrics::flops_estimate(dims, 0, 0.0, factor), 61.7e6},
      {"16b", metrics::flops_estimate(dims, 16, 0.0), 26e6},
      {"8b", f8, 6.5e6},
      {"4b", metrics::flops_estimate(dims, 4, 0.0), 1.62e6},
      {"4b+p", metrics::flops_estimate(dims, 4, 0.412), 0.97e6},
  };
  bool ok = true;
  std::string detail;
  for (const auto& row : rows) {
    const double rel = std::abs(row.got - row.want) / row.want;
    if (rel > 0.03) ok = false;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s %.3fM(%.1f%%) ", row.name,
                  row.got / 1e6, rel * 100);
    detail += buf;
  }
  report(8, ok, "flops row within 3%: " + detail);
}

// --- criterion 9: codebook decoding fixture ----------------------------------

void criterion_9(const std::string& cli) {
  // Figure-2a style layout: two banks so the bank field is one bit, three
  // tasks in bank 0 so the prefix field is two bits, psi 2 keys.
  engine::EngineState state;
  state.spec.layer_dims = {3, 2, 3};
  state.spec.seed = 0;
  const auto ws = nn::init_model<float>(state.spec);
  state.planes.push_back(ws.theta);
  state.scores = ws.scores;
  MaskLayers m = fig2_mask({1, 1, 1, 1, 0, 0}, {1, 1, 1, 1, 0, 0});
  state.maskset.add_task(m, 0);
  state.maskset.add_task(m, 0);
  state.maskset.add_task(m, 0);
  state.maskset.add_task(m, 1);
  state.layout.max_banks = 2;
  state.layout.add_task(0, 0);
  state.layout.add_task(1, 0);
  state.layout.add_task(2, 0);
  state.layout.add_task(3, 1);
  quant::Codebook cb;
  cb.bitwidth = 2;
  cb.bank = 0;
  cb.prefix = 0;
  // key 3 in layer 1 decodes to -0.3576
  cb.tables = {{0.1234f, -0.0521f, 0.2210f, 0.4411f},
               {0.0911f, -0.1133f, 0.3002f, -0.3576f}};
  state.codebooks.push_back(cb);
  for (int t = 1; t < 4; ++t) {
    quant::Codebook other = cb;
    other.bank = t == 3 ? 1 : 0;
    other.prefix = t == 3 ? 0 : t;
    state.codebooks.push_back(other);
  }
  state.random_baseline = {0.5, 0.5, 0.5, 0.5};
  state.accuracy_rows = {{0.9, 0.9, 0.9, 0.9}};
  state.tasks_done = 4;

  const std::string dir = fresh_dir("subnetcl_accept_inspect");
  checkpoint::save(state, "fixture", dir + "/checkpoint.bin");

  const std::string out_file = dir + "/inspect.txt";
  const std::string cmd =
      cli + " inspect-codebook --in " + dir + " --task 0 > " + out_file;
  const int rc = std::system(cmd.c_str());
  const std::string out = slurp(out_file);
  const bool ok = rc == 0 && out.find("0 00 11 -> -0.3576") != std::string::npos;
  report(9, ok, "inspect-codebook prints '0 00 11 -> -0.3576' exactly");
}

// --- criterion 10: routing ---------------------------------------------------

void criterion_10() {
  bool ok = true;
  std::string detail;

  // identical replay buffers route to sharing for any omega > 0
  Rng rng(88);
  routing::ReplayBuffer base;
  base.task = 0;
  base.samples.resize(30, 6);
  for (Eigen::Index i = 0; i < 30; ++i)
    for (Eigen::Index j = 0; j < 6; ++j)
      base.samples(i, j) = static_cast<float>(rng.uniform());
  base.labels.assign(30, 0);
  std::vector<routing::ReplayBuffer> store{base, base};
  store[1].task = 1;
  for (double omega : {1e-9, 0.1, 10.0}) {
    const auto d = routing::route(1, store, omega, routing::RunMode::kTsn, 1, 2);
    if (d.mode != routing::RoutingDecision::Mode::kShareWith ||
        d.share_with != 0 || d.kl_values.at(0) > 1e-12) {
      ok = false;
      detail += "identical-buffer share failed; ";
    }
  }

  // omega = 0 with a 2-bank cap: bank 1 at task 1, fallback share at task 2
  auto cfg = synthetic_config(3, routing::RunMode::kTsn);
  cfg.omega = 0.0;
  cfg.max_banks = 2;
  const auto rep = engine::run_scenario(cfg);
  if (!(rep.completed && rep.tasks[0].bank == 0 && rep.tasks[1].bank == 1 &&
        rep.tasks[2].fallback && rep.tasks[2].shared_with >= 0)) {
    ok = false;
    detail += "omega=0 bank/fallback sequence failed; ";
  }
  report(10, ok,
         detail.empty() ? "routing: kl=0 shares for any omega>0; omega=0 opens "
                          "bank 1 then falls back at task 3"
                        : detail);
}

// --- criterion 11: determinism ----------------------------------------------

void criterion_11() {
  auto cfg = synthetic_config(3, routing::RunMode::kTsn);
  const auto d1 = fresh_dir("subnetcl_accept_det_a");
  const auto d2 = fresh_dir("subnetcl_accept_det_b");
  cfg.out_dir = d1;
  engine::run_scenario(cfg);
  cfg.out_dir = d2;
  engine::run_scenario(cfg);
  const bool ok =
      !slurp(d1 + "/checkpoint.bin").empty() &&
      slurp(d1 + "/checkpoint.bin") == slurp(d2 + "/checkpoint.bin") &&
      slurp(d1 + "/accuracy_matrix.csv") == slurp(d2 + "/accuracy_matrix.csv") &&
      slurp(d1 + "/capacity.json") == slurp(d2 + "/capacity.json");
  report(11, ok, "identical config+seed give byte-identical checkpoint and reports");
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "./subnetcl";
  std::printf("acceptance suite\n");

  criterion_1();

  // synthetic 3-task end-to-end run shared by criteria 2, 4
  const auto synth = engine::run_scenario(synthetic_config(3, routing::RunMode::kTsn));

  // desk-scale 5-task permuted run shared by criteria 2, 3, 4, 6
  const std::string desk_dir = fresh_dir("subnetcl_accept_desk");
  const DeskArtifacts desk = run_desk(desk_dir);

  {
    const bool ok = forget_free(synth) && forget_free(desk.report);
    report(2, ok,
           "forget-free: BWT == 0.0 exactly and frozen weights bit-identical "
           "(synthetic 3-task and desk 5-task)");
  }
  {
    const double acc = desk.report.lifelong.accuracy;
    const double ratio =
        desk.report.tasks.empty() ? 1.0 : desk.report.tasks.back().capacity.ratio;
    const bool ok = desk.report.completed && acc >= 0.90 && ratio <= 0.40 &&
                    desk.seconds <= 1800.0;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "desk 5-task run: lifelong accuracy %.4f >= 0.90, capacity "
                  "ratio %.4f <= 0.40, %.0fs <= 1800s",
                  acc, ratio, desk.seconds);
    report(3, ok, buf);
  }
  {
    bool ok = true;
    double worst = 1e9;
    for (const auto& rep : {synth, desk.report})
      for (const auto& rec : rep.tasks) {
        worst = std::min(worst, rec.min_quant_margin);
        if (rec.min_quant_margin < 0.0 || rec.quant_warning) ok = false;
      }
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "adaptive quantization bound held at every trigger "
                  "(worst margin %+.4f)",
                  worst);
    report(4, ok, buf);
  }

  criterion_5();

  {
    bool monotone = true;
    double gained = 0.0;
    double worst_drop = 0.0;
    for (const auto& rec : desk.report.tasks) {
      if (!rec.gamma_monotone) monotone = false;
      gained += rec.sparsity_after_ft - rec.sparsity_before_ft;
      worst_drop = std::max(
          worst_drop, rec.acc_valid_before_ft - rec.acc_valid_after_ft);
    }
    const bool ok = monotone && gained >= 0.02 && worst_drop < 0.01;
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "fine-tuned pruning: gamma monotone, sparsity +%.2f points "
                  ">= 2, worst accuracy drop %.4f < 0.01",
                  gained * 100.0, worst_drop);
    report(6, ok, buf);
  }

  criterion_7();
  criterion_8();
  criterion_9(cli);
  criterion_10();
  criterion_11();

  std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
