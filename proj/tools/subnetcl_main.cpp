// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver: run a scenario, re-emit reports from a checkpoint,
// inspect a task codebook, or generate a self-contained glyph corpus.

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <string>

#include <Eigen/Core>
#include "CLI11.hpp"

#include "subnetcl/checkpoint.hpp"
#include "subnetcl/data.hpp"
#include "subnetcl/engine.hpp"
#include "subnetcl/errors.hpp"

namespace {

int cmd_run(const std::string& config_path, const std::string& mode,
            long long seed, const std::string& out) {
  subnetcl::engine::RunConfig cfg =
      subnetcl::engine::parse_config_file(config_path);
  if (!mode.empty()) {
    if (mode == "tsn")
      cfg.mode = subnetcl::routing::RunMode::kTsn;
    else if (mode == "tsn-wr" || mode == "tsn_wr")
      cfg.mode = subnetcl::routing::RunMode::kTsnWr;
    else
      throw subnetcl::ConfigError("unknown --mode '" + mode + "'");
  }
  if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
  if (!out.empty()) cfg.out_dir = out;
  const subnetcl::engine::RunReport rep = subnetcl::engine::run_scenario(cfg);
  const bool forget_free = !rep.lifelong.bwt || *rep.lifelong.bwt == 0.0;
  return (rep.completed && forget_free) ? 0 : 1;
}

int cmd_report(const std::string& in_dir) {
  const auto loaded = subnetcl::checkpoint::load(in_dir + "/checkpoint.bin");
  const auto rep =
      subnetcl::engine::report_from_state(loaded.state, loaded.config_echo);
  subnetcl::engine::emit_reports(rep, in_dir);
  return 0;
}

int cmd_inspect_codebook(const std::string& in_dir, int task) {
  const auto loaded = subnetcl::checkpoint::load(in_dir + "/checkpoint.bin");
  const auto& state = loaded.state;
  if (task < 0 || task >= static_cast<int>(state.codebooks.size()))
    throw subnetcl::InputError("task " + std::to_string(task) +
                               " not in checkpoint (has " +
                               std::to_string(state.codebooks.size()) + ")");
  const auto& cb = state.codebooks[static_cast<std::size_t>(task)];
  std::printf("task %d  bank %d  prefix %d  psi %d\n", task, cb.bank, cb.prefix,
              cb.bitwidth);
  if (cb.bitwidth == 0) {
    std::printf("no centroids: task shares existing quantized values\n");
    return 0;
  }
  for (std::size_t l = 0; l < cb.tables.size(); ++l) {
    std::printf("layer %zu:\n", l);
    for (std::size_t key = 0; key < cb.tables[l].size(); ++key) {
      const auto code = subnetcl::quant::encode_weight(
          state.layout, state.codebooks, task, static_cast<int>(key));
      std::printf("  %s -> %.4f\n", code.joined().c_str(), cb.tables[l][key]);
    }
    if (cb.tables[l].empty()) std::printf("  (no weights in this layer)\n");
  }
  return 0;
}

int cmd_gen_data(const std::string& out, int train_per_class,
                 int test_per_class, long long seed) {
  namespace fs = std::filesystem;
  fs::create_directories(out);
  const auto s = static_cast<std::uint64_t>(seed);
  const auto train = subnetcl::data::make_glyph_corpus(train_per_class, s);
  const auto test =
      subnetcl::data::make_glyph_corpus(test_per_class, subnetcl::mix_seed(s, 0x7E57));
  subnetcl::data::write_idx(train, out + "/train-images-idx3-ubyte",
                            out + "/train-labels-idx1-ubyte");
  subnetcl::data::write_idx(test, out + "/t10k-images-idx3-ubyte",
                            out + "/t10k-labels-idx1-ubyte");
  std::printf("wrote %lld train and %lld test glyphs under %s\n",
              static_cast<long long>(train.size()),
              static_cast<long long>(test.size()), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("SUBNETCL_THREADS"))
    Eigen::setNbThreads(std::atoi(threads));

  CLI::App app{"forget-free continual learning with masked subnetworks"};
  app.require_subcommand(1);

  std::string config_path, mode, out_dir, in_dir;
  long long seed = -1;
  int task = 0;
  int train_per_class = 1200, test_per_class = 200;
  long long gen_seed = 1;

  auto* run = app.add_subcommand("run", "train a scenario end to end");
  run->add_option("--config", config_path, "key=value config file")->required();
  run->add_option("--mode", mode, "tsn or tsn-wr (overrides config)");
  run->add_option("--seed", seed, "seed override");
  run->add_option("--out", out_dir, "output directory for checkpoint and reports");

  auto* report = app.add_subcommand("report", "re-emit tables from a checkpoint");
  report->add_option("--in", in_dir, "run directory")->required();

  auto* inspect =
      app.add_subcommand("inspect-codebook", "print bank/prefix/key -> value");
  inspect->add_option("--in", in_dir, "run directory")->required();
  inspect->add_option("--task", task, "task id")->required();

  auto* gen = app.add_subcommand("gen-data", "write a glyph corpus as IDX files");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--train-per-class", train_per_class, "train glyphs per class");
  gen->add_option("--test-per-class", test_per_class, "test glyphs per class");
  gen->add_option("--seed", gen_seed, "corpus seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, mode, seed, out_dir);
    if (report->parsed()) return cmd_report(in_dir);
    if (inspect->parsed()) return cmd_inspect_codebook(in_dir, task);
    if (gen->parsed())
      return cmd_gen_data(out_dir, train_per_class, test_per_class, gen_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
