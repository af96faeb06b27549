// SPDX-License-Identifier: Apache-2.0

#include "subnetcl/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "subnetcl/checkpoint.hpp"
#include "subnetcl/errors.hpp"

namespace subnetcl::engine {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string mode_name(routing::RunMode m) {
  return m == routing::RunMode::kTsn ? "tsn" : "tsn-wr";
}

std::string kind_name(data::ScenarioKind k) {
  switch (k) {
    case data::ScenarioKind::kPermuted: return "permuted";
    case data::ScenarioKind::kSplit: return "split";
    default: return "synthetic";
  }
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void RunConfig::validate() const {
  if (model_dims.size() < 2)
    throw ConfigError("model_dims needs at least input and output sizes");
  for (int d : model_dims)
    if (d < 1) throw ConfigError("model_dims entries must be >= 1");
  if (c <= 0.0 || c > 1.0) throw ConfigError("c must lie in (0,1]");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr_start >= lr_end) || !(lr_end > 0.0))
    throw ConfigError("learning-rate schedule needs lr_start >= lr_end > 0");
  if (delta_acc < 0.0) throw ConfigError("delta_acc must be >= 0");
  if (psi0 < 1) throw ConfigError("psi0 must be >= 1");
  if (s_r < 1) throw ConfigError("s_r must be >= 1");
  if (max_banks < 1) throw ConfigError("max_banks must be >= 1");
  if (quant_triggers_per_epoch < 1)
    throw ConfigError("quant_triggers_per_epoch must be >= 1");
  if (distill_weight < 0.0) throw ConfigError("distill_weight must be >= 0");
  if (finetune.iterations < 1) throw ConfigError("finetune_iterations must be >= 1");
  if (finetune.delta <= 0.0 || finetune.delta >= 1.0)
    throw ConfigError("finetune_delta must lie in (0,1)");
  if (scenario.valid_fraction < 0.0 || scenario.valid_fraction >= 1.0)
    throw ConfigError("valid_fraction must lie in [0,1)");
  if (scenario.tasks < 1) throw ConfigError("tasks must be >= 1");
  if (scenario.kind != data::ScenarioKind::kSynthetic) {
    if (train_images.empty() || train_labels.empty() || test_images.empty() ||
        test_labels.empty())
      throw ConfigError("permuted/split scenarios need the four IDX paths");
  }
}

std::string RunConfig::canonical_text() const {
  std::ostringstream out;
  out << "scenario=" << kind_name(scenario.kind) << "\n";
  out << "tasks=" << scenario.tasks << "\n";
  out << "classes_per_task=" << scenario.classes_per_task << "\n";
  out << "valid_fraction=" << format_double(scenario.valid_fraction) << "\n";
  out << "subsample_per_task=" << scenario.subsample_per_task << "\n";
  out << "synth_dim=" << scenario.synth_dim << "\n";
  out << "synth_classes=" << scenario.synth_classes << "\n";
  out << "synth_train_per_class=" << scenario.synth_train_per_class << "\n";
  out << "synth_test_per_class=" << scenario.synth_test_per_class << "\n";
  out << "synth_spread=" << format_double(scenario.synth_spread) << "\n";
  out << "train_images=" << train_images << "\n";
  out << "train_labels=" << train_labels << "\n";
  out << "test_images=" << test_images << "\n";
  out << "test_labels=" << test_labels << "\n";
  out << "model_dims=" << join_ints(model_dims) << "\n";
  out << "mode=" << mode_name(mode) << "\n";
  out << "routing_rule="
      << (routing_rule == routing::RoutingRule::kBreak ? "break" : "min") << "\n";
  out << "c=" << format_double(c) << "\n";
  out << "epochs=" << epochs << "\n";
  out << "batch_size=" << batch_size << "\n";
  out << "lr_start=" << format_double(lr_start) << "\n";
  out << "lr_end=" << format_double(lr_end) << "\n";
  out << "omega=" << format_double(omega) << "\n";
  out << "delta_acc=" << format_double(delta_acc) << "\n";
  out << "psi0=" << psi0 << "\n";
  out << "s_r=" << s_r << "\n";
  out << "max_banks=" << max_banks << "\n";
  out << "quant_triggers_per_epoch=" << quant_triggers_per_epoch << "\n";
  out << "distill_weight=" << format_double(distill_weight) << "\n";
  out << "finetune_iterations=" << finetune.iterations << "\n";
  out << "finetune_delta=" << format_double(finetune.delta) << "\n";
  out << "alpha=" << format_double(finetune.alpha) << "\n";
  out << "beta=" << format_double(finetune.beta) << "\n";
  out << "fp_flops_factor=" << format_double(fp_flops_factor) << "\n";
  out << "seed=" << seed << "\n";
  return out.str();
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key=value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "scenario") {
        if (value == "permuted") cfg.scenario.kind = data::ScenarioKind::kPermuted;
        else if (value == "split") cfg.scenario.kind = data::ScenarioKind::kSplit;
        else if (value == "synthetic") cfg.scenario.kind = data::ScenarioKind::kSynthetic;
        else throw ConfigError("unknown scenario kind '" + value + "'");
      } else if (key == "tasks") cfg.scenario.tasks = std::stoi(value);
      else if (key == "classes_per_task") cfg.scenario.classes_per_task = std::stoi(value);
      else if (key == "valid_fraction") cfg.scenario.valid_fraction = std::stod(value);
      else if (key == "subsample_per_task") cfg.scenario.subsample_per_task = std::stoi(value);
      else if (key == "synth_dim") cfg.scenario.synth_dim = std::stoi(value);
      else if (key == "synth_classes") cfg.scenario.synth_classes = std::stoi(value);
      else if (key == "synth_train_per_class") cfg.scenario.synth_train_per_class = std::stoi(value);
      else if (key == "synth_test_per_class") cfg.scenario.synth_test_per_class = std::stoi(value);
      else if (key == "synth_spread") cfg.scenario.synth_spread = std::stod(value);
      else if (key == "train_images") cfg.train_images = value;
      else if (key == "train_labels") cfg.train_labels = value;
      else if (key == "test_images") cfg.test_images = value;
      else if (key == "test_labels") cfg.test_labels = value;
      else if (key == "model_dims") {
        cfg.model_dims.clear();
        std::istringstream dims(value);
        std::string tok;
        while (std::getline(dims, tok, ',')) cfg.model_dims.push_back(std::stoi(tok));
      } else if (key == "mode") {
        if (value == "tsn") cfg.mode = routing::RunMode::kTsn;
        else if (value == "tsn-wr" || value == "tsn_wr") cfg.mode = routing::RunMode::kTsnWr;
        else throw ConfigError("unknown mode '" + value + "'");
      } else if (key == "routing_rule") {
        if (value == "break") cfg.routing_rule = routing::RoutingRule::kBreak;
        else if (value == "min") cfg.routing_rule = routing::RoutingRule::kMin;
        else throw ConfigError("unknown routing_rule '" + value + "'");
      } else if (key == "c") cfg.c = std::stod(value);
      else if (key == "epochs") cfg.epochs = std::stoi(value);
      else if (key == "batch_size") cfg.batch_size = std::stoi(value);
      else if (key == "lr_start") cfg.lr_start = std::stod(value);
      else if (key == "lr_end") cfg.lr_end = std::stod(value);
      else if (key == "omega") cfg.omega = std::stod(value);
      else if (key == "delta_acc") cfg.delta_acc = std::stod(value);
      else if (key == "psi0") cfg.psi0 = std::stoi(value);
      else if (key == "s_r") cfg.s_r = std::stoi(value);
      else if (key == "max_banks") cfg.max_banks = std::stoi(value);
      else if (key == "quant_triggers_per_epoch") cfg.quant_triggers_per_epoch = std::stoi(value);
      else if (key == "distill_weight") cfg.distill_weight = std::stod(value);
      else if (key == "finetune_iterations") cfg.finetune.iterations = std::stoi(value);
      else if (key == "finetune_delta") cfg.finetune.delta = std::stod(value);
      else if (key == "alpha") cfg.finetune.alpha = std::stod(value);
      else if (key == "beta") cfg.finetune.beta = std::stod(value);
      else if (key == "fp_flops_factor") cfg.fp_flops_factor = std::stod(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "resume") cfg.resume = (value == "true" || value == "1");
      else if (key == "stop_after_task") cfg.stop_after_task = std::stoi(value);
      else if (key == "out_dir") cfg.out_dir = value;
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": bad value '" + value + "' for key '" + key + "'");
    } catch (const std::out_of_range&) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": value out of range for key '" + key + "'");
    }
  }
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

namespace {

double lr_at(const RunConfig& cfg, int epoch) {
  if (cfg.epochs <= 1) return cfg.lr_start;
  const double f = static_cast<double>(epoch) / (cfg.epochs - 1);
  return cfg.lr_start * std::pow(cfg.lr_end / cfg.lr_start, f);
}

MaskLayers ones_like(const LayerMats<float>& theta) {
  MaskLayers m(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i)
    m[i] = MaskMat::Ones(theta[i].rows(), theta[i].cols());
  return m;
}

MaskLayers invert(const MaskLayers& mask) {
  MaskLayers out(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    out[i] = (1 - mask[i].array()).matrix();
  return out;
}

// FNV-1a over the bit patterns of every frozen weight, in (bank, layer, row,
// col) order. Unchanged digest across a task boundary proves the freeze.
std::uint64_t freeze_digest(const EngineState& state) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix32 = [&h](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
      h ^= (v >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  for (std::size_t bank = 0; bank < state.planes.size(); ++bank) {
    const MaskLayers frozen =
        state.maskset.bank_consolidated(static_cast<int>(bank));
    if (frozen.empty()) continue;
    for (std::size_t l = 0; l < frozen.size(); ++l)
      for (Eigen::Index r = 0; r < frozen[l].rows(); ++r)
        for (Eigen::Index c = 0; c < frozen[l].cols(); ++c)
          if (frozen[l](r, c)) {
            float v = state.planes[bank][l](r, c);
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            mix32(bits);
          }
  }
  return h;
}

struct BatchView {
  MatF x;
  std::vector<int> y;
};

BatchView gather(const data::Dataset& d, const std::vector<Eigen::Index>& order,
                 std::size_t start, std::size_t count) {
  BatchView b;
  b.x.resize(static_cast<Eigen::Index>(count), d.x.cols());
  b.y.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    b.x.row(static_cast<Eigen::Index>(i)) = d.x.row(order[start + i]);
    b.y[i] = d.labels[static_cast<std::size_t>(order[start + i])];
  }
  return b;
}

TaskRecord train_task(EngineState& state, const RunConfig& cfg,
                      const data::TaskDataset& task, int t) {
  const auto t_start = Clock::now();
  TaskRecord rec;
  rec.task = t;

  // Alg. line order: replay fill, then the share/new-bank decision.
  routing::RoutingDecision dec;
  if (cfg.mode == routing::RunMode::kTsn) {
    state.replay.push_back(routing::fill_replay(
        task.train.x, task.train.labels, t, cfg.s_r,
        mix_seed(cfg.seed, 0xF111 + static_cast<std::uint64_t>(t))));
    dec = routing::route(t, state.replay, cfg.omega, cfg.mode,
                         state.layout.num_banks(), cfg.max_banks,
                         cfg.routing_rule);
  } else {
    dec = routing::route(t, {}, cfg.omega, cfg.mode, state.layout.num_banks(),
                         cfg.max_banks, cfg.routing_rule);
  }
  rec.kl_values = dec.kl_values;
  rec.fallback = dec.fallback;

  int bank = 0;
  MaskLayers pool;
  switch (dec.mode) {
    case routing::RoutingDecision::Mode::kSharedPool:
      bank = 0;
      rec.shared_pool = true;
      pool = ones_like(state.planes[0]);
      break;
    case routing::RoutingDecision::Mode::kShareWith: {
      rec.shared_with = dec.share_with;
      bank = state.layout.bank_of(dec.share_with);
      const MaskLayers bank_used = state.maskset.bank_consolidated(bank);
      pool = masks::consolidate(
          state.maskset.per_task[static_cast<std::size_t>(dec.share_with)],
          invert(bank_used));
      break;
    }
    case routing::RoutingDecision::Mode::kNewBank: {
      bank = dec.bank;
      if (bank == static_cast<int>(state.planes.size())) {
        nn::ModelSpec plane_spec = state.spec;
        plane_spec.seed = mix_seed(cfg.seed, 0xB000 + static_cast<std::uint64_t>(bank));
        state.planes.push_back(nn::init_model<float>(plane_spec).theta);
      }
      const MaskLayers bank_used = state.maskset.bank_consolidated(bank);
      pool = bank_used.empty() ? ones_like(state.planes[static_cast<std::size_t>(bank)])
                               : invert(bank_used);
      break;
    }
  }
  rec.bank = bank;

  MaskLayers frozen = state.maskset.bank_consolidated(bank);
  if (frozen.empty())
    frozen = zero_masks_like(pool);

  const std::uint64_t digest_pre = freeze_digest(state);

  nn::WeightStore<float> ws;
  ws.theta = std::move(state.planes[static_cast<std::size_t>(bank)]);
  ws.scores = std::move(state.scores);

  const data::Dataset& valid =
      task.valid.size() > 0 ? task.valid : task.train;

  LayerMats<float> shadow = ws.theta;
  MaskLayers mask_t;
  const auto n_train = static_cast<std::size_t>(task.train.size());
  const int batches_per_epoch =
      static_cast<int>((n_train + cfg.batch_size - 1) / cfg.batch_size);
  const int k_trigger =
      std::max(1, batches_per_epoch / cfg.quant_triggers_per_epoch);

  rec.min_quant_margin = std::numeric_limits<double>::infinity();
  int global_batch = 0;
  int trigger_index = 0;

  auto run_trigger = [&]() {
    shadow = ws.theta;  // distillation target: pre-quantization weights
    const MaskLayers quant_mask = mask_and_not(mask_t, frozen);
    if (popcount(quant_mask) == 0) {
      ++trigger_index;
      return;
    }
    auto accuracy_of = [&](const LayerMats<float>& th) {
      return nn::evaluate(th, mask_t, valid.x, valid.labels);
    };
    const auto aq = quant::adaptive_quantize<float>(
        ws.theta, quant_mask, cfg.delta_acc, cfg.psi0,
        mix_seed(cfg.seed, 0xC0DE + static_cast<std::uint64_t>(t) * 1000003 +
                               static_cast<std::uint64_t>(trigger_index)),
        accuracy_of);
    rec.min_quant_margin =
        std::min(rec.min_quant_margin,
                 aq.acc_after - (aq.acc_before - cfg.delta_acc));
    rec.quant_warning = rec.quant_warning || aq.warning;
    quant::dequantize_into(ws.theta, aq.keys, aq.codebook);
    rec.psi = aq.psi;
    ++trigger_index;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    ws.learning_rate = static_cast<float>(lr_at(cfg, epoch));
    std::vector<Eigen::Index> order(n_train);
    for (std::size_t i = 0; i < n_train; ++i)
      order[i] = static_cast<Eigen::Index>(i);
    Rng shuffle_rng(mix_seed(cfg.seed, 0xD474 + static_cast<std::uint64_t>(t) * 1024 +
                                           static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < n_train;
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t count =
          std::min<std::size_t>(cfg.batch_size, n_train - start);
      if (global_batch == 0 &&
          dec.mode == routing::RoutingDecision::Mode::kNewBank) {
        mask_t = masks::random_bank_mask(
            pool, cfg.c, mix_seed(cfg.seed, 0xA555 + static_cast<std::uint64_t>(t)));
      } else {
        mask_t = masks::top_c_mask(ws.scores, cfg.c, pool);
      }
      if (global_batch % k_trigger == 0) run_trigger();
      const BatchView batch = gather(task.train, order, start, count);
      const auto full_trace = nn::forward(shadow, mask_t, batch.x);
      const auto grads = nn::backward(ws, mask_t, batch.x, batch.y, &full_trace,
                                      cfg.distill_weight);
      nn::masked_sgd_step(ws, grads.theta, frozen);
      nn::score_step(ws, grads.scores);
      ++global_batch;
    }
  }

  // Final quantization so the stored task weights are exactly the codebook
  // centroids that future tasks freeze and reuse.
  quant::Codebook codebook;
  codebook.tables.resize(ws.theta.size());
  {
    const MaskLayers quant_mask = mask_and_not(mask_t, frozen);
    if (popcount(quant_mask) > 0) {
      auto accuracy_of = [&](const LayerMats<float>& th) {
        return nn::evaluate(th, mask_t, valid.x, valid.labels);
      };
      const auto aq = quant::adaptive_quantize<float>(
          ws.theta, quant_mask, cfg.delta_acc, cfg.psi0,
          mix_seed(cfg.seed, 0xC0DE + static_cast<std::uint64_t>(t) * 1000003 +
                                 static_cast<std::uint64_t>(trigger_index)),
          accuracy_of);
      rec.min_quant_margin =
          std::min(rec.min_quant_margin,
                   aq.acc_after - (aq.acc_before - cfg.delta_acc));
      rec.quant_warning = rec.quant_warning || aq.warning;
      quant::dequantize_into(ws.theta, aq.keys, aq.codebook);
      codebook = aq.codebook;
      rec.psi = aq.psi;
    } else {
      rec.psi = 0;  // pure value sharing: no new weights were quantized
    }
  }
  if (!std::isfinite(rec.min_quant_margin)) rec.min_quant_margin = 0.0;

  // Fine-tuned pruning on the validation split.
  rec.acc_valid_before_ft =
      nn::evaluate(ws.theta, mask_t, valid.x, valid.labels);
  {
    const MaskLayers with_raw =
        state.maskset.consolidated.empty()
            ? mask_t
            : masks::consolidate(state.maskset.consolidated, mask_t);
    rec.sparsity_before_ft = masks::sparsity(with_raw).weighted;
  }
  auto ft_accuracy = [&](const MaskLayers& m) {
    return nn::evaluate(ws.theta, m, valid.x, valid.labels);
  };
  const finetune::FinetuneResult ft = finetune::finetune_prune<float>(
      ws.theta, mask_t, state.maskset.consolidated, cfg.finetune, ft_accuracy);
  rec.acc_valid_after_ft = ft.accuracy_opt;
  rec.gamma_monotone =
      std::is_sorted(ft.gamma_history.begin(), ft.gamma_history.end());

  state.planes[static_cast<std::size_t>(bank)] = std::move(ws.theta);
  state.scores = std::move(ws.scores);

  rec.freeze_ok = freeze_digest(state) == digest_pre;

  state.consolidated_raw = state.consolidated_raw.empty()
                               ? mask_t
                               : masks::consolidate(state.consolidated_raw, mask_t);
  state.maskset.add_task(ft.mask_opt, bank);
  state.layout.add_task(t, bank);
  codebook.bank = bank;
  codebook.prefix = state.layout.prefix_of(t);
  state.codebooks.push_back(std::move(codebook));
  rec.sparsity_after_ft = masks::sparsity(state.maskset).weighted;

  rec.capacity = metrics::capacity(
      state.maskset, state.codebooks,
      metrics::capacity_bit_width(state.layout, state.codebooks),
      metrics::CapacityMode::kPerLayer);

  rec.train_seconds = seconds_since(t_start);
  return rec;
}

std::vector<double> evaluate_row(const EngineState& state,
                                 const std::vector<data::TaskDataset>& tasks,
                                 int t) {
  std::vector<double> row(tasks.size(), 0.0);
  for (std::size_t j = 0; j < tasks.size(); ++j) {
    const data::Dataset& test = tasks[j].test;
    if (static_cast<int>(j) <= t) {
      const int bank = state.layout.bank_of(static_cast<int>(j));
      row[j] = nn::evaluate(state.planes[static_cast<std::size_t>(bank)],
                            state.maskset.per_task[j], test.x, test.labels);
    } else {
      // untrained task: the consolidated subnetwork stands in (forward
      // transfer is reported against chance level)
      row[j] = nn::evaluate(state.planes[0], state.maskset.consolidated, test.x,
                            test.labels);
    }
  }
  return row;
}

}  // namespace

RunReport report_from_state(const EngineState& state,
                            const std::string& config_echo) {
  RunReport rep;
  rep.config_echo = config_echo;
  rep.tasks = state.records;
  rep.tasks_done = state.tasks_done;
  const std::size_t planned =
      state.accuracy_rows.empty() ? static_cast<std::size_t>(state.tasks_done)
                                  : state.accuracy_rows.front().size();
  rep.accuracy = MatD::Zero(static_cast<Eigen::Index>(planned),
                            static_cast<Eigen::Index>(planned));
  for (std::size_t i = 0; i < state.accuracy_rows.size(); ++i)
    for (std::size_t j = 0; j < state.accuracy_rows[i].size(); ++j)
      rep.accuracy(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          state.accuracy_rows[i][j];
  if (state.tasks_done > 0) {
    const auto done = static_cast<Eigen::Index>(state.tasks_done);
    std::vector<double> baseline;
    if (state.random_baseline.size() >= static_cast<std::size_t>(done))
      baseline.assign(state.random_baseline.begin(),
                      state.random_baseline.begin() + done);
    rep.lifelong = metrics::lifelong_metrics(
        rep.accuracy.topLeftCorner(done, done), baseline);
  }
  if (!state.maskset.consolidated.empty())
    rep.final_sparsity = masks::sparsity(state.maskset).weighted;
  if (!state.consolidated_raw.empty())
    rep.final_sparsity_raw = masks::sparsity(state.consolidated_raw).weighted;
  return rep;
}

RunReport run_scenario(const RunConfig& cfg) {
  const auto run_start = Clock::now();
  cfg.validate();

  data::Dataset train_base, test_base;
  if (cfg.scenario.kind != data::ScenarioKind::kSynthetic) {
    train_base = data::load_idx(cfg.train_images, cfg.train_labels);
    test_base = data::load_idx(cfg.test_images, cfg.test_labels);
  }
  const std::vector<data::TaskDataset> tasks =
      data::make_scenario(cfg.scenario, train_base, test_base, cfg.seed);

  for (const auto& task : tasks) {
    if (task.train.x.cols() != cfg.model_dims.front())
      throw ConfigError("model input dim " + std::to_string(cfg.model_dims.front()) +
                        " != data dim " + std::to_string(task.train.x.cols()));
    if (task.num_classes() > cfg.model_dims.back())
      throw ConfigError("model output dim " + std::to_string(cfg.model_dims.back()) +
                        " < " + std::to_string(task.num_classes()) + " classes");
  }

  const std::string echo = cfg.canonical_text();
  const std::string ckpt_path =
      cfg.out_dir.empty() ? std::string() : cfg.out_dir + "/checkpoint.bin";

  EngineState state;
  bool resumed = false;
  if (cfg.resume && !ckpt_path.empty()) {
    if (auto loaded = checkpoint::try_load_compatible(ckpt_path, echo)) {
      state = std::move(loaded->state);
      resumed = true;
    }
  }
  if (!resumed) {
    state.spec.layer_dims = cfg.model_dims;
    state.spec.seed = cfg.seed;
    const auto ws0 = nn::init_model<float>(state.spec);
    state.planes.push_back(ws0.theta);
    state.scores = ws0.scores;
    state.layout.max_banks = cfg.max_banks;
    for (const auto& task : tasks)
      state.random_baseline.push_back(1.0 / task.num_classes());
  }

  RunReport rep;
  const int total = cfg.scenario.tasks;
  const int stop_at = cfg.stop_after_task > 0
                          ? std::min(cfg.stop_after_task, total)
                          : total;
  for (int t = state.tasks_done; t < stop_at; ++t) {
    try {
      TaskRecord rec = train_task(state, cfg, tasks[static_cast<std::size_t>(t)], t);
      state.records.push_back(std::move(rec));
      state.accuracy_rows.push_back(evaluate_row(state, tasks, t));
      state.tasks_done = t + 1;
    } catch (const CapacityError&) {
      rep.capacity_exhausted = true;
      break;
    }
    if (!ckpt_path.empty()) checkpoint::save(state, echo, ckpt_path);
  }

  RunReport built = report_from_state(state, echo);
  built.capacity_exhausted = rep.capacity_exhausted;
  built.completed = !built.capacity_exhausted && state.tasks_done == total;
  // copy measured timings into the rebuilt records (stdout display only)
  for (std::size_t i = 0; i < built.tasks.size() && i < state.records.size(); ++i)
    built.tasks[i].train_seconds = state.records[i].train_seconds;
  built.total_seconds = seconds_since(run_start);
  if (!cfg.out_dir.empty()) emit_reports(built, cfg.out_dir);
  return built;
}

void emit_reports(const RunReport& rep, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);

  {
    std::ofstream csv(out_dir + "/accuracy_matrix.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write " + out_dir + "/accuracy_matrix.csv");
    for (Eigen::Index j = 0; j < rep.accuracy.cols(); ++j)
      csv << (j ? "," : "") << "task_" << j;
    csv << "\n";
    char buf[32];
    for (int i = 0; i < rep.tasks_done; ++i) {
      for (Eigen::Index j = 0; j < rep.accuracy.cols(); ++j) {
        std::snprintf(buf, sizeof(buf), "%.6f", rep.accuracy(i, j));
        csv << (j ? "," : "") << buf;
      }
      csv << "\n";
    }
  }

  {
    nlohmann::json root;
    root["completed"] = rep.completed;
    root["capacity_exhausted"] = rep.capacity_exhausted;
    root["tasks_done"] = rep.tasks_done;
    root["lifelong_accuracy"] = rep.lifelong.accuracy;
    if (rep.lifelong.bwt) root["bwt"] = *rep.lifelong.bwt;
    if (rep.lifelong.fwt) root["fwt"] = *rep.lifelong.fwt;
    root["final_sparsity"] = rep.final_sparsity;
    root["final_sparsity_raw"] = rep.final_sparsity_raw;
    nlohmann::json per_task = nlohmann::json::array();
    for (const auto& rec : rep.tasks) {
      nlohmann::json j;
      j["task"] = rec.task;
      j["bank"] = rec.bank;
      j["shared_with"] = rec.shared_with;
      j["shared_pool"] = rec.shared_pool;
      j["fallback"] = rec.fallback;
      j["psi"] = rec.psi;
      j["quant_warning"] = rec.quant_warning;
      j["min_quant_margin"] = rec.min_quant_margin;
      j["acc_valid_before_ft"] = rec.acc_valid_before_ft;
      j["acc_valid_after_ft"] = rec.acc_valid_after_ft;
      j["sparsity_before_ft"] = rec.sparsity_before_ft;
      j["sparsity_after_ft"] = rec.sparsity_after_ft;
      j["gamma_monotone"] = rec.gamma_monotone;
      j["cap_bits"] = rec.capacity.cap_total_bits;
      j["ratio"] = rec.capacity.ratio;
      j["weight_bits"] = rec.capacity.weight_bits;
      j["codebook_bits"] = rec.capacity.codebook_bits;
      j["mask_bits_raw"] = rec.capacity.mask_bits_raw;
      j["mask_bits_huffman"] = rec.capacity.mask_bits_huffman;
      j["freeze_ok"] = rec.freeze_ok;
      nlohmann::json kl = nlohmann::json::object();
      for (const auto& [p, v] : rec.kl_values) kl[std::to_string(p)] = v;
      j["kl_values"] = kl;
      per_task.push_back(std::move(j));
    }
    root["per_task"] = std::move(per_task);
    std::ofstream js(out_dir + "/capacity.json", std::ios::trunc);
    if (!js) throw IoError("cannot write " + out_dir + "/capacity.json");
    js << root.dump(2) << "\n";
  }

  // summary table
  std::printf("task  bank  shared  psi  acc[t][t]  sparsity  cap-ratio  seconds\n");
  for (const auto& rec : rep.tasks) {
    std::string shared = rec.shared_pool ? "pool"
                         : rec.shared_with >= 0
                             ? ("t" + std::to_string(rec.shared_with))
                             : "-";
    const double diag =
        rec.task < rep.accuracy.rows() ? rep.accuracy(rec.task, rec.task) : 0.0;
    std::printf("%4d  %4d  %6s  %3d  %9.4f  %8.4f  %9.4f  %7.1f\n", rec.task,
                rec.bank, shared.c_str(), rec.psi, diag, rec.sparsity_after_ft,
                rec.capacity.ratio, rec.train_seconds);
  }
  std::printf("lifelong accuracy %.4f", rep.lifelong.accuracy);
  if (rep.lifelong.bwt) std::printf("  bwt %.6f", *rep.lifelong.bwt);
  if (rep.lifelong.fwt) std::printf("  fwt %.4f", *rep.lifelong.fwt);
  std::printf("  final sparsity %.4f (raw %.4f)\n", rep.final_sparsity,
              rep.final_sparsity_raw);
  if (rep.capacity_exhausted)
    std::printf("RUN INCOMPLETE: capacity exhausted after task %d\n",
                rep.tasks_done - 1);
}

}  // namespace subnetcl::engine
