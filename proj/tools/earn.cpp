// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

// earn: command-line driver. One JSON config drives every command; flags and
// the EARN_OUT_DIR / EARN_WORKERS environment variables override a few fields.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "earn/attnstats.hpp"
#include "earn/bench.hpp"
#include "earn/checkpoint.hpp"
#include "earn/costmodel.hpp"
#include "earn/error.hpp"
#include "earn/experiment.hpp"
#include "earn/recdata.hpp"
#include "earn/runtime.hpp"
#include "earn/trainer.hpp"

namespace fs = std::filesystem;
using namespace earn;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;
  std::string mode = "earn";
  std::string checkpoint;
};

std::size_t parse_workers(const std::string& text, const char* field) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used == text.size() && v >= 1) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  throw ConfigError(field, "expected a positive integer, got '" + text + "'");
}

// config file < environment < flags
ExperimentConfig resolve(const Flags& f) {
  ExperimentConfig c = f.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(f.config);
  if (const char* v = std::getenv("EARN_OUT_DIR"); v != nullptr && *v != '\0') c.out_dir = v;
  if (const char* v = std::getenv("EARN_WORKERS"); v != nullptr && *v != '\0') {
    c.workers = parse_workers(v, "EARN_WORKERS");
  }
  if (f.out) c.out_dir = *f.out;
  if (f.seed) c.seed = *f.seed;
  if (f.workers) {
    if (*f.workers < 1) throw ConfigError("workers", "must be >= 1");
    c.workers = *f.workers;
  }
  c.train.seed = c.seed;
  c.bench.seed = c.seed;
  c.bench.workers = c.workers;
  c.validate();
  return c;
}

fs::path out_path(const ExperimentConfig& c, const std::string& name) {
  fs::create_directories(c.out_dir);
  return fs::path(c.out_dir) / name;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void wrote(const fs::path& path) { std::cout << "wrote " << path.string() << '\n'; }

std::pair<fs::path, fs::path> dataset_paths(const ExperimentConfig& c) {
  if (c.data.source == "ingest") return {c.data.log_path, c.data.catalog_path};
  return {fs::path(c.out_dir) / "interactions.jsonl", fs::path(c.out_dir) / "catalog.jsonl"};
}

bool dataset_present(const ExperimentConfig& c) {
  const auto [log, cat] = dataset_paths(c);
  return fs::exists(log) && fs::exists(cat);
}

struct Dataset {
  Catalog catalog;
  SplitDataset split;
};

Dataset load_dataset(const ExperimentConfig& c) {
  const auto [log_path, cat_path] = dataset_paths(c);
  for (const auto& p : {log_path, cat_path}) {
    if (!fs::exists(p)) throw std::runtime_error("missing dataset file " + p.string() + " (run gen-data first)");
  }
  Dataset d;
  std::ifstream cat_in(cat_path);
  d.catalog = read_catalog_jsonl(cat_in);
  const InteractionLog log = ingest(log_path);
  for (const auto& r : log) {
    if (!d.catalog.contains(r.item)) throw std::runtime_error("item " + std::to_string(r.item) + " not in catalog");
  }
  d.split = chronological_split(log, c.data.max_history);
  return d;
}

std::vector<TrainExample> examples(const ExperimentConfig& c, const Dataset& d, const std::vector<RecExample>& rows) {
  const PromptFormat fmt{c.data.synthetic.scheme.instruction_tokens()};
  return build_examples(rows, d.catalog, fmt, c.registers, c.model.vocab_size);
}

fs::path checkpoint_for(const ExperimentConfig& c, const Flags& f, TrainMode mode) {
  if (!f.checkpoint.empty()) return f.checkpoint;
  return fs::path(c.out_dir) / (std::string(to_string(mode)) + ".ckpt");
}

Weights<float> load_weights(const ExperimentConfig& c, const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("missing checkpoint " + path.string());
  auto w = load_checkpoint(path);
  try {
    check_shapes(w, c.model, c.registers);
  } catch (const ContractViolation& e) {
    throw std::runtime_error("checkpoint " + path.string() + " does not match the model config: " + e.what());
  }
  return w;
}

// Checkpoint when given, seeded initialization otherwise.
Weights<float> weights_or_init(const ExperimentConfig& c, const Flags& f) {
  if (!f.checkpoint.empty()) return load_weights(c, f.checkpoint);
  return init_weights(c.model, c.registers, c.seed);
}

int cmd_gen_data(const Flags& f) {
  const auto c = resolve(f);
  if (c.data.source != "synthetic") throw ConfigError("data.source", "gen-data needs source 'synthetic'");
  const auto data = generate_synthetic(c.data.synthetic, c.seed);
  const auto [log_path, cat_path] = dataset_paths(c);
  fs::create_directories(c.out_dir);
  {
    auto out = open_out(log_path);
    write_log_jsonl(out, data.log);
  }
  {
    auto out = open_out(cat_path);
    write_catalog_jsonl(out, data.catalog);
  }
  wrote(log_path);
  wrote(cat_path);
  return 0;
}

int cmd_train(const Flags& f) {
  const auto c = resolve(f);
  const TrainMode mode = parse_train_mode(f.mode);
  const Dataset d = load_dataset(c);
  const auto train_set = examples(c, d, d.split.train);
  const auto valid_set = examples(c, d, d.split.valid);

  // earn-no-rt prunes an existing (by default vanilla-trained) model.
  Weights<float> start = mode == TrainMode::EarnNoRT
                             ? load_weights(c, f.checkpoint.empty() ? checkpoint_for(c, {}, TrainMode::Vanilla)
                                                                    : fs::path(f.checkpoint))
                             : init_weights(c.model, c.registers, c.seed);
  const auto result = train(std::move(start), c.model, c.registers, train_set, valid_set, d.catalog, c.train, mode);

  const auto ckpt = fs::path(c.out_dir) / (std::string(to_string(mode)) + ".ckpt");
  fs::create_directories(c.out_dir);
  save_checkpoint(ckpt, result.weights);
  const auto log_path = out_path(c, "train_log_" + std::string(to_string(mode)) + ".csv");
  {
    auto out = open_out(log_path);
    out.precision(10);
    out << "epoch,loss,valid_recall10\n";
    for (const auto& e : result.log) out << e.epoch << ',' << e.loss << ',' << e.valid_recall10 << '\n';
  }
  wrote(ckpt);
  wrote(log_path);
  return 0;
}

int cmd_eval(const Flags& f) {
  const auto c = resolve(f);
  const TrainMode mode = parse_train_mode(f.mode);
  const auto weights = load_weights(c, checkpoint_for(c, f, mode));
  const Dataset d = load_dataset(c);
  auto test_set = examples(c, d, d.split.test);
  if (c.eval.limit > 0 && test_set.size() > c.eval.limit) test_set.resize(c.eval.limit);
  const auto report = evaluate_ranking(weights, c.model, effective_spec(mode, c.model, c.registers), test_set,
                                       d.catalog, c.eval.beam_width, c.eval.ks);
  std::vector<MetricRow> rows;
  for (std::size_t i = 0; i < report.ks.size(); ++i) {
    rows.push_back({std::string(to_string(mode)), report.ks[i], report.recall[i], report.ndcg[i]});
  }
  const auto path = out_path(c, "metrics_" + std::string(to_string(mode)) + ".csv");
  {
    auto out = open_out(path);
    write_metric_csv(out, rows);
  }
  write_metric_csv(std::cout, rows);
  wrote(path);
  return 0;
}

int cmd_bench(const Flags& f) {
  const auto c = resolve(f);
  const auto weights = weights_or_init(c, f);
  const auto rows = run_bench(weights, c.model, c.registers, c.bench);
  const auto path = out_path(c, "bench.csv");
  {
    auto out = open_out(path);
    write_bench_csv(out, rows);
  }
  write_bench_csv(std::cout, rows);
  wrote(path);
  return 0;
}

int cmd_cost(const Flags& f) {
  const auto c = resolve(f);
  std::vector<CostCase> cases = c.cost.cases;
  if (cases.empty()) cases.push_back({typical_model_config(), RegisterSpec{1, 1, 8}, 512});
  std::vector<CostRow> rows;
  for (const auto& k : cases) {
    rows.push_back({k.model.num_layers, k.registers.register_layer, k.length,
                    static_cast<std::uint64_t>(k.registers.count()),
                    time_estimate(c.cost.env, k.model, k.registers, k.length, c.cost.n_generate)});
  }
  const auto path = out_path(c, "cost.csv");
  {
    auto out = open_out(path);
    write_cost_csv(out, rows);
  }
  write_cost_csv(std::cout, rows);
  wrote(path);
  return 0;
}

// Mean per-row sparsity over the causal prefix of every query row.
void write_full_sparsity(std::ostream& out, const std::vector<AttentionTrace>& traces, double epsilon) {
  out << "layer,head,sparsity\n";
  const auto& first = traces.front().full;
  for (std::size_t l = 0; l < first.size(); ++l) {
    for (std::size_t h = 0; h < first[l].size(); ++h) {
      double sum = 0;
      std::size_t n = 0;
      for (const auto& t : traces) {
        const Matrix& m = t.full[l][h];
        for (std::size_t i = 0; i < m.rows(); ++i) {
          sum += sparsity(m.row(i).subspan(0, i + 1), epsilon);
          ++n;
        }
      }
      out << l + 1 << ',' << h << ',' << sum / static_cast<double>(n) << '\n';
    }
  }
}

int cmd_attn(const Flags& f) {
  const auto c = resolve(f);
  const TrainMode mode = parse_train_mode(f.mode);
  const auto weights = weights_or_init(c, f);
  const RegisterSpec spec = effective_spec(mode, c.model, c.registers);

  std::vector<SequenceLayout> layouts;
  if (dataset_present(c)) {
    const Dataset d = load_dataset(c);
    const auto& rows = d.split.test.empty() ? d.split.train : d.split.test;
    auto ex = examples(c, d, rows);
    for (std::size_t i = 0; i < ex.size() && layouts.size() < c.attn.samples; ++i) {
      if (ex[i].input.size() >= 2 * kSinkWindow) layouts.push_back(ex[i].input);
    }
  }
  for (std::size_t i = 0; layouts.size() < c.attn.samples; ++i) {
    layouts.push_back(padded_layout(c.model, c.registers, c.attn.prompt_length, c.seed + i));
  }

  SessionOptions opt;
  opt.capture_attention = true;
  opt.full_attention = c.attn.full;
  std::vector<AttentionTrace> traces;
  for (const auto& layout : layouts) {
    traces.push_back(Session::prefill(weights, c.model, spec, layout, opt).prefill_attention());
  }
  const auto cutoff = static_cast<std::size_t>(c.attn.early_layer_cutoff > 0 ? c.attn.early_layer_cutoff
                                                                               : c.registers.register_layer);
  const auto stats = summarize(std::span<const AttentionTrace>(traces), cutoff, c.attn.epsilon);
  const auto path = out_path(c, "attn_" + std::string(to_string(mode)) + ".csv");
  {
    auto out = open_out(path);
    write_csv(out, stats);
  }
  wrote(path);
  if (c.attn.full) {
    const auto full_path = out_path(c, "attn_full_" + std::string(to_string(mode)) + ".csv");
    auto out = open_out(full_path);
    write_full_sparsity(out, traces, c.attn.epsilon);
    wrote(full_path);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"earn: register-pruned decoder inference, training and benchmarks"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags flags;
  app.add_option("--config", flags.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", flags.seed, "Seed for data, initialization and shuffling");
  app.add_option("--out", flags.out, "Output directory");
  app.add_option("--workers", flags.workers, "Worker threads");
  app.add_option("--mode", flags.mode, "vanilla | earn | earn-no-rt")
      ->check(CLI::IsMember({"vanilla", "earn", "earn-no-rt"}));
  app.add_option("--checkpoint", flags.checkpoint, "Checkpoint to read");

  int status = 0;
  auto bind = [&](const char* name, const char* help, int (*fn)(const Flags&)) {
    app.add_subcommand(name, help)->callback([&, fn] { status = fn(flags); });
  };
  bind("gen-data", "Generate the synthetic interaction log and catalog", cmd_gen_data);
  bind("train", "Train in --mode and write a checkpoint and epoch log", cmd_train);
  bind("eval", "Beam-search evaluation: Recall and NDCG at K", cmd_eval);
  bind("bench", "Wall-clock benchmark of the inference methods", cmd_bench);
  bind("cost-model", "Analytic FLOPs, cache and time estimates", cmd_cost);
  bind("analyze-attn", "Attention sparsity and sink statistics", cmd_attn);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    std::cerr << "error: invalid config: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return status;
}
