// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "earn/bench.hpp"
#include "earn/costmodel.hpp"
#include "earn/layout.hpp"
#include "earn/recdata.hpp"
#include "earn/trainer.hpp"

namespace earn {

struct DataConfig {
  std::string source = "synthetic";  // synthetic | ingest
  SyntheticConfig synthetic;
  std::string log_path;              // ingest: interaction log (JSON lines)
  std::string catalog_path;          // ingest: catalog (JSON lines)
  std::size_t max_history = 20;
};

struct EvalConfig {
  std::vector<std::size_t> ks{10, 20};
  std::size_t beam_width = 20;
  std::size_t limit = 0;  // 0 evaluates every test example
};

struct CostCase {
  ModelConfig model;
  RegisterSpec registers;
  std::uint64_t length = 512;
};

struct CostConfig {
  CostEnv env;
  std::uint64_t n_generate = 4;
  std::vector<CostCase> cases;  // empty: the 7B-class typical values with k = 8, L = 512
};

struct AttnConfig {
  double epsilon = 0.05;
  int early_layer_cutoff = 0;  // 0 uses the register layer k
  std::size_t prompt_length = 64;
  std::size_t samples = 8;     // test prompts traced (synthetic prompts when no data)
  bool full = false;
};

/// One JSON document drives every command (schema: docs/config.schema.json).
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  std::size_t workers = 1;
  ModelConfig model;
  RegisterSpec registers;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  BenchConfig bench;
  CostConfig cost;
  AttnConfig attn;

  ExperimentConfig();

  /// Field-level and cross-field checks; throws ConfigError naming the field
  /// with its dotted path (e.g. "registers.register_layer").
  void validate() const;

  /// Unknown keys and mistyped values are rejected with the dotted field name.
  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  std::string to_json_text() const;
};

/// The 7B-class configuration used as the typical worked example
/// (N=32, n_h=32, d_a=128, d_h=4096, d_f=11008).
ModelConfig typical_model_config();

}  // namespace earn
