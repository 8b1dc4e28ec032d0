// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

// Drives the earn executable end to end in scratch directories.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "earn/checkpoint.hpp"

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Scratch {
  fs::path dir;

  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("earn_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }

  fs::path operator/(const std::string& name) const { return dir / name; }

  // Small model and dataset so every command finishes quickly.
  fs::path config(const std::string& extra_registers = "", const std::string& data = "") const {
    const fs::path p = dir / "config.json";
    std::ofstream out(p);
    out << R"({"seed": 3, "out_dir": ")" << (dir / "out").string() << R"(",
      "model": {"num_layers": 2, "num_heads": 2, "num_kv_heads": 2, "head_dim": 8, "hidden_dim": 16,
                "ffn_dim": 32, "max_positions": 128},
      "registers": {)" << extra_registers << R"(},
      "data": {"max_history": 3, "synthetic": {)"
        << (data.empty() ? R"("n_users": 30, "n_items": 16, "n_clusters": 4, "codebook_size": 4,
                              "min_length": 3, "max_length": 6)"
                         : data)
        << R"(}},
      "train": {"epochs": 2, "effective_batch": 16, "beam_width": 4, "valid_limit": 4},
      "eval": {"beam_width": 20, "limit": 8},
      "bench": {"lengths": [24], "repeats": 1, "warmups": 0},
      "attn": {"prompt_length": 16, "samples": 2}})";
    return p;
  }

  // Exit status of `earn <args>`; stdout and stderr go to files in the scratch dir.
  int run(const std::string& args) const {
    const std::string cmd = std::string(EARN_CLI_PATH) + " " + args + " > " + (dir / "stdout.txt").string() +
                            " 2> " + (dir / "stderr.txt").string();
    const int raw = std::system(cmd.c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  }
  std::string err() const { return slurp(dir / "stderr.txt"); }
};

}  // namespace

TEST_CASE("gen-data: files, determinism, seed flag") {
  Scratch s("gen");
  const auto cfg = s.config().string();
  REQUIRE(s.run("gen-data --config " + cfg) == 0);
  const std::string log = slurp(s / "out/interactions.jsonl");
  const std::string cat = slurp(s / "out/catalog.jsonl");
  CHECK_FALSE(log.empty());
  CHECK_FALSE(cat.empty());
  REQUIRE(s.run("gen-data --config " + cfg) == 0);
  CHECK(slurp(s / "out/interactions.jsonl") == log);
  CHECK(slurp(s / "out/catalog.jsonl") == cat);
  REQUIRE(s.run("gen-data --config " + cfg + " --seed 4") == 0);
  CHECK_FALSE(slurp(s / "out/interactions.jsonl") == log);
  REQUIRE(s.run("gen-data --config " + cfg + " --out " + (s / "other").string()) == 0);
  CHECK(fs::exists(s / "other/catalog.jsonl"));
}

TEST_CASE("invalid config: nonzero exit naming the field") {
  Scratch s("bad");
  const auto cfg = s.config(R"("register_layer": 9)").string();
  CHECK(s.run("gen-data --config " + cfg) != 0);
  CHECK(s.err().find("registers.register_layer") != std::string::npos);
  CHECK(s.run("train --config " + cfg + " --mode turbo") != 0);
  CHECK(s.run("frobnicate") != 0);
  CHECK(s.run("") != 0);
}

TEST_CASE("train without data fails") {
  Scratch s("nodata");
  CHECK(s.run("train --config " + s.config().string()) != 0);
  CHECK(s.err().find("gen-data") != std::string::npos);
}

TEST_CASE("train and eval: log rows, k = N matches vanilla, reproducible metrics") {
  Scratch s("train");
  const auto cfg = s.config().string();
  REQUIRE(s.run("gen-data --config " + cfg) == 0);
  REQUIRE(s.run("train --config " + cfg + " --mode vanilla") == 0);
  const std::string vlog = slurp(s / "out/train_log_vanilla.csv");
  CHECK(std::count(vlog.begin(), vlog.end(), '\n') == 3);  // header + 2 epochs

  // Same seed with k = N under mode earn reproduces the vanilla log.
  const auto full = s.config(R"("register_layer": 2)").string();
  REQUIRE(s.run("train --config " + full + " --mode earn") == 0);
  CHECK(slurp(s / "out/train_log_earn.csv") == vlog);
  CHECK(slurp(s / "out/earn.ckpt") == slurp(s / "out/vanilla.ckpt"));

  // Checkpoint save -> load -> save is byte identical.
  const std::string bytes = slurp(s / "out/vanilla.ckpt");
  CHECK(earn::encode_checkpoint(earn::load_checkpoint(s / "out/vanilla.ckpt")) == bytes);

  REQUIRE(s.run("eval --config " + cfg + " --mode vanilla") == 0);
  const std::string metrics = slurp(s / "out/metrics_vanilla.csv");
  REQUIRE(s.run("eval --config " + cfg + " --mode vanilla") == 0);
  CHECK(slurp(s / "out/metrics_vanilla.csv") == metrics);
  std::istringstream rows(metrics);
  std::string header, r10, r20;
  std::getline(rows, header);
  std::getline(rows, r10);
  std::getline(rows, r20);
  CHECK(header == "method,K,recall,ndcg");
  CHECK(r10.starts_with("vanilla,10,"));
  const double recall10 = std::stod(r10.substr(11));
  const double recall20 = std::stod(r20.substr(11));
  CHECK(recall20 >= recall10);

  // w/o RT: pruned evaluation of the vanilla-trained weights, no updates.
  REQUIRE(s.run("train --config " + cfg + " --mode earn-no-rt") == 0);
  CHECK(slurp(s / "out/earn-no-rt.ckpt") == bytes);
  const std::string nlog = slurp(s / "out/train_log_earn-no-rt.csv");
  CHECK(nlog.starts_with("epoch,loss,valid_recall10\n0,"));
  CHECK(s.run("eval --config " + cfg + " --checkpoint " + (s / "none.ckpt").string()) != 0);
}

TEST_CASE("eval: saturated 5-item catalog reaches Recall@10 = 1") {
  Scratch s("sat");
  const auto cfg = s.config("", R"("n_users": 20, "n_items": 5, "n_clusters": 1, "within_cluster": 1.0,
                                   "codebook_size": 4, "min_length": 3, "max_length": 5)")
                       .string();
  REQUIRE(s.run("gen-data --config " + cfg) == 0);
  // Override epochs and learning rate through a second config file.
  std::string text = slurp(cfg);
  text.replace(text.find(R"("epochs": 2)"), 11, R"("epochs": 30, "learning_rate": 0.01)");
  std::ofstream(s / "sat.json") << text;
  REQUIRE(s.run("train --config " + (s / "sat.json").string()) == 0);
  REQUIRE(s.run("eval --config " + (s / "sat.json").string()) == 0);
  CHECK(slurp(s / "out/metrics_earn.csv").find("earn,10,1,") != std::string::npos);
}

TEST_CASE("bench, cost-model and analyze-attn write their reports") {
  Scratch s("reports");
  const auto cfg = s.config().string();
  REQUIRE(s.run("cost-model --config " + cfg) == 0);
  const std::string cost = slurp(s / "out/cost.csv");
  CHECK(cost.starts_with("N,k,L,r,gamma_attn,gamma_cache,omega,t_prefill,t_decode\n32,8,512,2,"));
  CHECK(cost.find(",4,") != std::string::npos);

  REQUIRE(s.run("bench --config " + cfg + " --workers 2") == 0);
  const std::string bench = slurp(s / "out/bench.csv");
  CHECK(bench.find("\nvanilla,1,24,1,") != std::string::npos);
  CHECK(bench.find("\nearn,1,24,") != std::string::npos);

  REQUIRE(s.run("analyze-attn --config " + cfg) == 0);
  const std::string a1 = slurp(s / "out/attn_earn.csv");
  CHECK(a1.starts_with("layer,head,sparsity,sink_head,sink_tail\n"));
  CHECK(a1.find("all,mean,") != std::string::npos);
  REQUIRE(s.run("analyze-attn --config " + cfg) == 0);
  CHECK(slurp(s / "out/attn_earn.csv") == a1);
  REQUIRE(s.run("analyze-attn --config " + cfg + " --seed 9") == 0);
  CHECK_FALSE(slurp(s / "out/attn_earn.csv") == a1);

  ::setenv("EARN_OUT_DIR", (s / "env").string().c_str(), 1);
  const int rc = s.run("cost-model --config " + cfg);
  ::unsetenv("EARN_OUT_DIR");
  REQUIRE(rc == 0);
  CHECK(fs::exists(s / "env/cost.csv"));
}
