// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "earn/experiment.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <type_traits>

#include "json.hpp"

#include "earn/error.hpp"

namespace earn {

namespace {

using json = nlohmann::ordered_json;

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// Re-raises a nested ConfigError under `prefix`.
template <class F>
void scoped(const std::string& prefix, F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    const std::string head = e.field() + ": ";
    const std::string msg = what.starts_with(head) ? what.substr(head.size()) : what;
    throw ConfigError(join(prefix, e.field()), msg);
  }
}

// Reads the keys of one JSON object, remembering which were consumed.
class Reader {
 public:
  Reader(const json* j, std::string path) : j_(j), path_(std::move(path)) {
    if (j_ != nullptr && !j_->is_object()) throw ConfigError(path_.empty() ? "config" : path_, "must be an object");
  }

  bool has(const char* key) const { return j_ != nullptr && j_->contains(key); }

  Reader child(const char* key) {
    seen_.insert(key);
    return Reader(has(key) ? &j_->at(key) : nullptr, join(path_, key));
  }

  const json* raw(const char* key) {
    seen_.insert(key);
    return has(key) ? &j_->at(key) : nullptr;
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!has(key)) return;
    out = convert<T>(j_->at(key), join(path_, key));
  }

  void finish() const {
    if (j_ == nullptr) return;
    for (const auto& [key, value] : j_->items()) {
      if (!seen_.contains(key)) throw ConfigError(join(path_, key), "unknown field");
    }
  }

  template <class T>
  static T convert(const json& v, const std::string& field) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(field, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(field, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(field, "expected a number");
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(field, "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned()) return static_cast<T>(v.get<std::uint64_t>());
        if (v.get<std::int64_t>() < 0) throw ConfigError(field, "must be non-negative");
        return static_cast<T>(v.get<std::int64_t>());
      } else {
        const auto x = v.get<std::int64_t>();
        if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max()) {
          throw ConfigError(field, "out of range");
        }
        return static_cast<T>(x);
      }
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
  }

  template <class T>
  void get_list(const char* key, std::vector<T>& out) {
    seen_.insert(key);
    if (!has(key)) return;
    const json& v = j_->at(key);
    const std::string field = join(path_, key);
    if (!v.is_array()) throw ConfigError(field, "expected an array");
    out.clear();
    for (const auto& e : v) out.push_back(convert<T>(e, field));
  }

 private:
  const json* j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_model(Reader r, ModelConfig& m) {
  r.get("num_layers", m.num_layers);
  r.get("num_heads", m.num_heads);
  r.get("num_kv_heads", m.num_kv_heads);
  r.get("head_dim", m.head_dim);
  r.get("hidden_dim", m.hidden_dim);
  r.get("ffn_dim", m.ffn_dim);
  r.get("vocab_size", m.vocab_size);
  r.get("rope_base", m.rope_base);
  r.get("max_positions", m.max_positions);
  r.get("norm_eps", m.norm_eps);
  r.finish();
}

void read_registers(Reader r, RegisterSpec& s) {
  r.get("n_prefix", s.n_prefix);
  r.get("n_suffix", s.n_suffix);
  r.get("register_layer", s.register_layer);
  r.finish();
}

json model_json(const ModelConfig& m) {
  json j;
  j["num_layers"] = m.num_layers;
  j["num_heads"] = m.num_heads;
  j["num_kv_heads"] = m.num_kv_heads;
  j["head_dim"] = m.head_dim;
  j["hidden_dim"] = m.hidden_dim;
  j["ffn_dim"] = m.ffn_dim;
  j["vocab_size"] = m.vocab_size;
  j["rope_base"] = m.rope_base;
  j["max_positions"] = m.max_positions;
  j["norm_eps"] = m.norm_eps;
  return j;
}

json registers_json(const RegisterSpec& s) {
  json j;
  j["n_prefix"] = s.n_prefix;
  j["n_suffix"] = s.n_suffix;
  j["register_layer"] = s.register_layer;
  return j;
}

}  // namespace

ModelConfig typical_model_config() {
  ModelConfig m;
  m.num_layers = 32;
  m.num_heads = 32;
  m.num_kv_heads = 32;
  m.head_dim = 128;
  m.hidden_dim = 4096;
  m.ffn_dim = 11008;
  m.vocab_size = 32000;
  m.max_positions = 1 << 22;
  return m;
}

ExperimentConfig::ExperimentConfig() {
  model.vocab_size = data.synthetic.scheme.vocab_size();
  registers = RegisterSpec::recommended(model);
}

void ExperimentConfig::validate() const {
  if (workers < 1) throw ConfigError("workers", "must be >= 1");
  if (out_dir.empty()) throw ConfigError("out_dir", "must not be empty");
  scoped("model", [&] { model.validate(); });
  scoped("registers", [&] { registers.validate(model); });
  scoped("train", [&] { train.validate(); });

  if (data.source != "synthetic" && data.source != "ingest") {
    throw ConfigError("data.source", "expected 'synthetic' or 'ingest'");
  }
  if (data.source == "ingest") {
    if (data.log_path.empty()) throw ConfigError("data.log_path", "required when data.source is 'ingest'");
    if (data.catalog_path.empty()) throw ConfigError("data.catalog_path", "required when data.source is 'ingest'");
  }
  scoped("data.synthetic", [&] { data.synthetic.validate(); });
  if (data.max_history < 1) throw ConfigError("data.max_history", "must be >= 1");
  const auto& scheme = data.synthetic.scheme;
  if (model.vocab_size < scheme.vocab_size()) {
    throw ConfigError("model.vocab_size", "must cover the identifier vocabulary (" +
                                              std::to_string(scheme.vocab_size()) + " tokens)");
  }
  const auto longest = static_cast<std::size_t>(registers.count() + scheme.n_instruction_tokens) +
                       kIdentifierTokens * (data.max_history + 1);
  if (longest > static_cast<std::size_t>(model.max_positions)) {
    throw ConfigError("model.max_positions", "too small for the longest training sequence (" +
                                                 std::to_string(longest) + " tokens)");
  }

  if (eval.ks.empty()) throw ConfigError("eval.ks", "at least one K required");
  for (auto k : eval.ks) {
    if (k < 1) throw ConfigError("eval.ks", "every K must be >= 1");
  }
  if (eval.beam_width < 1) throw ConfigError("eval.beam_width", "must be >= 1");

  scoped("bench", [&] { bench.validate(); });
  if (bench.skip_cut > model.num_layers) throw ConfigError("bench.skip_cut", "must not exceed model.num_layers");
  for (auto len : bench.lengths) {
    if (len <= static_cast<std::size_t>(registers.count())) {
      throw ConfigError("bench.lengths", "every length must exceed the register count");
    }
    if (len + bench.decode_steps > static_cast<std::size_t>(model.max_positions)) {
      throw ConfigError("bench.lengths", "length plus decode_steps exceeds model.max_positions");
    }
  }

  scoped("cost", [&] { cost.env.validate(); });
  for (std::size_t i = 0; i < cost.cases.size(); ++i) {
    const std::string p = "cost.cases[" + std::to_string(i) + "]";
    const auto& c = cost.cases[i];
    scoped(p + ".model", [&] { c.model.validate(); });
    scoped(p + ".registers", [&] { c.registers.validate(c.model); });
    if (c.length < static_cast<std::uint64_t>(c.registers.count()) || c.length == 0) {
      throw ConfigError(p + ".length", "must be >= the register count and positive");
    }
  }

  if (!(attn.epsilon > 0 && attn.epsilon < 1)) throw ConfigError("attn.epsilon", "must be in (0, 1)");
  if (attn.early_layer_cutoff < 0 || attn.early_layer_cutoff > model.num_layers) {
    throw ConfigError("attn.early_layer_cutoff", "must be in [0, model.num_layers]");
  }
  if (attn.samples < 1) throw ConfigError("attn.samples", "must be >= 1");
  if (attn.prompt_length < 6 ||
      attn.prompt_length + static_cast<std::size_t>(registers.count()) > static_cast<std::size_t>(model.max_positions)) {
    throw ConfigError("attn.prompt_length", "must be >= 6 and fit within model.max_positions");
  }
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config", std::string("invalid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Reader root(&doc, "");
  root.get("seed", c.seed);
  root.get("out_dir", c.out_dir);
  root.get("workers", c.workers);

  {
    Reader d = root.child("data");
    d.get("source", c.data.source);
    d.get("log_path", c.data.log_path);
    d.get("catalog_path", c.data.catalog_path);
    d.get("max_history", c.data.max_history);
    Reader s = d.child("synthetic");
    auto& sy = c.data.synthetic;
    s.get("n_users", sy.n_users);
    s.get("n_items", sy.n_items);
    s.get("min_length", sy.min_length);
    s.get("max_length", sy.max_length);
    s.get("n_clusters", sy.n_clusters);
    s.get("within_cluster", sy.within_cluster);
    s.get("zipf_exponent", sy.zipf_exponent);
    s.get("n_instruction_tokens", sy.scheme.n_instruction_tokens);
    s.get("codebook_size", sy.scheme.codebook_size);
    s.finish();
    d.finish();
  }

  // Defaults that depend on other sections: vocabulary from the identifier
  // scheme, register layer from the layer count.
  c.model.vocab_size = c.data.synthetic.scheme.vocab_size();
  read_model(root.child("model"), c.model);
  c.registers = RegisterSpec::recommended(c.model);
  read_registers(root.child("registers"), c.registers);

  {
    Reader t = root.child("train");
    t.get("learning_rate", c.train.learning_rate);
    t.get("warmup_ratio", c.train.warmup_ratio);
    t.get("effective_batch", c.train.effective_batch);
    t.get("epochs", c.train.epochs);
    t.get("weight_decay", c.train.weight_decay);
    t.get("beta1", c.train.beta1);
    t.get("beta2", c.train.beta2);
    t.get("adam_eps", c.train.adam_eps);
    t.get("valid_limit", c.train.valid_limit);
    t.get("beam_width", c.train.beam_width);
    t.finish();
  }
  {
    Reader e = root.child("eval");
    e.get_list("ks", c.eval.ks);
    e.get("beam_width", c.eval.beam_width);
    e.get("limit", c.eval.limit);
    e.finish();
  }
  {
    Reader b = root.child("bench");
    std::vector<std::string> methods;
    b.get_list("methods", methods);
    if (!methods.empty()) {
      c.bench.methods.clear();
      scoped("bench", [&] {
        for (const auto& m : methods) c.bench.methods.push_back(parse_bench_method(m));
      });
    }
    b.get_list("batch_sizes", c.bench.batch_sizes);
    b.get_list("lengths", c.bench.lengths);
    b.get("decode_steps", c.bench.decode_steps);
    b.get("repeats", c.bench.repeats);
    b.get("warmups", c.bench.warmups);
    b.get("skip_cut", c.bench.skip_cut);
    b.get("window_initial", c.bench.window.n_initial);
    b.get("window_recent", c.bench.window.n_recent);
    b.get("memory_budget_bytes", c.bench.memory_budget_bytes);
    b.get("unstable_spread", c.bench.unstable_spread);
    b.finish();
  }
  {
    Reader k = root.child("cost");
    k.get("v_c", c.cost.env.flops_per_second);
    k.get("v_m", c.cost.env.bytes_per_second);
    k.get("element_bytes", c.cost.env.element_bytes);
    k.get("n_generate", c.cost.n_generate);
    if (const json* cases = k.raw("cases")) {
      if (!cases->is_array()) throw ConfigError("cost.cases", "expected an array");
      for (std::size_t i = 0; i < cases->size(); ++i) {
        const std::string p = "cost.cases[" + std::to_string(i) + "]";
        Reader cr(&cases->at(i), p);
        CostCase cc;
        cc.model = typical_model_config();
        read_model(cr.child("model"), cc.model);
        cc.registers = RegisterSpec{1, 1, std::max(1, cc.model.num_layers / 4)};
        read_registers(cr.child("registers"), cc.registers);
        cr.get("length", cc.length);
        cr.finish();
        c.cost.cases.push_back(cc);
      }
    }
    k.finish();
  }
  {
    Reader a = root.child("attn");
    a.get("epsilon", c.attn.epsilon);
    a.get("early_layer_cutoff", c.attn.early_layer_cutoff);
    a.get("prompt_length", c.attn.prompt_length);
    a.get("samples", c.attn.samples);
    a.get("full", c.attn.full);
    a.finish();
  }
  root.finish();
  c.train.seed = c.seed;
  c.bench.seed = c.seed;
  c.bench.workers = c.workers;
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string ExperimentConfig::to_json_text() const {
  json j;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["workers"] = workers;
  j["model"] = model_json(model);
  j["registers"] = registers_json(registers);
  j["train"] = {{"learning_rate", train.learning_rate}, {"warmup_ratio", train.warmup_ratio},
                {"effective_batch", train.effective_batch}, {"epochs", train.epochs},
                {"weight_decay", train.weight_decay}, {"beta1", train.beta1}, {"beta2", train.beta2},
                {"adam_eps", train.adam_eps}, {"valid_limit", train.valid_limit}, {"beam_width", train.beam_width}};
  const auto& sy = data.synthetic;
  j["data"] = {{"source", data.source},
               {"log_path", data.log_path},
               {"catalog_path", data.catalog_path},
               {"max_history", data.max_history},
               {"synthetic",
                {{"n_users", sy.n_users}, {"n_items", sy.n_items}, {"min_length", sy.min_length},
                 {"max_length", sy.max_length}, {"n_clusters", sy.n_clusters}, {"within_cluster", sy.within_cluster},
                 {"zipf_exponent", sy.zipf_exponent}, {"n_instruction_tokens", sy.scheme.n_instruction_tokens},
                 {"codebook_size", sy.scheme.codebook_size}}}};
  j["eval"] = {{"ks", eval.ks}, {"beam_width", eval.beam_width}, {"limit", eval.limit}};
  std::vector<std::string> methods;
  for (auto m : bench.methods) methods.emplace_back(to_string(m));
  j["bench"] = {{"methods", methods},
                {"batch_sizes", bench.batch_sizes},
                {"lengths", bench.lengths},
                {"decode_steps", bench.decode_steps},
                {"repeats", bench.repeats},
                {"warmups", bench.warmups},
                {"skip_cut", bench.skip_cut},
                {"window_initial", bench.window.n_initial},
                {"window_recent", bench.window.n_recent},
                {"memory_budget_bytes", bench.memory_budget_bytes},
                {"unstable_spread", bench.unstable_spread}};
  json cases = json::array();
  for (const auto& c : cost.cases) {
    cases.push_back({{"model", model_json(c.model)}, {"registers", registers_json(c.registers)}, {"length", c.length}});
  }
  j["cost"] = {{"v_c", cost.env.flops_per_second},
               {"v_m", cost.env.bytes_per_second},
               {"element_bytes", cost.env.element_bytes},
               {"n_generate", cost.n_generate},
               {"cases", cases}};
  j["attn"] = {{"epsilon", attn.epsilon},
               {"early_layer_cutoff", attn.early_layer_cutoff},
               {"prompt_length", attn.prompt_length},
               {"samples", attn.samples},
               {"full", attn.full}};
  return j.dump(2) + "\n";
}

}  // namespace earn
