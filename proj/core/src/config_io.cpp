// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "cpmoe/config_io.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "cpmoe/errors.hpp"

namespace cpmoe {

namespace {

using KeyValues = std::map<std::string, std::string, std::less<>>;

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& value) {
  N out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + value + "'");
}

std::string format_bool(bool b) { return b ? "true" : "false"; }

template <typename N>
std::string format_int(N n) {
  return std::to_string(n);
}

// One settable field: how to read it from text and how to write it back.
template <typename C>
struct Field {
  const char* key;
  std::function<void(C&, const std::string&, const std::string&)> set;
  std::function<std::string(const C&)> get;
};

template <typename C, typename N>
Field<C> size_field(const char* key, N C::*member) {
  return {key, [member](C& c, const std::string& k, const std::string& v) {
            c.*member = parse_number<N>(k, v);
          },
          [member](const C& c) { return format_int(c.*member); }};
}

template <typename C>
Field<C> double_field(const char* key, double C::*member) {
  return {key, [member](C& c, const std::string& k, const std::string& v) {
            c.*member = parse_number<double>(k, v);
          },
          [member](const C& c) { return format_double(c.*member); }};
}

template <typename C>
Field<C> bool_field(const char* key, bool C::*member) {
  return {key, [member](C& c, const std::string& k, const std::string& v) {
            c.*member = parse_bool(k, v);
          },
          [member](const C& c) { return format_bool(c.*member); }};
}

const std::vector<Field<ModelConfig>>& model_fields() {
  using M = ModelConfig;
  static const std::vector<Field<M>> fields = {
      size_field("model.vocab_size", &M::vocab_size),
      size_field("model.d_model", &M::d_model),
      size_field("model.ffn_dim", &M::ffn_dim),
      size_field("model.n_layers", &M::n_layers),
      size_field("model.n_heads", &M::n_heads),
      size_field("model.max_seq_len", &M::max_seq_len),
      {"model.variant",
       [](M& c, const std::string&, const std::string& v) { c.variant = parse_variant(v); },
       [](const M& c) { return std::string(to_string(c.variant)); }},
      bool_field("model.moe_every_other", &M::moe_every_other),
      size_field("model.num_experts", &M::num_experts),
      size_field("model.split", &M::split),
      size_field("model.top_k", &M::top_k),
      double_field("model.topp_threshold", &M::topp_threshold),
      bool_field("model.shared_experts", &M::shared_experts),
      bool_field("model.tied_embeddings", &M::tied_embeddings),
      double_field("model.alpha_balance", &M::alpha_balance),
      double_field("model.capacity_factor", &M::capacity_factor),
      double_field("model.rope_base", &M::rope_base),
      size_field("model.seed", &M::seed),
  };
  return fields;
}

const std::vector<Field<ExperimentConfig>>& experiment_fields() {
  using E = ExperimentConfig;
  static const std::vector<Field<E>> fields = {
      {"data.path", [](E& c, const std::string&, const std::string& v) { c.data_path = v; },
       [](const E& c) { return c.data_path; }},
      double_field("data.held_out_fraction", &E::held_out_fraction),
      size_field("train.steps", &E::steps),
      size_field("train.batch_size", &E::batch_size),
      size_field("train.seq_len", &E::seq_len),
      size_field("train.eval_every", &E::eval_every),
      size_field("train.seed", &E::seed),
      {"train.out_dir", [](E& c, const std::string&, const std::string& v) { c.out_dir = v; },
       [](const E& c) { return c.out_dir; }},
  };
  return fields;
}

const std::vector<Field<AdamWConfig>>& optim_fields() {
  using A = AdamWConfig;
  static const std::vector<Field<A>> fields = {
      double_field("optim.lr", &A::lr),
      double_field("optim.min_lr", &A::min_lr),
      size_field("optim.warmup_steps", &A::warmup_steps),
      double_field("optim.weight_decay", &A::weight_decay),
      double_field("optim.beta1", &A::beta1),
      double_field("optim.beta2", &A::beta2),
      double_field("optim.eps", &A::eps),
      double_field("optim.grad_clip", &A::grad_clip),
  };
  return fields;
}

template <typename C>
bool apply_field(const std::vector<Field<C>>& fields, C& target, const std::string& key,
                 const std::string& value) {
  for (const auto& f : fields) {
    if (key == f.key) {
      f.set(target, key, value);
      return true;
    }
  }
  return false;
}

template <typename C>
void write_fields(std::ostringstream& out, const std::vector<Field<C>>& fields, const C& c) {
  for (const auto& f : fields) out << f.key << " = " << f.get(c) << '\n';
}

}  // namespace

std::string format_double(double value) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), ptr);
}

void ExperimentConfig::validate() const {
  model.validate();
  if (steps == 0) throw ConfigError("train.steps must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (seq_len < 1 || seq_len > model.max_seq_len) {
    throw ConfigError("train.seq_len " + std::to_string(seq_len) + " must be in [1, " +
                      std::to_string(model.max_seq_len) + "]");
  }
  if (held_out_fraction <= 0.0 || held_out_fraction >= 1.0) {
    throw ConfigError("data.held_out_fraction must be in (0, 1)");
  }
  if (optim.lr <= 0.0) throw ConfigError("optim.lr must be positive");
}

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    kv[std::string(key)] = std::string(trim(line.substr(eq + 1)));
  }
  return kv;
}

ModelConfig parse_model_config(const KeyValues& kv) {
  ModelConfig c;
  if (auto it = kv.find("model.preset"); it != kv.end()) c = preset(it->second);
  for (const auto& [key, value] : kv) {
    if (!key.starts_with("model.") || key == "model.preset") continue;
    if (!apply_field(model_fields(), c, key, value)) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  return c;
}

std::string serialize_model_config(const ModelConfig& config) {
  std::ostringstream out;
  write_fields(out, model_fields(), config);
  return out.str();
}

ExperimentConfig parse_experiment_config(std::string_view text) {
  const auto kv = parse_key_values(text);
  ExperimentConfig c;
  c.model = parse_model_config(kv);
  for (const auto& [key, value] : kv) {
    if (key.starts_with("model.")) continue;
    if (apply_field(experiment_fields(), c, key, value)) continue;
    if (apply_field(optim_fields(), c.optim, key, value)) continue;
    throw ConfigError("unknown config key '" + key + "'");
  }
  c.optim.total_steps = c.steps;
  c.validate();
  return c;
}

std::string serialize_experiment_config(const ExperimentConfig& config) {
  std::ostringstream out;
  write_fields(out, model_fields(), config.model);
  write_fields(out, experiment_fields(), config);
  write_fields(out, optim_fields(), config.optim);
  return out.str();
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

void save_experiment_config(const ExperimentConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config file '" + path.string() + "'");
  out << serialize_experiment_config(config);
  if (!out) throw IoError("error while writing '" + path.string() + "'");
}

}  // namespace cpmoe
