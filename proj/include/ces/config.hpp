// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration file. A JSON object with sections policy, pretrain,
// train, shaping, clip and eval; every key is optional, unknown keys are
// rejected. to_json() writes every key, so parse(to_json(c)) == c.

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "ces/eval.hpp"
#include "ces/objective.hpp"
#include "ces/policy.hpp"
#include "ces/shaping.hpp"
#include "ces/tasks.hpp"
#include "ces/trainer.hpp"

namespace ces {

/// Bad config content or shape.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct PolicySettings {
  Architecture architecture = Architecture::mlp;
  int hidden = 64;
  FeatureConfig features{13, 4, 64};
  int fillers = kDefaultFillerCount;
  double init_scale = 0.1;
  std::uint64_t init_seed = 11;
  double temperature = 1.0;  ///< rollout temperature

  void validate() const {
    if (architecture == Architecture::mlp && hidden < 1) throw ConfigError("policy: hidden must be >= 1");
    if (features.window < 0 || features.buckets < 1 || features.max_length < 1)
      throw ConfigError("policy: window >= 0, buckets >= 1 and max_length >= 1 required");
    if (fillers < 1) throw ConfigError("policy: fillers must be >= 1");
    if (!(init_scale >= 0.0)) throw ConfigError("policy: init_scale must be >= 0");
    if (!(temperature > 0.0)) throw ConfigError("policy: temperature must be > 0");
  }
  friend bool operator==(const PolicySettings& a, const PolicySettings& b) {
    return a.architecture == b.architecture && a.hidden == b.hidden && a.features.window == b.features.window &&
           a.features.buckets == b.features.buckets && a.features.max_length == b.features.max_length &&
           a.fillers == b.fillers && a.init_scale == b.init_scale && a.init_seed == b.init_seed &&
           a.temperature == b.temperature;
  }
};

struct PretrainSettings {
  bool enabled = true;
  PretrainConfig config{7, 8000, 32, 1e-2, 0.45, 20, Tier::mixed, 0.5, 1};
  friend bool operator==(const PretrainSettings&, const PretrainSettings&) = default;
};

struct EvalSettings {
  EvalConfig config;
  int questions = 500;
  std::uint64_t question_seed = 97;
  Tier tier = Tier::mixed;
  friend bool operator==(const EvalSettings&, const EvalSettings&) = default;
};

/// Defaults are the toy-scale settings used throughout the README.
struct RunConfig {
  PolicySettings policy;
  PretrainSettings pretrain;
  TrainConfig train = [] {
    TrainConfig t;
    t.prompts_per_batch = 16;
    t.learning_rate = 1e-3;
    t.total_samples = 16384;
    t.shaping.tau = 0.2;
    return t;
  }();
  EvalSettings eval;

  void validate() const {
    policy.validate();
    try {
      pretrain.config.validate();
      train.validate();
      eval.config.validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (eval.questions < 1) throw ConfigError("eval: questions must be >= 1");
  }
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace config_detail {

using Json = nlohmann::json;

class Section {
 public:
  Section(const Json& root, const char* name) : name_(name) {
    const auto it = root.find(name);
    if (it == root.end()) return;
    if (!it->is_object()) throw ConfigError(std::string("config: section '") + name + "' must be an object");
    obj_ = &*it;
    for (const auto& [k, v] : it->items()) unknown_.insert(k);
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!obj_) return;
    const auto it = obj_->find(key);
    if (it == obj_->end()) return;
    unknown_.erase(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!it->is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<T>) {
          if (it->is_number_integer() && !it->is_number_unsigned()) throw ConfigError("");
        }
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError("");
      }
      out = it->get<T>();
    } catch (const std::exception&) {
      throw ConfigError("config: " + std::string(name_) + "." + key + " has the wrong type");
    }
  }

  template <class E, class Parse>
  void get_enum(const char* key, E& out, Parse parse) {
    std::string s;
    bool present = obj_ && obj_->contains(key);
    get(key, s);
    if (!present) return;
    try {
      out = parse(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("config: " + std::string(name_) + "." + key + ": " + e.what());
    }
  }

  void finish() const {
    if (!unknown_.empty()) throw ConfigError("config: unknown key '" + std::string(name_) + "." + *unknown_.begin() + "'");
  }

 private:
  const char* name_;
  const Json* obj_ = nullptr;
  std::set<std::string> unknown_;
};

inline Architecture architecture_from_string(const std::string& s) {
  if (s == "linear") return Architecture::linear;
  if (s == "mlp") return Architecture::mlp;
  throw std::invalid_argument("unknown architecture '" + s + "' (expected linear|mlp)");
}

}  // namespace config_detail

inline RunConfig parse_run_config(const nlohmann::json& root) {
  using config_detail::Section;
  if (!root.is_object()) throw ConfigError("config: top level must be an object");
  static const std::set<std::string> kSections{"schema_version", "policy", "pretrain", "train", "shaping", "clip", "eval"};
  for (const auto& [k, v] : root.items())
    if (!kSections.contains(k)) throw ConfigError("config: unknown section '" + k + "'");
  if (const auto it = root.find("schema_version"); it != root.end() && (!it->is_number_integer() || *it != 1))
    throw ConfigError("config: unsupported schema_version");

  RunConfig c;
  {
    Section s(root, "policy");
    s.get_enum("architecture", c.policy.architecture, config_detail::architecture_from_string);
    s.get("hidden", c.policy.hidden);
    s.get("window", c.policy.features.window);
    s.get("buckets", c.policy.features.buckets);
    s.get("max_length", c.policy.features.max_length);
    s.get("fillers", c.policy.fillers);
    s.get("init_scale", c.policy.init_scale);
    s.get("init_seed", c.policy.init_seed);
    s.get("temperature", c.policy.temperature);
    s.finish();
  }
  {
    Section s(root, "pretrain");
    auto& p = c.pretrain.config;
    s.get("enabled", c.pretrain.enabled);
    s.get("seed", p.seed);
    s.get("steps", p.steps);
    s.get("batch", p.batch);
    s.get("learning_rate", p.learning_rate);
    s.get("close_prob", p.close_prob);
    s.get("max_rounds", p.max_rounds);
    s.get_enum("tier", p.tier, tier_from_string);
    s.get("easy_fraction", p.easy_fraction);
    s.finish();
  }
  {
    Section s(root, "train");
    auto& t = c.train;
    s.get("seed", t.seed);
    s.get("prompts_per_batch", t.prompts_per_batch);
    s.get("samples_per_prompt", t.samples_per_prompt);
    s.get("budget", t.budget);
    s.get("learning_rate", t.learning_rate);
    s.get("total_samples", t.total_samples);
    s.get_enum("tier", t.tier, tier_from_string);
    s.get("easy_fraction", t.easy_fraction);
    s.get("threads", t.threads);
    s.finish();
  }
  {
    Section s(root, "shaping");
    auto& sh = c.train.shaping;
    s.get_enum("mode", sh.mode, shaping_mode_from_string);
    s.get("tau", sh.tau);
    s.get("beta1", sh.beta1);
    s.get("beta2", sh.beta2);
    s.finish();
  }
  {
    Section s(root, "clip");
    auto& cl = c.train.clip;
    s.get("eps_low", cl.eps_low);
    s.get("eps_high", cl.eps_high);
    s.get("epochs", cl.epochs);
    s.finish();
  }
  {
    Section s(root, "eval");
    auto& e = c.eval;
    s.get("generations", e.config.generations);
    s.get("temperature", e.config.temperature);
    s.get("budget", e.config.budget);
    s.get("seed", e.config.seed);
    s.get("threads", e.config.threads);
    s.get("questions", e.questions);
    s.get("question_seed", e.question_seed);
    s.get_enum("tier", e.tier, tier_from_string);
    s.finish();
  }
  c.pretrain.config.threads = c.train.threads;
  c.validate();
  return c;
}

inline RunConfig parse_run_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return parse_run_config(j);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config_text(ss.str());
}

inline nlohmann::json to_json(const RunConfig& c) {
  const auto& p = c.pretrain.config;
  const auto& t = c.train;
  return nlohmann::json{
      {"schema_version", 1},
      {"policy",
       {{"architecture", to_string(c.policy.architecture)},
        {"hidden", c.policy.hidden},
        {"window", c.policy.features.window},
        {"buckets", c.policy.features.buckets},
        {"max_length", c.policy.features.max_length},
        {"fillers", c.policy.fillers},
        {"init_scale", c.policy.init_scale},
        {"init_seed", c.policy.init_seed},
        {"temperature", c.policy.temperature}}},
      {"pretrain",
       {{"enabled", c.pretrain.enabled},
        {"seed", p.seed},
        {"steps", p.steps},
        {"batch", p.batch},
        {"learning_rate", p.learning_rate},
        {"close_prob", p.close_prob},
        {"max_rounds", p.max_rounds},
        {"tier", to_string(p.tier)},
        {"easy_fraction", p.easy_fraction}}},
      {"train",
       {{"seed", t.seed},
        {"prompts_per_batch", t.prompts_per_batch},
        {"samples_per_prompt", t.samples_per_prompt},
        {"budget", t.budget},
        {"learning_rate", t.learning_rate},
        {"total_samples", t.total_samples},
        {"tier", to_string(t.tier)},
        {"easy_fraction", t.easy_fraction},
        {"threads", t.threads}}},
      {"shaping",
       {{"mode", to_string(t.shaping.mode)}, {"tau", t.shaping.tau}, {"beta1", t.shaping.beta1}, {"beta2", t.shaping.beta2}}},
      {"clip", {{"eps_low", t.clip.eps_low}, {"eps_high", t.clip.eps_high}, {"epochs", t.clip.epochs}}},
      {"eval",
       {{"generations", c.eval.config.generations},
        {"temperature", c.eval.config.temperature},
        {"budget", c.eval.config.budget},
        {"seed", c.eval.config.seed},
        {"threads", c.eval.config.threads},
        {"questions", c.eval.questions},
        {"question_seed", c.eval.question_seed},
        {"tier", to_string(c.eval.tier)}}}};
}

}  // namespace ces
