// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ces/parallel.hpp"
#include "ces/policy.hpp"
#include "ces/rollout.hpp"
#include "ces/tasks.hpp"

namespace ces {

struct EvalConfig {
  int generations = 4;
  double temperature = 0.4;
  int budget = 64;
  std::uint64_t seed = 2024;
  int threads = 1;

  void validate() const {
    if (generations < 1) throw std::invalid_argument("eval: generations must be >= 1");
    if (!(temperature > 0.0)) throw std::invalid_argument("eval: temperature must be > 0");
    if (budget < 1) throw std::invalid_argument("eval: budget must be >= 1");
    if (threads < 1) throw std::invalid_argument("eval: threads must be >= 1");
  }
  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct QuestionResult {
  std::int64_t id = 0;
  Tier tier = Tier::easy;
  std::vector<int> lengths;
  std::vector<int> correct;
  double accuracy = 0.0;
  double mean_length = 0.0;
};

struct Summary {
  int questions = 0;
  double accuracy = 0.0;
  double mean_length = 0.0;
};

struct EvalReport {
  int generations = 0;
  double temperature = 0.0;
  std::vector<QuestionResult> questions;
  Summary easy;
  Summary hard;
  Summary overall;
};

inline Summary summarize(std::span<const QuestionResult> qs) {
  Summary s;
  for (const auto& q : qs) {
    ++s.questions;
    s.accuracy += q.accuracy;
    s.mean_length += q.mean_length;
  }
  if (s.questions > 0) {
    s.accuracy /= s.questions;
    s.mean_length /= s.questions;
  }
  return s;
}

/// Samples `generations` responses per question at the eval temperature.
/// Generation g of question id uses stream derive_seed(seed, {id, g}).
inline EvalReport evaluate(const PolicyParams& params, std::span<const TaskInstance> questions,
                           const EvalConfig& cfg) {
  cfg.validate();
  if (questions.empty()) throw std::invalid_argument("evaluate: empty question set");
  const auto policy = params.with_temperature(cfg.temperature);
  EvalReport rep;
  rep.generations = cfg.generations;
  rep.temperature = cfg.temperature;
  rep.questions.resize(questions.size());
  parallel_for(questions.size(), cfg.threads, [&](std::size_t qi) {
    const auto& inst = questions[qi];
    auto& q = rep.questions[qi];
    q.id = inst.id;
    q.tier = inst.tier;
    for (int g = 0; g < cfg.generations; ++g) {
      Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(inst.id), static_cast<std::uint64_t>(g)}));
      const auto resp = sample_response(policy, inst.prompt, cfg.budget, rng);
      const auto ids = resp.token_ids();
      q.lengths.push_back(static_cast<int>(ids.size()));
      q.correct.push_back(check_accuracy(inst, ids));
    }
    double acc = 0.0, len = 0.0;
    for (int g = 0; g < cfg.generations; ++g) {
      acc += q.correct[static_cast<std::size_t>(g)];
      len += q.lengths[static_cast<std::size_t>(g)];
    }
    q.accuracy = acc / cfg.generations;
    q.mean_length = len / cfg.generations;
  });
  std::vector<QuestionResult> easy, hard;
  for (const auto& q : rep.questions) (q.tier == Tier::easy ? easy : hard).push_back(q);
  rep.easy = summarize(easy);
  rep.hard = summarize(hard);
  rep.overall = summarize(rep.questions);
  return rep;
}

/// Greedy (argmax) decoding of one response.
inline std::vector<TokenId> greedy_response(const PolicyParams& params, std::span<const TokenId> prompt, int budget) {
  std::vector<TokenId> ctx(prompt.begin(), prompt.end());
  std::vector<TokenId> out;
  for (int j = 0; j < budget; ++j) {
    const TokenId t = argmax_token(distribution(params, features(params, ctx, j)));
    out.push_back(t);
    ctx.push_back(t);
    if (t == params.vocab().eos()) break;
  }
  return out;
}

inline double greedy_accuracy(const PolicyParams& params, std::span<const TaskInstance> questions, int budget) {
  if (questions.empty()) throw std::invalid_argument("greedy_accuracy: empty question set");
  double acc = 0.0;
  for (const auto& q : questions) acc += check_accuracy(q, greedy_response(params, q.prompt, budget));
  return acc / static_cast<double>(questions.size());
}

// Difficulty stratification ----------------------------------------------------

enum class Stratum { simple, difficult };

inline const char* to_string(Stratum s) { return s == Stratum::simple ? "simple" : "difficult"; }

/// Baseline accuracy strictly above one half is simple; exactly one half or
/// below is difficult.
constexpr Stratum stratum_of(double baseline_accuracy) noexcept {
  return baseline_accuracy > 0.5 ? Stratum::simple : Stratum::difficult;
}

struct StratumComparison {
  int questions = 0;
  double baseline_accuracy = 0.0;
  double new_accuracy = 0.0;
  double baseline_length = 0.0;
  double new_length = 0.0;
  double length_delta = 0.0;  ///< new - baseline
};

struct StratifiedQuestion {
  std::int64_t id = 0;
  Stratum stratum = Stratum::simple;
  double baseline_accuracy = 0.0;
  double new_accuracy = 0.0;
  double baseline_length = 0.0;
  double new_length = 0.0;
};

struct StratifiedComparison {
  std::vector<StratifiedQuestion> questions;
  StratumComparison simple;
  StratumComparison difficult;
  StratumComparison overall;
};

inline StratumComparison compare_stratum(std::span<const StratifiedQuestion> qs) {
  StratumComparison c;
  for (const auto& q : qs) {
    ++c.questions;
    c.baseline_accuracy += q.baseline_accuracy;
    c.new_accuracy += q.new_accuracy;
    c.baseline_length += q.baseline_length;
    c.new_length += q.new_length;
  }
  if (c.questions > 0) {
    const double n = c.questions;
    c.baseline_accuracy /= n;
    c.new_accuracy /= n;
    c.baseline_length /= n;
    c.new_length /= n;
  }
  c.length_delta = c.new_length - c.baseline_length;
  return c;
}

inline StratifiedComparison stratify(const EvalReport& baseline, const EvalReport& current) {
  std::map<std::int64_t, const QuestionResult*> by_id;
  for (const auto& q : current.questions) by_id[q.id] = &q;
  if (by_id.size() != current.questions.size() || baseline.questions.size() != current.questions.size())
    throw std::invalid_argument("stratify: reports cover different question sets");
  StratifiedComparison out;
  std::vector<StratifiedQuestion> simple, difficult;
  for (const auto& b : baseline.questions) {
    const auto it = by_id.find(b.id);
    if (it == by_id.end()) throw std::invalid_argument("stratify: question id " + std::to_string(b.id) + " missing");
    StratifiedQuestion q{b.id, stratum_of(b.accuracy), b.accuracy, it->second->accuracy, b.mean_length,
                         it->second->mean_length};
    (q.stratum == Stratum::simple ? simple : difficult).push_back(q);
    out.questions.push_back(q);
  }
  out.simple = compare_stratum(simple);
  out.difficult = compare_stratum(difficult);
  out.overall = compare_stratum(out.questions);
  return out;
}

}  // namespace ces
