// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ces/objective.hpp"
#include "ces/parallel.hpp"
#include "ces/policy.hpp"
#include "ces/rollout.hpp"
#include "ces/shaping.hpp"
#include "ces/tasks.hpp"

namespace ces {

struct TrainConfig {
  std::uint64_t seed = 1;
  int prompts_per_batch = 8;
  int samples_per_prompt = 4;  ///< N
  int budget = 64;             ///< max response tokens
  double learning_rate = 5e-2;
  long long total_samples = 2048;
  Tier tier = Tier::mixed;
  double easy_fraction = 0.5;
  int threads = 1;
  ShapingConfig shaping;
  ClipConfig clip;

  void validate() const {
    if (prompts_per_batch < 1) throw std::invalid_argument("train: prompts_per_batch must be >= 1");
    if (samples_per_prompt < 2) throw std::invalid_argument("train: samples_per_prompt must be >= 2");
    if (budget < 1) throw std::invalid_argument("train: budget must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be > 0");
    if (total_samples < 0) throw std::invalid_argument("train: total_samples must be >= 0");
    if (!(easy_fraction >= 0.0 && easy_fraction <= 1.0))
      throw std::invalid_argument("train: easy_fraction must be in [0, 1]");
    if (threads < 1) throw std::invalid_argument("train: threads must be >= 1");
    shaping.validate();
    clip.validate();
  }
  [[nodiscard]] long long samples_per_step() const {
    return static_cast<long long>(prompts_per_batch) * samples_per_prompt;
  }
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct MetricsRecord {
  long long step = 0;
  long long samples = 0;        ///< cumulative samples consumed after this step
  double mean_length = 0.0;     ///< tokens per response
  double mean_entropy = 0.0;    ///< rollout entropy (bits) averaged over all tokens
  double mean_accuracy = 0.0;   ///< mean group accuracy a
  double objective = 0.0;       ///< J at the snapshot, before the update
  double gradient_norm = 0.0;   ///< ||grad J|| at the snapshot
  int groups = 0;               ///< groups contributing to the update
  ShapingMode mode = ShapingMode::full_ces;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

struct TrainState {
  PolicyParams params;
  AdamState optimizer;
  long long step = 0;
  long long samples = 0;
};

inline TrainState initial_state(PolicyParams params) {
  TrainState s{std::move(params), {}, 0, 0};
  s.optimizer = AdamState::zeros(s.params.size());
  return s;
}

/// Everything a step produced, for dumps and replay checks.
struct StepOutput {
  MetricsRecord metrics;
  std::vector<GroupBatch> batches;
  std::vector<ShapingPlan> plans;
};

/// Prompt p of step s gets the id s * prompts_per_batch + p.
inline std::vector<GroupBatch> sample_step_batches(const PolicyParams& snapshot, const TrainConfig& cfg,
                                                   long long step) {
  const auto p_count = static_cast<std::size_t>(cfg.prompts_per_batch);
  std::vector<GroupBatch> batches(p_count);
  parallel_for(p_count, cfg.threads, [&](std::size_t p) {
    const auto s = static_cast<std::uint64_t>(step);
    Rng task_rng(derive_seed(cfg.seed, {1, s, p}));
    const auto id = step * cfg.prompts_per_batch + static_cast<long long>(p);
    auto inst = generate_instance(task_rng, cfg.tier, id, cfg.easy_fraction);
    batches[p] = sample_group(snapshot, inst, cfg.samples_per_prompt, cfg.budget, derive_seed(cfg.seed, {2, s, p}));
    score_group(batches[p]);
  });
  return batches;
}

/// Snapshot, sample, score, shape, update. No group is ever discarded.
inline StepOutput train_step(TrainState& state, const TrainConfig& cfg) {
  cfg.validate();
  const PolicyParams snapshot = state.params;
  StepOutput out;
  out.batches = sample_step_batches(snapshot, cfg, state.step);
  out.plans.resize(out.batches.size());
  parallel_for(out.batches.size(), cfg.threads,
               [&](std::size_t g) { out.plans[g] = shape_advantages(out.batches[g], cfg.shaping); });

  auto& m = out.metrics;
  m.step = state.step;
  m.mode = cfg.shaping.mode;
  m.groups = static_cast<int>(out.batches.size());
  double tokens = 0.0, entropy = 0.0, acc = 0.0, responses = 0.0;
  for (const auto& b : out.batches) {
    acc += b.accuracy;
    for (const auto& r : b.responses) {
      responses += 1.0;
      for (const auto& t : r.tokens) {
        tokens += 1.0;
        entropy += t.entropy_bits;
      }
    }
  }
  m.mean_length = tokens / responses;
  m.mean_entropy = entropy / tokens;
  m.mean_accuracy = acc / static_cast<double>(out.batches.size());

  for (int epoch = 0; epoch < cfg.clip.epochs; ++epoch) {
    const auto res = objective_value_and_gradient(out.batches, out.plans, state.params, cfg.clip, cfg.threads);
    if (epoch == 0) {
      m.objective = res.value;
      m.gradient_norm = l2_norm(res.gradient);
    }
    adam_step(state.params, res.gradient, state.optimizer, cfg.learning_rate);
  }
  ++state.step;
  state.samples += cfg.samples_per_step();
  m.samples = state.samples;
  return out;
}

struct TrainResult {
  PolicyParams params;
  std::vector<MetricsRecord> metrics;
};

/// Runs steps until total_samples have been consumed (a partial final batch
/// still samples a full step).
inline TrainResult train_loop(const TrainConfig& cfg, PolicyParams initial,
                              const std::function<void(const StepOutput&)>& on_step = {}) {
  cfg.validate();
  TrainState state = initial_state(std::move(initial));
  TrainResult result{state.params, {}};
  while (state.samples < cfg.total_samples) {
    auto out = train_step(state, cfg);
    if (on_step) on_step(out);
    result.metrics.push_back(out.metrics);
  }
  result.params = std::move(state.params);
  return result;
}

// Verbose-correct imitation target --------------------------------------------

struct PretrainConfig {
  std::uint64_t seed = 7;
  int steps = 8000;
  int batch = 32;          ///< scripted trajectories per step
  double learning_rate = 1e-2;
  double close_prob = 0.45;  ///< probability of closing the think block at each fork
  int max_rounds = 20;       ///< hard cap on filler rounds
  Tier tier = Tier::mixed;
  double easy_fraction = 0.5;
  int threads = 1;

  void validate() const {
    if (steps < 0 || batch < 1) throw std::invalid_argument("pretrain: steps >= 0 and batch >= 1 required");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("pretrain: learning_rate must be > 0");
    if (!(close_prob > 0.0 && close_prob <= 1.0)) throw std::invalid_argument("pretrain: close_prob must be in (0, 1]");
    if (max_rounds < 0) throw std::invalid_argument("pretrain: max_rounds must be >= 0");
  }
  friend bool operator==(const PretrainConfig&, const PretrainConfig&) = default;
};

/// <think> s (f check s)* </think> s <eos>, with s the correct digit and f a
/// filler word drawn uniformly; each fork closes with probability close_prob.
inline std::vector<TokenId> scripted_verbose_response(const TaskInstance& inst, int fillers, const PretrainConfig& cfg,
                                                      Rng& rng) {
  std::vector<TokenId> r{tok::kThinkOpen, inst.truth};
  for (int round = 0; round < cfg.max_rounds; ++round) {
    if (rng.uniform() < cfg.close_prob) break;
    r.push_back(tok::kFirstFiller + rng.uniform_int(0, fillers - 1));
    r.push_back(tok::kCheck);
    r.push_back(inst.truth);
  }
  r.insert(r.end(), {tok::kThinkClose, inst.truth, tok::kEos});
  return r;
}

/// Maximum-likelihood fit of `params` to scripted verbose-correct responses.
inline PolicyParams pretrain_verbose(PolicyParams params, const PretrainConfig& cfg) {
  cfg.validate();
  const int fillers = params.vocab_size() - tok::kFirstFiller;
  if (fillers < 1) throw std::invalid_argument("pretrain: vocabulary has no filler tokens");
  AdamState adam = AdamState::zeros(params.size());
  const auto batch = static_cast<std::size_t>(cfg.batch);
  std::vector<Gradient> parts(batch);
  std::vector<std::size_t> counts(batch);
  for (int step = 0; step < cfg.steps; ++step) {
    parallel_for(batch, cfg.threads, [&](std::size_t b) {
      Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(step), b}));
      const auto inst = generate_instance(rng, cfg.tier, 0, cfg.easy_fraction);
      const auto target = scripted_verbose_response(inst, fillers, cfg, rng);
      parts[b].assign(params.size(), 0.0);
      std::vector<TokenId> ctx = inst.prompt;
      for (std::size_t j = 0; j < target.size(); ++j) {
        const auto phi = features(params, ctx, static_cast<int>(j));
        const auto fwd = forward(params, phi);
        backprop_logits(params, phi, fwd, dlogp_dlogits(fwd.dist, target[j]), 1.0, parts[b]);
        ctx.push_back(target[j]);
      }
      counts[b] = target.size();
    });
    Gradient g(params.size(), 0.0);
    std::size_t n = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      n += counts[b];
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += parts[b][k];
    }
    for (auto& x : g) x /= static_cast<double>(n);
    adam_step(params, g, adam, cfg.learning_rate);
  }
  return params;
}

}  // namespace ces
