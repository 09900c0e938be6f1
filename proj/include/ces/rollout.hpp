// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "ces/parallel.hpp"
#include "ces/policy.hpp"
#include "ces/random.hpp"
#include "ces/tasks.hpp"

namespace ces {

/// One generated token. The context is not stored: it is the prompt followed
/// by the response prefix, see context_of().
struct TokenRecord {
  TokenId token = 0;
  int position = 0;
  double old_log_prob = 0.0;  ///< natural log, under the rollout snapshot
  double entropy_bits = 0.0;  ///< next-token entropy at sampling time
};

struct ResponseTrace {
  int index = 0;
  std::vector<TokenRecord> tokens;
  int r_acc = 0;
  int r_fmt = 0;
  bool truncated = false;

  [[nodiscard]] int reward() const noexcept { return r_acc + r_fmt; }
  [[nodiscard]] std::size_t length() const noexcept { return tokens.size(); }
  [[nodiscard]] std::vector<TokenId> token_ids() const {
    std::vector<TokenId> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(t.token);
    return ids;
  }
  [[nodiscard]] std::vector<double> entropies() const {
    std::vector<double> h;
    h.reserve(tokens.size());
    for (const auto& t : tokens) h.push_back(t.entropy_bits);
    return h;
  }
};

struct GroupBatch {
  TaskInstance instance;
  std::vector<ResponseTrace> responses;
  double accuracy = 0.0;           ///< a = mean r_acc
  std::vector<double> advantages;  ///< A_i, one per response
  bool scored = false;

  [[nodiscard]] std::size_t token_count() const noexcept {
    std::size_t n = 0;
    for (const auto& r : responses) n += r.length();
    return n;
  }
};

/// Tokens preceding response position j: prompt + response[0, j).
inline std::vector<TokenId> context_of(std::span<const TokenId> prompt, const ResponseTrace& response, int j) {
  std::vector<TokenId> ctx(prompt.begin(), prompt.end());
  for (int t = 0; t < j; ++t) ctx.push_back(response.tokens[static_cast<std::size_t>(t)].token);
  return ctx;
}

/// Samples one response autoregressively until <eos> or `budget` tokens.
inline ResponseTrace sample_response(const PolicyParams& params, std::span<const TokenId> prompt, int budget, Rng& rng,
                                     int index = 0) {
  ResponseTrace out;
  out.index = index;
  std::vector<TokenId> ctx(prompt.begin(), prompt.end());
  const TokenId eos = params.vocab().eos();
  for (int j = 0; j < budget; ++j) {
    const auto phi = features(params, ctx, j);
    const auto dist = distribution(params, phi);
    const TokenId t = sample_from(dist, rng);
    out.tokens.push_back({t, j, log_prob_from_logits(dist.logits, t), entropy_bits(dist)});
    ctx.push_back(t);
    if (t == eos) return out;
  }
  out.truncated = true;
  return out;
}

/// Samples N responses under a frozen snapshot. Response i uses the stream
/// derive_seed(seed, {i}), so the result is independent of `threads`.
inline GroupBatch sample_group(const PolicyParams& snapshot, const TaskInstance& instance, int n, int budget,
                               std::uint64_t seed, int threads = 1) {
  if (n < 2) throw std::invalid_argument("sample_group: N must be >= 2");
  if (budget < 1) throw std::invalid_argument("sample_group: budget must be >= 1");
  GroupBatch batch;
  batch.instance = instance;
  batch.responses.resize(static_cast<std::size_t>(n));
  parallel_for(batch.responses.size(), threads, [&](std::size_t i) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    batch.responses[i] = sample_response(snapshot, instance.prompt, budget, rng, static_cast<int>(i));
  });
  return batch;
}

inline constexpr double kAdvantageEpsilon = 1e-8;

/// (R_i - mean) / (population std + eps); all zeros for a zero-variance group.
inline std::vector<double> group_normalize(std::span<const double> rewards) {
  const auto n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> adv(rewards.size(), 0.0);
  if (sd == 0.0) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / (sd + kAdvantageEpsilon);
  return adv;
}

/// Fills r_acc, r_fmt, group accuracy and base advantages.
inline void score_group(GroupBatch& batch) {
  std::vector<double> rewards;
  int correct = 0;
  for (auto& r : batch.responses) {
    const auto ids = r.token_ids();
    r.r_acc = check_accuracy(batch.instance, ids);
    r.r_fmt = check_format(ids);
    correct += r.r_acc;
    rewards.push_back(static_cast<double>(r.reward()));
  }
  batch.accuracy = static_cast<double>(correct) / static_cast<double>(batch.responses.size());
  batch.advantages = group_normalize(rewards);
  batch.scored = true;
}

/// Recomputes A_i from already-filled rewards (used when replaying dumps).
inline void rescore_from_rewards(GroupBatch& batch) {
  std::vector<double> rewards;
  int correct = 0;
  for (const auto& r : batch.responses) {
    correct += r.r_acc;
    rewards.push_back(static_cast<double>(r.reward()));
  }
  batch.accuracy = static_cast<double>(correct) / static_cast<double>(batch.responses.size());
  batch.advantages = group_normalize(rewards);
  batch.scored = true;
}

}  // namespace ces
