// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "ces/ces.hpp"

namespace testing_support {

using namespace ces;

/// Group with the given per-response entropies and rewards; tokens are all 0
/// and old log-probs 0. Scored from the stored rewards.
inline GroupBatch synthetic_group(const std::vector<std::vector<double>>& entropies, const std::vector<int>& r_acc,
                                  const std::vector<int>& r_fmt) {
  GroupBatch b;
  b.instance = make_instance({1, 2});
  for (std::size_t i = 0; i < entropies.size(); ++i) {
    ResponseTrace r;
    r.index = static_cast<int>(i);
    for (std::size_t j = 0; j < entropies[i].size(); ++j)
      r.tokens.push_back({0, static_cast<int>(j), 0.0, entropies[i][j]});
    r.r_acc = r_acc[i];
    r.r_fmt = r_fmt[i];
    b.responses.push_back(std::move(r));
  }
  rescore_from_rewards(b);
  return b;
}

/// Random group: N in [2, 8], lengths in [1, max_len], entropies either
/// continuous or drawn from a few levels (to force ties), random rewards.
inline GroupBatch random_group(Rng& rng, int max_len = 120) {
  const int n = rng.uniform_int(2, 8);
  const bool coarse = rng.uniform() < 0.5;
  std::vector<std::vector<double>> ent(static_cast<std::size_t>(n));
  std::vector<int> acc(static_cast<std::size_t>(n)), fmt(static_cast<std::size_t>(n));
  const double p_acc = rng.uniform();
  for (int i = 0; i < n; ++i) {
    const int len = rng.uniform_int(1, max_len);
    for (int j = 0; j < len; ++j)
      ent[static_cast<std::size_t>(i)].push_back(coarse ? 0.5 * rng.uniform_int(0, 6) : 4.0 * rng.uniform());
    acc[static_cast<std::size_t>(i)] = rng.uniform() < p_acc ? 1 : 0;
    fmt[static_cast<std::size_t>(i)] = rng.uniform() < 0.5 ? 1 : 0;
  }
  return synthetic_group(ent, acc, fmt);
}

/// Small policy within the gradient-check budget: V = 12, window 3,
/// 480 linear or 436 mlp parameters.
inline PolicyParams small_policy(Architecture arch, Rng& rng, double scale = 0.7) {
  const auto vocab = Vocabulary::generic(12);
  const FeatureConfig fc{3, 4, 16};
  PolicyParams p = arch == Architecture::linear ? PolicyParams::linear(vocab, fc)
                                                : PolicyParams::mlp(vocab, fc, 8, rng, scale);
  if (arch == Architecture::linear)
    for (auto& w : p.weights) w = scale * rng.normal();
  return p;
}

/// Groups sampled from `params` on random prompts with random reward
/// patterns, then scored from those rewards.
inline std::vector<GroupBatch> sampled_groups(const PolicyParams& params, Rng& rng, int groups, int budget) {
  std::vector<GroupBatch> out;
  for (int g = 0; g < groups; ++g) {
    auto inst = generate_instance(rng, Tier::easy, g);
    // keep prompt ids inside a 12-token vocabulary
    for (auto& t : inst.prompt)
      if (t >= params.vocab_size()) t = params.vocab_size() - 1;
    auto b = sample_group(params, inst, rng.uniform_int(2, 4), budget, rng.next_u64());
    for (auto& r : b.responses) {
      r.r_acc = rng.uniform() < 0.5 ? 1 : 0;
      r.r_fmt = rng.uniform() < 0.5 ? 1 : 0;
    }
    rescore_from_rewards(b);
    out.push_back(std::move(b));
  }
  return out;
}

inline std::vector<ShapingPlan> plans_for(const std::vector<GroupBatch>& batches, const ShapingConfig& cfg) {
  std::vector<ShapingPlan> plans;
  for (const auto& b : batches) plans.push_back(shape_advantages(b, cfg));
  return plans;
}

}  // namespace testing_support
