// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "ces/objective.hpp"
#include "oracles/finite_diff.hpp"
#include "support.hpp"

using namespace ces;
using testing_support::plans_for;
using testing_support::sampled_groups;
using testing_support::small_policy;

namespace {

/// One response of one token whose stored old log-prob is offset by
/// -ln(ratio) from the live value, plus a hand-written plan.
struct OneToken {
  std::vector<GroupBatch> batches;
  std::vector<ShapingPlan> plans;
};

OneToken one_token(const PolicyParams& p, double ratio, double adv) {
  OneToken o;
  GroupBatch b;
  b.instance = make_instance({1, 2});
  for (auto& t : b.instance.prompt) t = std::min(t, p.vocab_size() - 1);
  ResponseTrace r;
  const double lp = log_prob(p, b.instance.prompt, 0, 5);
  r.tokens.push_back({5, 0, lp - std::log(ratio), entropy_bits(p, b.instance.prompt, 0)});
  b.responses.push_back(r);
  b.advantages = {adv};
  b.scored = true;
  ShapingPlan plan;
  ResponsePlan rp;
  rp.base_advantage = adv;
  rp.shaped = {adv};
  rp.entropy_coef = {0.0};
  rp.sign = {0};
  rp.is_selected = {false};
  plan.responses.push_back(rp);
  o.batches.push_back(b);
  o.plans.push_back(plan);
  return o;
}

/// Parameters nudged away from the snapshot so ratios differ from 1 and
/// some land outside the clip range.
PolicyParams perturbed(const PolicyParams& p, Rng& rng, double scale) {
  auto q = p;
  for (auto& w : q.weights) w += scale * rng.normal();
  return q;
}

}  // namespace

TEST(Ratio, IdentityAndDefinition) {
  Rng rng(1);
  const auto p = small_policy(Architecture::linear, rng);
  const std::vector<TokenId> ctx{1, 2, 3};
  EXPECT_EQ(ratio(p, p, ctx, 4, 7), 1.0);
  EXPECT_NEAR(ratio_from_log_probs(-1.0 + std::log(2.0), -1.0), 2.0, 1e-15);
  const auto q = perturbed(p, rng, 3.0);
  const double r = ratio(q, p, ctx, 4, 7);
  EXPECT_TRUE(std::isfinite(r));
  EXPECT_GT(r, 0.0);
}

TEST(Objective, DegenerateSingleToken) {
  Rng rng(2);
  const auto p = small_policy(Architecture::linear, rng);
  const auto o = one_token(p, 1.0, 0.5);
  EXPECT_EQ(objective_value(o.batches, o.plans, p, ClipConfig{}), 0.5);
}

TEST(Objective, ClipHighBranch) {
  Rng rng(3);
  const auto p = small_policy(Architecture::linear, rng);
  const auto o = one_token(p, 1.5, 1.0);
  EXPECT_NEAR(objective_value(o.batches, o.plans, p, ClipConfig{0.2, 0.28, 1}), 1.28, 1e-12);
  // negative advantage takes the unclipped (smaller) product
  const auto n = one_token(p, 1.5, -1.0);
  EXPECT_NEAR(objective_value(n.batches, n.plans, p, ClipConfig{0.2, 0.28, 1}), -1.5, 1e-12);
  const auto lo = one_token(p, 0.5, -1.0);
  EXPECT_NEAR(objective_value(lo.batches, lo.plans, p, ClipConfig{0.2, 0.28, 1}), -0.8, 1e-12);
}

TEST(Objective, ZeroAdvantagesGiveZero) {
  Rng rng(4);
  const auto p = small_policy(Architecture::mlp, rng);
  auto batches = sampled_groups(p, rng, 3, 10);
  for (auto& b : batches) {
    for (auto& r : b.responses) r.r_acc = r.r_fmt = 1;
    rescore_from_rewards(b);
  }
  const auto plans = plans_for(batches, ShapingConfig{0.5, 0.4, 0.4, ShapingMode::off});
  const auto res = objective_value_and_gradient(batches, plans, p, ClipConfig{});
  EXPECT_EQ(res.value, 0.0);
  for (double g : res.gradient) EXPECT_EQ(g, 0.0);
}

TEST(Objective, EmptyBatchFails) {
  Rng rng(5);
  const auto p = small_policy(Architecture::linear, rng);
  std::vector<GroupBatch> none;
  std::vector<ShapingPlan> no_plans;
  EXPECT_THROW(objective_value(none, no_plans, p, ClipConfig{}), std::invalid_argument);
}

TEST(ObjectiveGradient, MatchesFiniteDifferencesInEveryMode) {
  Rng rng(6);
  for (auto mode : kAllShapingModes) {
    for (int trial = 0; trial < 6; ++trial) {
      const auto arch = trial % 2 ? Architecture::mlp : Architecture::linear;
      const auto snap = small_policy(arch, rng);
      const auto batches = sampled_groups(snap, rng, 2, 8);
      const auto plans = plans_for(batches, ShapingConfig{0.5, 0.4, 0.6, mode});
      const auto theta = perturbed(snap, rng, 0.15);
      const ClipConfig clip{};
      const auto g = objective_gradient(batches, plans, theta, clip);
      const auto fd = oracle::central_gradient(
          [&](const std::vector<double>& w) {
            auto q = theta;
            q.weights = w;
            return objective_value(batches, plans, q, clip);
          },
          theta.weights, 1e-5);
      EXPECT_LT(oracle::relative_error(g, fd), 1e-4) << to_string(mode) << " trial " << trial;
    }
  }
}

TEST(ObjectiveGradient, DetachEqualsFrozenEntropyConstruction) {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = small_policy(trial % 2 ? Architecture::mlp : Architecture::linear, rng);
    const auto batches = sampled_groups(p, rng, 3, 8);
    const auto plans = plans_for(batches, ShapingConfig{0.6, 0.4, 0.4, ShapingMode::detach});
    const auto g = objective_gradient(batches, plans, p, ClipConfig{});
    // at the snapshot r = 1, so the frozen construction is
    // (1/T) sum A'_j grad log p(o_j), with A'_j built from the current H
    Gradient ref(p.size(), 0.0);
    double tokens = 0.0;
    for (std::size_t gi = 0; gi < batches.size(); ++gi) {
      const auto& b = batches[gi];
      for (std::size_t i = 0; i < b.responses.size(); ++i) {
        const auto& r = b.responses[i];
        const auto& rp = plans[gi].responses[i];
        for (std::size_t j = 0; j < r.length(); ++j) {
          const auto ctx = context_of(b.instance.prompt, r, static_cast<int>(j));
          const double h = entropy_bits(p, ctx, static_cast<int>(j));
          const double a = rp.base_advantage + rp.entropy_coef[j] * h;
          const auto gl = grad_log_prob(p, ctx, static_cast<int>(j), r.tokens[j].token);
          for (std::size_t k = 0; k < ref.size(); ++k) ref[k] += a * gl[k];
          tokens += 1.0;
        }
      }
    }
    for (auto& x : ref) x /= tokens;
    for (std::size_t k = 0; k < ref.size(); ++k) EXPECT_NEAR(g[k], ref[k], 1e-10);
  }
}

TEST(Objective, InvariantToClipRangeAtSnapshot) {
  Rng rng(8);
  const auto p = small_policy(Architecture::mlp, rng);
  const auto batches = sampled_groups(p, rng, 3, 10);
  const auto plans = plans_for(batches, ShapingConfig{0.5, 0.4, 0.4, ShapingMode::full_ces});
  const double a = objective_value(batches, plans, p, ClipConfig{0.2, 0.28, 1});
  const double b = objective_value(batches, plans, p, ClipConfig{0.01, 0.9, 1});
  EXPECT_EQ(a, b);
}

TEST(Objective, LinearInAdvantagesAtSnapshot) {
  Rng rng(9);
  const auto p = small_policy(Architecture::linear, rng);
  const auto batches = sampled_groups(p, rng, 3, 10);
  auto plans = plans_for(batches, ShapingConfig{0.5, 0.4, 0.4, ShapingMode::detach});
  const double j1 = objective_value(batches, plans, p, ClipConfig{});
  for (auto& pl : plans)
    for (auto& rp : pl.responses)
      for (auto& a : rp.shaped) a *= -2.5;
  const double j2 = objective_value(batches, plans, p, ClipConfig{});
  EXPECT_NEAR(j2, -2.5 * j1, 1e-12);
}

TEST(Objective, ParallelEvaluationIsBitIdentical) {
  Rng rng(10);
  const auto p = small_policy(Architecture::mlp, rng);
  const auto batches = sampled_groups(p, rng, 5, 10);
  const auto plans = plans_for(batches, ShapingConfig{0.5, 0.4, 0.4, ShapingMode::full_ces});
  const auto a = objective_value_and_gradient(batches, plans, p, ClipConfig{}, 1);
  const auto b = objective_value_and_gradient(batches, plans, p, ClipConfig{}, 4);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.gradient, b.gradient);
}

TEST(Adam, ZeroGradientLeavesParams) {
  Rng rng(11);
  auto p = small_policy(Architecture::linear, rng);
  const auto before = p.weights;
  auto st = AdamState::zeros(p.size());
  adam_step(p, std::vector<double>(p.size(), 0.0), st, 0.1);
  EXPECT_EQ(p.weights, before);
  EXPECT_EQ(st.t, 1);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  Rng rng(12);
  auto p = small_policy(Architecture::linear, rng);
  const auto before = p.weights;
  std::vector<double> g(p.size());
  for (auto& x : g) x = rng.normal();
  auto st = AdamState::zeros(p.size());
  adam_step(p, g, st, 0.01);
  for (std::size_t k = 0; k < g.size(); ++k) {
    // m_hat = g, v_hat = g^2: step = lr * g / (|g| + eps)
    const double expect = 0.01 * g[k] / (std::abs(g[k]) + 1e-8);
    EXPECT_NEAR(p.weights[k] - before[k], expect, 1e-15);
    EXPECT_EQ(std::signbit(p.weights[k] - before[k]), std::signbit(g[k]));
  }
}

TEST(Adam, DeterministicAndRejectsNonFinite) {
  Rng rng(13);
  auto p = small_policy(Architecture::mlp, rng);
  std::vector<double> g(p.size());
  for (auto& x : g) x = rng.normal();
  auto p1 = p, p2 = p;
  auto s1 = AdamState::zeros(p.size()), s2 = AdamState::zeros(p.size());
  adam_step(p1, g, s1, 0.01);
  adam_step(p2, g, s2, 0.01);
  EXPECT_EQ(p1, p2);
  EXPECT_EQ(s1, s2);
  g[3] = std::nan("");
  EXPECT_THROW(adam_step(p1, g, s1, 0.01), std::runtime_error);
  EXPECT_THROW(adam_step(p1, std::vector<double>(2, 0.0), s1, 0.01), std::invalid_argument);
}
