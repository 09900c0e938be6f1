// SPDX-License-Identifier: Apache-2.0
#pragma once

// Token-level clipped surrogate evaluated with shaped advantages:
//
//   J = (1 / sum_i |o_i|) sum_i sum_t min(r A', clip(r, 1 - eps_low, 1 + eps_high) A')
//
// with r = exp(log pi(o_t) - log pi_old(o_t)). The normalizer counts every
// token of every group in the update batch. Gradient conventions: S_H, A_i and
// the chosen min branch are constants (ties take the unclipped branch); when
// the plan has gradient flow, A' = A_i + c H(theta) is differentiated through
// H, otherwise A' is a constant.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ces/parallel.hpp"
#include "ces/policy.hpp"
#include "ces/rollout.hpp"
#include "ces/shaping.hpp"

namespace ces {

struct ClipConfig {
  double eps_low = 0.2;
  double eps_high = 0.28;
  int epochs = 1;  ///< gradient steps per rollout batch

  void validate() const {
    if (!(eps_low > 0.0 && eps_low < 1.0) || !(eps_high > 0.0 && eps_high < 1.0))
      throw std::invalid_argument("clip: eps_low and eps_high must be in (0, 1)");
    if (epochs < 1) throw std::invalid_argument("clip: epochs must be >= 1");
  }
  friend bool operator==(const ClipConfig&, const ClipConfig&) = default;
};

/// Importance ratio from a stored rollout log-prob. exp(0) == 1 exactly when
/// params equal the snapshot that produced `old_log_prob`.
inline double ratio_from_log_probs(double log_prob, double old_log_prob) { return std::exp(log_prob - old_log_prob); }

inline double ratio(const PolicyParams& params, const PolicyParams& snapshot, std::span<const TokenId> context,
                    int position, TokenId token) {
  return ratio_from_log_probs(log_prob(params, context, position, token),
                              log_prob(snapshot, context, position, token));
}

struct ObjectiveResult {
  double value = 0.0;
  Gradient gradient;
};

namespace detail {

struct GroupTerms {
  double sum = 0.0;  ///< unnormalized sum of per-token terms
  Gradient grad;     ///< unnormalized
};

inline GroupTerms group_terms(const GroupBatch& batch, const ShapingPlan& plan, const PolicyParams& params,
                              const ClipConfig& clip, bool want_grad) {
  if (plan.responses.size() != batch.responses.size())
    throw std::invalid_argument("objective: plan/batch response count mismatch");
  GroupTerms out;
  if (want_grad) out.grad.assign(params.size(), 0.0);
  const double lo = 1.0 - clip.eps_low;
  const double hi = 1.0 + clip.eps_high;
  std::vector<double> dlogits(static_cast<std::size_t>(params.vocab_size()));
  for (std::size_t i = 0; i < batch.responses.size(); ++i) {
    const auto& resp = batch.responses[i];
    const auto& rp = plan.responses[i];
    if (rp.shaped.size() != resp.length()) throw std::invalid_argument("objective: plan/response length mismatch");
    std::vector<TokenId> ctx(batch.instance.prompt.begin(), batch.instance.prompt.end());
    for (std::size_t j = 0; j < resp.length(); ++j) {
      const auto& rec = resp.tokens[j];
      const auto phi = features(params, ctx, static_cast<int>(j));
      const auto fwd = forward(params, phi);
      const double lp = log_prob_from_logits(fwd.dist.logits, rec.token);
      const double r = ratio_from_log_probs(lp, rec.old_log_prob);
      const double coef = rp.entropy_coef[j];
      const bool live = plan.gradient_flow && coef != 0.0;
      const double adv = live ? rp.base_advantage + coef * entropy_bits(fwd.dist) : rp.shaped[j];
      const double rc = std::clamp(r, lo, hi);
      const double unclipped = r * adv;
      const double clipped = rc * adv;
      const bool take_unclipped = unclipped <= clipped;
      out.sum += take_unclipped ? unclipped : clipped;
      if (want_grad) {
        std::fill(dlogits.begin(), dlogits.end(), 0.0);
        if (take_unclipped) {
          const auto g = dlogp_dlogits(fwd.dist, rec.token);
          for (std::size_t v = 0; v < dlogits.size(); ++v) dlogits[v] += r * adv * g[v];
        }
        if (live) {
          const double w = (take_unclipped ? r : rc) * coef;
          const auto gh = dentropy_dlogits(fwd.dist);
          for (std::size_t v = 0; v < dlogits.size(); ++v) dlogits[v] += w * gh[v];
        }
        backprop_logits(params, phi, fwd, dlogits, 1.0, out.grad);
      }
      ctx.push_back(rec.token);
    }
  }
  return out;
}

inline ObjectiveResult evaluate(std::span<const GroupBatch> batches, std::span<const ShapingPlan> plans,
                                const PolicyParams& params, const ClipConfig& clip, bool want_grad, int threads) {
  clip.validate();
  if (batches.size() != plans.size()) throw std::invalid_argument("objective: batches and plans differ in count");
  std::size_t tokens = 0;
  for (const auto& b : batches) tokens += b.token_count();
  if (tokens == 0) throw std::invalid_argument("objective: empty batch");
  std::vector<GroupTerms> parts(batches.size());
  parallel_for(batches.size(), threads,
               [&](std::size_t g) { parts[g] = group_terms(batches[g], plans[g], params, clip, want_grad); });
  // reduce in group order so results do not depend on scheduling
  const double inv = 1.0 / static_cast<double>(tokens);
  ObjectiveResult res;
  double sum = 0.0;
  for (const auto& p : parts) sum += p.sum;
  res.value = sum * inv;
  if (want_grad) {
    res.gradient.assign(params.size(), 0.0);
    for (const auto& p : parts)
      for (std::size_t k = 0; k < p.grad.size(); ++k) res.gradient[k] += p.grad[k];
    for (auto& g : res.gradient) g *= inv;
  }
  return res;
}

}  // namespace detail

inline double objective_value(std::span<const GroupBatch> batches, std::span<const ShapingPlan> plans,
                              const PolicyParams& params, const ClipConfig& clip, int threads = 1) {
  return detail::evaluate(batches, plans, params, clip, false, threads).value;
}

inline Gradient objective_gradient(std::span<const GroupBatch> batches, std::span<const ShapingPlan> plans,
                                   const PolicyParams& params, const ClipConfig& clip, int threads = 1) {
  return detail::evaluate(batches, plans, params, clip, true, threads).gradient;
}

inline ObjectiveResult objective_value_and_gradient(std::span<const GroupBatch> batches,
                                                    std::span<const ShapingPlan> plans, const PolicyParams& params,
                                                    const ClipConfig& clip, int threads = 1) {
  return detail::evaluate(batches, plans, params, clip, true, threads);
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros(std::size_t n) {
    AdamState s;
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
    return s;
  }
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One Adam ascent step: params += lr * m_hat / (sqrt(v_hat) + eps).
inline void adam_step(PolicyParams& params, std::span<const double> gradient, AdamState& state, double lr) {
  if (gradient.size() != params.size()) throw std::invalid_argument("adam: gradient size mismatch");
  if (state.m.size() != params.size()) {
    if (state.t != 0 || !state.m.empty()) throw std::invalid_argument("adam: optimizer state size mismatch");
    state = AdamState::zeros(params.size());
  }
  for (std::size_t k = 0; k < gradient.size(); ++k)
    if (!std::isfinite(gradient[k])) throw std::runtime_error("adam: non-finite gradient at index " + std::to_string(k));
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < gradient.size(); ++k) {
    const double g = gradient[k];
    state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g;
    state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g;
    const double mh = state.m[k] / c1;
    const double vh = state.v[k] / c2;
    params.weights[k] += lr * mh / (std::sqrt(vh) + state.eps);
  }
}

}  // namespace ces
