// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * Conditional entropy shaping of token-level advantages.
 *
 * Per response i in a scored group with accuracy a:
 *
 *   b_i  = a            if r_acc(y_i) = 1
 *        = 1 - a        otherwise
 *   k_i  = floor(|y_i| * tau * b_i)
 *   S_H  = the k_i positions with the largest rollout entropy
 *          (ties: earlier position first)
 *   A'_j = A_i - beta1 * H_j   if j in S_H and the response is correct
 *        = A_i + beta2 * H_j   if j in S_H and the response is incorrect
 *        = A_i                 otherwise
 *
 * S_H is ranked with the entropies recorded at rollout time. The value H_j in
 * A'_j is the live entropy under the parameters being optimized; the plan
 * stores the coefficient multiplying it so the objective can differentiate
 * through it when gradient flow is enabled.
 */

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ces/rollout.hpp"

namespace ces {

enum class ShapingMode {
  full_ces,     ///< dynamic b, live entropy gradient
  remove_acc,   ///< b fixed to 1
  detach,       ///< full_ces values, entropy term treated as a constant
  off,          ///< plain group-relative advantages
  entropy_adv,  ///< +beta2 * H on every token, detached
};

inline const char* to_string(ShapingMode m) {
  switch (m) {
    case ShapingMode::full_ces: return "full-ces";
    case ShapingMode::remove_acc: return "remove-acc";
    case ShapingMode::detach: return "detach";
    case ShapingMode::off: return "off";
    case ShapingMode::entropy_adv: return "entropy-adv";
  }
  return "?";
}

inline ShapingMode shaping_mode_from_string(const std::string& s) {
  if (s == "full-ces") return ShapingMode::full_ces;
  if (s == "remove-acc") return ShapingMode::remove_acc;
  if (s == "detach") return ShapingMode::detach;
  if (s == "off") return ShapingMode::off;
  if (s == "entropy-adv") return ShapingMode::entropy_adv;
  throw std::invalid_argument("unknown shaping mode '" + s +
                              "' (expected full-ces|remove-acc|detach|off|entropy-adv)");
}

inline constexpr ShapingMode kAllShapingModes[] = {ShapingMode::full_ces, ShapingMode::remove_acc,
                                                   ShapingMode::detach, ShapingMode::off, ShapingMode::entropy_adv};

/// Live entropy contributes to the gradient only in these modes.
constexpr bool has_gradient_flow(ShapingMode m) noexcept {
  return m == ShapingMode::full_ces || m == ShapingMode::remove_acc;
}

struct ShapingConfig {
  double tau = 0.01;
  double beta1 = 0.4;
  double beta2 = 0.4;
  ShapingMode mode = ShapingMode::full_ces;

  void validate() const {
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("shaping: tau must be in (0, 1]");
    if (!(beta1 >= 0.0) || !(beta2 >= 0.0)) throw std::invalid_argument("shaping: betas must be >= 0");
  }
  friend bool operator==(const ShapingConfig&, const ShapingConfig&) = default;
};

inline double dynamic_multiplier(int r_acc, double group_accuracy) {
  if (!(group_accuracy >= 0.0 && group_accuracy <= 1.0))
    throw std::invalid_argument("dynamic_multiplier: group accuracy must be in [0, 1]");
  return r_acc == 1 ? group_accuracy : 1.0 - group_accuracy;
}

/// Absorbs representation error in tau (e.g. 0.29 * 100 = 28.999999999999996).
inline constexpr double kFloorGuard = 1e-9;

inline int topk_count(std::size_t length, double tau, double b) {
  const double raw = static_cast<double>(length) * tau * b;
  const auto k = static_cast<long long>(std::floor(raw + kFloorGuard));
  return static_cast<int>(std::clamp<long long>(k, 0, static_cast<long long>(length)));
}

struct Selection {
  int k = 0;
  std::vector<int> indices;  ///< ascending positions
};

inline Selection select_topk(std::span<const double> entropies, double tau, double b) {
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("select_topk: tau must be in (0, 1]");
  if (!(b >= 0.0 && b <= 1.0)) throw std::invalid_argument("select_topk: b must be in [0, 1]");
  Selection sel;
  sel.k = topk_count(entropies.size(), tau, b);
  if (sel.k == 0) return sel;
  std::vector<int> order(entropies.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
    return entropies[static_cast<std::size_t>(x)] > entropies[static_cast<std::size_t>(y)];
  });
  sel.indices.assign(order.begin(), order.begin() + sel.k);
  std::sort(sel.indices.begin(), sel.indices.end());
  return sel;
}

struct ResponsePlan {
  int r_acc = 0;
  double multiplier = 0.0;  ///< b_i
  int k = 0;
  std::vector<int> selected;  ///< S_H, ascending
  double base_advantage = 0.0;
  std::vector<double> shaped;        ///< A'_j evaluated with the live entropy given at planning time
  std::vector<double> entropy_coef;  ///< A'_j = base + entropy_coef_j * H_j
  std::vector<int> sign;             ///< -1 penalized, +1 rewarded, 0 untouched
  std::vector<bool> is_selected;
};

struct ShapingPlan {
  ShapingMode mode = ShapingMode::full_ces;
  bool gradient_flow = false;
  std::vector<ResponsePlan> responses;

  [[nodiscard]] std::size_t token_count() const noexcept {
    std::size_t n = 0;
    for (const auto& r : responses) n += r.shaped.size();
    return n;
  }
};

/// `live_entropy[i][j]` is H(t_j | y_{i,<j}) in bits under the current
/// parameters. Selection always ranks by the rollout-time record.
inline ShapingPlan shape_advantages(const GroupBatch& batch, const ShapingConfig& cfg,
                                    const std::vector<std::vector<double>>& live_entropy) {
  cfg.validate();
  if (!batch.scored) throw std::invalid_argument("shape_advantages: batch is not scored");
  if (live_entropy.size() != batch.responses.size())
    throw std::invalid_argument("shape_advantages: live entropy has " + std::to_string(live_entropy.size()) +
                                " responses, batch has " + std::to_string(batch.responses.size()));
  ShapingPlan plan;
  plan.mode = cfg.mode;
  plan.gradient_flow = has_gradient_flow(cfg.mode);
  plan.responses.resize(batch.responses.size());
  for (std::size_t i = 0; i < batch.responses.size(); ++i) {
    const auto& resp = batch.responses[i];
    const auto& live = live_entropy[i];
    const std::size_t len = resp.length();
    if (live.size() != len)
      throw std::invalid_argument("shape_advantages: response " + std::to_string(i) + " has " + std::to_string(len) +
                                  " tokens but " + std::to_string(live.size()) + " live entropies");
    auto& rp = plan.responses[i];
    rp.r_acc = resp.r_acc;
    rp.base_advantage = batch.advantages[i];
    rp.shaped.assign(len, rp.base_advantage);
    rp.entropy_coef.assign(len, 0.0);
    rp.sign.assign(len, 0);
    rp.is_selected.assign(len, false);

    switch (cfg.mode) {
      case ShapingMode::off:
        rp.multiplier = dynamic_multiplier(resp.r_acc, batch.accuracy);
        break;
      case ShapingMode::entropy_adv:
        rp.multiplier = 1.0;
        rp.k = static_cast<int>(len);
        for (std::size_t j = 0; j < len; ++j) {
          rp.selected.push_back(static_cast<int>(j));
          rp.is_selected[j] = true;
          rp.sign[j] = +1;
          rp.entropy_coef[j] = cfg.beta2;
          rp.shaped[j] = rp.base_advantage + cfg.beta2 * live[j];
        }
        break;
      case ShapingMode::full_ces:
      case ShapingMode::remove_acc:
      case ShapingMode::detach: {
        rp.multiplier =
            cfg.mode == ShapingMode::remove_acc ? 1.0 : dynamic_multiplier(resp.r_acc, batch.accuracy);
        const auto ranking = resp.entropies();
        auto sel = select_topk(ranking, cfg.tau, rp.multiplier);
        rp.k = sel.k;
        rp.selected = std::move(sel.indices);
        const double coef = resp.r_acc == 1 ? -cfg.beta1 : cfg.beta2;
        for (int j : rp.selected) {
          const auto u = static_cast<std::size_t>(j);
          rp.is_selected[u] = true;
          rp.sign[u] = resp.r_acc == 1 ? -1 : +1;
          rp.entropy_coef[u] = coef;
          rp.shaped[u] = rp.base_advantage + coef * live[u];
        }
        break;
      }
    }
  }
  return plan;
}

/// Plan using the rollout-time entropies as the live values (valid at the
/// snapshot, where both coincide).
inline ShapingPlan shape_advantages(const GroupBatch& batch, const ShapingConfig& cfg) {
  std::vector<std::vector<double>> live;
  live.reserve(batch.responses.size());
  for (const auto& r : batch.responses) live.push_back(r.entropies());
  return shape_advantages(batch, cfg, live);
}

}  // namespace ces
