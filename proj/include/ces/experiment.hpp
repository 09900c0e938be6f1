// SPDX-License-Identifier: Apache-2.0
#pragma once

// Glue for whole runs: building the starting policy from a RunConfig, the
// frozen question set, and the tau x beta sweep.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ces/config.hpp"
#include "ces/eval.hpp"
#include "ces/policy.hpp"
#include "ces/trainer.hpp"

namespace ces {

/// Freshly initialized (not pretrained) policy over the arithmetic vocabulary.
inline PolicyParams make_policy(const PolicySettings& s) {
  const auto vocab = arithmetic_vocabulary(s.fillers);
  if (s.architecture == Architecture::linear) return PolicyParams::linear(vocab, s.features, s.temperature);
  Rng rng(s.init_seed);
  return PolicyParams::mlp(vocab, s.features, s.hidden, rng, s.init_scale, s.temperature);
}

/// make_policy followed by pretrain_verbose when enabled.
inline PolicyParams initial_policy(const RunConfig& c) {
  auto p = make_policy(c.policy);
  if (c.pretrain.enabled) p = pretrain_verbose(std::move(p), c.pretrain.config);
  return p;
}

inline std::vector<TaskInstance> question_set(const EvalSettings& e) {
  return generate_question_set(e.question_seed, e.questions, e.tier);
}

inline const std::vector<double> kDefaultTauGrid{0.005, 0.01, 0.05};
inline const std::vector<double> kDefaultBetaGrid{0.4, 1.0, 2.0};

struct SweepCell {
  double tau = 0.0;
  double beta = 0.0;  ///< used for both beta1 and beta2
  bool ok = false;
  std::string error;
  double accuracy = 0.0;
  double mean_length = 0.0;
};

struct SweepResult {
  std::vector<SweepCell> cells;  ///< tau-major order
  [[nodiscard]] int succeeded() const {
    int n = 0;
    for (const auto& c : cells) n += c.ok ? 1 : 0;
    return n;
  }
};

/// One training run per (tau, beta) from the same starting policy and seed,
/// each evaluated on the same question set. A failing cell is recorded and
/// the grid continues.
inline SweepResult sweep(const RunConfig& base, const PolicyParams& start, std::span<const TaskInstance> questions,
                         std::span<const double> taus, std::span<const double> betas) {
  if (taus.empty() || betas.empty()) throw std::invalid_argument("sweep: grids must be non-empty");
  SweepResult out;
  for (double tau : taus) {
    for (double beta : betas) {
      SweepCell cell{tau, beta, false, {}, 0.0, 0.0};
      try {
        auto tc = base.train;
        tc.shaping.tau = tau;
        tc.shaping.beta1 = beta;
        tc.shaping.beta2 = beta;
        const auto trained = train_loop(tc, start);
        const auto rep = evaluate(trained.params, questions, base.eval.config);
        cell.ok = true;
        cell.accuracy = rep.overall.accuracy;
        cell.mean_length = rep.overall.mean_length;
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      out.cells.push_back(cell);
    }
  }
  return out;
}

}  // namespace ces
