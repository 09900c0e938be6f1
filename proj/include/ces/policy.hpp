// SPDX-License-Identifier: Apache-2.0
#pragma once

/**
 * Tiny autoregressive policy with exact gradients.
 *
 * The policy reads a fixed feature vector of the context: one-hot encodings of
 * the last `window` tokens (oldest first, padded with PROMPT_SEP) followed by a
 * one-hot position bucket. Two heads are supported over the same features:
 *
 *   linear: logits = W phi / T                      (reference architecture)
 *   mlp:    logits = (W2 tanh(W1 phi + b1) + b2) / T
 *
 * All parameters live in one flat vector so gradients, optimizer state and
 * finite-difference probes share a single layout. Every gradient routine takes
 * d(scalar)/d(logits) and backpropagates it, so log-prob and entropy gradients
 * use the same code path.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ces/random.hpp"
#include "ces/vocabulary.hpp"

namespace ces {

using Gradient = std::vector<double>;

struct FeatureConfig {
  int window = 3;       ///< m: number of trailing context tokens encoded
  int buckets = 4;      ///< number of coarse position buckets
  int max_length = 64;  ///< positions are bucketed over [0, max_length)

  [[nodiscard]] std::size_t dim(int vocab_size) const {
    return static_cast<std::size_t>(window) * static_cast<std::size_t>(vocab_size) + static_cast<std::size_t>(buckets);
  }
  friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

/// Sparse binary feature vector: exactly window + 1 active entries.
struct ContextFeatures {
  std::vector<std::size_t> active;
  std::size_t dim = 0;

  [[nodiscard]] std::vector<double> dense() const {
    std::vector<double> out(dim, 0.0);
    for (auto i : active) out[i] = 1.0;
    return out;
  }
  friend bool operator==(const ContextFeatures&, const ContextFeatures&) = default;
};

/// `context` holds every token before `position` (prompt followed by the
/// generated prefix); `position` is the index within the generated response.
inline ContextFeatures features(std::span<const TokenId> context, int position, const Vocabulary& vocab,
                                const FeatureConfig& cfg) {
  if (position < 0) throw std::invalid_argument("features: negative position");
  const auto v = static_cast<std::size_t>(vocab.size());
  const auto m = static_cast<std::size_t>(cfg.window);
  ContextFeatures phi;
  phi.dim = cfg.dim(vocab.size());
  phi.active.reserve(m + 1);
  for (std::size_t slot = 0; slot < m; ++slot) {
    // slot m-1 is the most recent token
    const std::size_t back = m - slot;
    const TokenId tok = back <= context.size() ? context[context.size() - back] : vocab.prompt_sep();
    phi.active.push_back(slot * v + static_cast<std::size_t>(tok));
  }
  const int bucket = std::min(cfg.buckets - 1, position * cfg.buckets / std::max(1, cfg.max_length));
  phi.active.push_back(m * v + static_cast<std::size_t>(bucket));
  return phi;
}

struct TokenDistribution {
  std::vector<double> logits;
  std::vector<double> probs;
};

enum class Architecture { linear, mlp };

inline const char* to_string(Architecture a) { return a == Architecture::linear ? "linear" : "mlp"; }

class PolicyParams {
 public:
  static PolicyParams linear(Vocabulary vocab, FeatureConfig feat, double temperature = 1.0) {
    PolicyParams p(std::move(vocab), feat, Architecture::linear, 0, temperature);
    return p;
  }

  /// One-hidden-layer tanh head, weights drawn N(0, init_scale^2), biases zero.
  static PolicyParams mlp(Vocabulary vocab, FeatureConfig feat, int hidden, Rng& rng, double init_scale = 0.1,
                          double temperature = 1.0) {
    if (hidden <= 0) throw std::invalid_argument("mlp policy: hidden width must be positive");
    PolicyParams p(std::move(vocab), feat, Architecture::mlp, hidden, temperature);
    for (std::size_t i = 0; i < p.w1_size(); ++i) p.weights[i] = init_scale * rng.normal();
    const std::size_t w2 = p.w1_size() + static_cast<std::size_t>(hidden);
    for (std::size_t i = 0; i < p.w2_size(); ++i) p.weights[w2 + i] = init_scale * rng.normal();
    return p;
  }

  /// Restores a policy from raw parts (checkpoint loading). Validates sizes.
  static PolicyParams from_parts(Vocabulary vocab, FeatureConfig feat, Architecture arch, int hidden,
                                 double temperature, std::vector<double> weights) {
    PolicyParams p(std::move(vocab), feat, arch, hidden, temperature);
    if (weights.size() != p.weights.size())
      throw std::invalid_argument("policy: expected " + std::to_string(p.weights.size()) + " weights, got " +
                                  std::to_string(weights.size()));
    p.weights = std::move(weights);
    p.validate();
    return p;
  }

  [[nodiscard]] const Vocabulary& vocab() const noexcept { return vocab_; }
  [[nodiscard]] const FeatureConfig& feature_config() const noexcept { return feat_; }
  [[nodiscard]] Architecture architecture() const noexcept { return arch_; }
  [[nodiscard]] int hidden() const noexcept { return hidden_; }
  [[nodiscard]] int vocab_size() const noexcept { return vocab_.size(); }
  [[nodiscard]] std::size_t feature_dim() const noexcept { return feat_.dim(vocab_.size()); }
  [[nodiscard]] std::size_t size() const noexcept { return weights.size(); }
  [[nodiscard]] double temperature() const noexcept { return temperature_; }

  void set_temperature(double t) {
    if (!(t > 0.0) || !std::isfinite(t)) throw std::invalid_argument("policy: temperature must be positive");
    temperature_ = t;
  }

  [[nodiscard]] PolicyParams with_temperature(double t) const {
    PolicyParams copy = *this;
    copy.set_temperature(t);
    return copy;
  }

  void validate() const {
    if (!(temperature_ > 0.0) || !std::isfinite(temperature_))
      throw std::invalid_argument("policy: temperature must be positive");
    for (std::size_t i = 0; i < weights.size(); ++i)
      if (!std::isfinite(weights[i])) throw std::invalid_argument("policy: non-finite weight at index " + std::to_string(i));
  }

  // Layout (row-major):
  //   linear: W[V][F]
  //   mlp:    W1[H][F], b1[H], W2[V][H], b2[V]
  [[nodiscard]] std::size_t w1_size() const noexcept { return static_cast<std::size_t>(hidden_) * feature_dim(); }
  [[nodiscard]] std::size_t w2_size() const noexcept {
    return static_cast<std::size_t>(vocab_size()) * static_cast<std::size_t>(hidden_);
  }

  std::vector<double> weights;

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;

 private:
  PolicyParams(Vocabulary vocab, FeatureConfig feat, Architecture arch, int hidden, double temperature)
      : vocab_(std::move(vocab)), feat_(feat), arch_(arch), hidden_(hidden), temperature_(temperature) {
    if (feat_.window < 0 || feat_.buckets < 1 || feat_.max_length < 1)
      throw std::invalid_argument("policy: invalid feature configuration");
    const std::size_t v = static_cast<std::size_t>(vocab_size());
    const std::size_t n = arch == Architecture::linear
                              ? v * feature_dim()
                              : w1_size() + static_cast<std::size_t>(hidden) + w2_size() + v;
    weights.assign(n, 0.0);
    set_temperature(temperature);
  }

  Vocabulary vocab_;
  FeatureConfig feat_;
  Architecture arch_;
  int hidden_;
  double temperature_;
};

/// Forward pass with cached hidden activations for backpropagation.
struct Forward {
  std::vector<double> hidden;  ///< tanh activations (mlp only)
  TokenDistribution dist;
};

namespace detail {

inline void softmax_into(std::vector<double>& probs, const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  probs.resize(logits.size());
  double z = 0.0;
  for (std::size_t v = 0; v < logits.size(); ++v) {
    probs[v] = std::exp(logits[v] - mx);
    z += probs[v];
  }
  for (auto& p : probs) p /= z;
}

}  // namespace detail

inline Forward forward(const PolicyParams& params, const ContextFeatures& phi) {
  if (phi.dim != params.feature_dim())
    throw std::invalid_argument("policy: feature dim " + std::to_string(phi.dim) + " != " +
                                std::to_string(params.feature_dim()));
  const std::size_t v_count = static_cast<std::size_t>(params.vocab_size());
  const std::size_t f_dim = params.feature_dim();
  const double inv_t = 1.0 / params.temperature();
  const auto& w = params.weights;
  Forward out;
  auto& logits = out.dist.logits;
  logits.assign(v_count, 0.0);
  if (params.architecture() == Architecture::linear) {
    for (std::size_t v = 0; v < v_count; ++v) {
      double s = 0.0;
      for (auto f : phi.active) s += w[v * f_dim + f];
      logits[v] = s * inv_t;
    }
  } else {
    const auto h_count = static_cast<std::size_t>(params.hidden());
    const std::size_t b1 = params.w1_size();
    const std::size_t w2 = b1 + h_count;
    const std::size_t b2 = w2 + params.w2_size();
    out.hidden.resize(h_count);
    for (std::size_t h = 0; h < h_count; ++h) {
      double s = w[b1 + h];
      for (auto f : phi.active) s += w[h * f_dim + f];
      out.hidden[h] = std::tanh(s);
    }
    for (std::size_t v = 0; v < v_count; ++v) {
      double s = w[b2 + v];
      const double* row = &w[w2 + v * h_count];
      for (std::size_t h = 0; h < h_count; ++h) s += row[h] * out.hidden[h];
      logits[v] = s * inv_t;
    }
  }
  for (std::size_t v = 0; v < v_count; ++v) {
    if (!std::isfinite(logits[v]))
      throw std::runtime_error("policy: non-finite logit for token " + std::to_string(v) + " (" +
                               params.vocab().symbol(static_cast<TokenId>(v)) + ")");
  }
  detail::softmax_into(out.dist.probs, logits);
  return out;
}

inline TokenDistribution distribution(const PolicyParams& params, const ContextFeatures& phi) {
  return forward(params, phi).dist;
}

/// Shannon entropy in bits, 0 log 0 := 0.
inline double entropy_bits(const TokenDistribution& dist) {
  double h = 0.0;
  for (double p : dist.probs)
    if (p > 0.0) h -= p * std::log2(p);
  return std::max(0.0, h);
}

/// Natural-log probability of `token` computed via log-softmax.
inline double log_prob_from_logits(const std::vector<double>& logits, TokenId token) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return logits[static_cast<std::size_t>(token)] - mx - std::log(z);
}

/// d log p(token) / d logits = onehot(token) - p
inline std::vector<double> dlogp_dlogits(const TokenDistribution& dist, TokenId token) {
  std::vector<double> g(dist.probs.size());
  for (std::size_t v = 0; v < g.size(); ++v) g[v] = -dist.probs[v];
  g[static_cast<std::size_t>(token)] += 1.0;
  return g;
}

/// d H_bits / d logits = -(1/ln 2) p_v (ln p_v + H_nats)
inline std::vector<double> dentropy_dlogits(const TokenDistribution& dist) {
  double h_nats = 0.0;
  for (double p : dist.probs)
    if (p > 0.0) h_nats -= p * std::log(p);
  std::vector<double> g(dist.probs.size(), 0.0);
  for (std::size_t v = 0; v < g.size(); ++v) {
    const double p = dist.probs[v];
    if (p > 0.0) g[v] = -p * (std::log(p) + h_nats) / std::numbers::ln2;
  }
  return g;
}

/// Adds scale * d(s)/d(weights) into `grad`, given d(s)/d(logits).
inline void backprop_logits(const PolicyParams& params, const ContextFeatures& phi, const Forward& fwd,
                            std::span<const double> dlogits, double scale, std::span<double> grad) {
  const std::size_t v_count = static_cast<std::size_t>(params.vocab_size());
  const std::size_t f_dim = params.feature_dim();
  const double k = scale / params.temperature();
  if (params.architecture() == Architecture::linear) {
    for (std::size_t v = 0; v < v_count; ++v) {
      const double d = k * dlogits[v];
      if (d == 0.0) continue;
      for (auto f : phi.active) grad[v * f_dim + f] += d;
    }
    return;
  }
  const auto h_count = static_cast<std::size_t>(params.hidden());
  const std::size_t b1 = params.w1_size();
  const std::size_t w2 = b1 + h_count;
  const std::size_t b2 = w2 + params.w2_size();
  const auto& w = params.weights;
  std::vector<double> dh(h_count, 0.0);
  for (std::size_t v = 0; v < v_count; ++v) {
    const double d = k * dlogits[v];
    if (d == 0.0) continue;
    grad[b2 + v] += d;
    const double* row = &w[w2 + v * h_count];
    double* grow = &grad[w2 + v * h_count];
    for (std::size_t h = 0; h < h_count; ++h) {
      grow[h] += d * fwd.hidden[h];
      dh[h] += d * row[h];
    }
  }
  for (std::size_t h = 0; h < h_count; ++h) {
    const double dpre = dh[h] * (1.0 - fwd.hidden[h] * fwd.hidden[h]);
    if (dpre == 0.0) continue;
    grad[b1 + h] += dpre;
    for (auto f : phi.active) grad[h * f_dim + f] += dpre;
  }
}

// Context-level convenience API ------------------------------------------------

inline ContextFeatures features(const PolicyParams& params, std::span<const TokenId> context, int position) {
  return features(context, position, params.vocab(), params.feature_config());
}

inline double log_prob(const PolicyParams& params, std::span<const TokenId> context, int position, TokenId token) {
  if (!params.vocab().contains(token)) throw std::invalid_argument("log_prob: token out of vocabulary");
  return log_prob_from_logits(distribution(params, features(params, context, position)).logits, token);
}

inline Gradient grad_log_prob(const PolicyParams& params, std::span<const TokenId> context, int position,
                              TokenId token) {
  if (!params.vocab().contains(token)) throw std::invalid_argument("grad_log_prob: token out of vocabulary");
  const auto phi = features(params, context, position);
  const auto fwd = forward(params, phi);
  Gradient g(params.size(), 0.0);
  backprop_logits(params, phi, fwd, dlogp_dlogits(fwd.dist, token), 1.0, g);
  return g;
}

inline double entropy_bits(const PolicyParams& params, std::span<const TokenId> context, int position) {
  return entropy_bits(distribution(params, features(params, context, position)));
}

inline Gradient grad_entropy_bits(const PolicyParams& params, std::span<const TokenId> context, int position) {
  const auto phi = features(params, context, position);
  const auto fwd = forward(params, phi);
  Gradient g(params.size(), 0.0);
  backprop_logits(params, phi, fwd, dentropy_dlogits(fwd.dist), 1.0, g);
  return g;
}

/// Inverse-CDF draw from a distribution using one uniform from `rng`.
inline TokenId sample_from(const TokenDistribution& dist, Rng& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  TokenId last_positive = 0;
  for (std::size_t v = 0; v < dist.probs.size(); ++v) {
    if (dist.probs[v] <= 0.0) continue;
    cum += dist.probs[v];
    last_positive = static_cast<TokenId>(v);
    if (u < cum) return last_positive;
  }
  return last_positive;
}

inline TokenId sample_token(const PolicyParams& params, std::span<const TokenId> context, int position, Rng& rng) {
  return sample_from(distribution(params, features(params, context, position)), rng);
}

inline TokenId argmax_token(const TokenDistribution& dist) {
  return static_cast<TokenId>(std::max_element(dist.probs.begin(), dist.probs.end()) - dist.probs.begin());
}

}  // namespace ces
