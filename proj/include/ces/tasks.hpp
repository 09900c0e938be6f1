// SPDX-License-Identifier: Apache-2.0
#pragma once

// Modular-sum prompts "d1 + d2 + ... + dk ?" with a single-digit answer.
// Responses are expected to look like <think> ... </think> D <eos>; the
// accuracy and format rewards are checked independently of each other.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ces/random.hpp"
#include "ces/vocabulary.hpp"

namespace ces {

namespace tok {
inline constexpr TokenId kPlus = 10;
inline constexpr TokenId kQuery = 11;
inline constexpr TokenId kSep = 12;
inline constexpr TokenId kThinkOpen = 13;
inline constexpr TokenId kThinkClose = 14;
inline constexpr TokenId kEos = 15;
inline constexpr TokenId kCheck = 16;
inline constexpr TokenId kFirstFiller = 17;

constexpr bool is_digit(TokenId t) noexcept { return t >= 0 && t <= 9; }
}  // namespace tok

inline constexpr int kDefaultFillerCount = 5;
inline constexpr int kModulus = 10;

/// Digits 0-9, "+", "?", the four control tokens, "check" and `fillers`
/// filler words.
inline Vocabulary arithmetic_vocabulary(int fillers = kDefaultFillerCount) {
  static const char* kFillerNames[] = {"wait", "hmm", "so", "well", "ok", "again", "right", "alright"};
  std::vector<std::string> s;
  for (int d = 0; d < 10; ++d) s.push_back(std::to_string(d));
  s.insert(s.end(), {"+", "?", "<sep>", "<think>", "</think>", "<eos>", "check"});
  for (int i = 0; i < fillers; ++i)
    s.push_back(i < 8 ? std::string(kFillerNames[i]) : "filler" + std::to_string(i));
  return Vocabulary(std::move(s), {tok::kSep, tok::kThinkOpen, tok::kThinkClose, tok::kEos});
}

enum class Tier { easy, hard, mixed };

inline const char* to_string(Tier t) {
  switch (t) {
    case Tier::easy: return "easy";
    case Tier::hard: return "hard";
    case Tier::mixed: return "mixed";
  }
  return "?";
}

inline Tier tier_from_string(const std::string& s) {
  if (s == "easy") return Tier::easy;
  if (s == "hard") return Tier::hard;
  if (s == "mixed") return Tier::mixed;
  throw std::invalid_argument("unknown tier '" + s + "'");
}

inline constexpr int kEasyMinOperands = 2;
inline constexpr int kEasyMaxOperands = 3;
inline constexpr int kHardMinOperands = 4;
inline constexpr int kHardMaxOperands = 6;

struct TaskInstance {
  std::int64_t id = 0;
  std::vector<int> operands;
  int truth = 0;
  Tier tier = Tier::easy;
  std::vector<TokenId> prompt;

  friend bool operator==(const TaskInstance&, const TaskInstance&) = default;
};

inline std::vector<TokenId> encode_prompt(std::span<const int> operands) {
  std::vector<TokenId> p;
  for (std::size_t i = 0; i < operands.size(); ++i) {
    if (i > 0) p.push_back(tok::kPlus);
    p.push_back(operands[i]);
  }
  p.push_back(tok::kQuery);
  return p;
}

inline TaskInstance make_instance(std::vector<int> operands, std::int64_t id = 0) {
  if (operands.size() < static_cast<std::size_t>(kEasyMinOperands) ||
      operands.size() > static_cast<std::size_t>(kHardMaxOperands))
    throw std::invalid_argument("task: operand count must be in [2, 6]");
  for (int d : operands)
    if (d < 0 || d > 9) throw std::invalid_argument("task: operands must be digits");
  TaskInstance t;
  t.id = id;
  t.truth = std::accumulate(operands.begin(), operands.end(), 0) % kModulus;
  t.tier = static_cast<int>(operands.size()) <= kEasyMaxOperands ? Tier::easy : Tier::hard;
  t.prompt = encode_prompt(operands);
  t.operands = std::move(operands);
  return t;
}

/// `easy_fraction` only matters for Tier::mixed.
inline TaskInstance generate_instance(Rng& rng, Tier tier, std::int64_t id = 0, double easy_fraction = 0.5) {
  if (tier == Tier::mixed) tier = rng.uniform() < easy_fraction ? Tier::easy : Tier::hard;
  const int k = tier == Tier::easy ? rng.uniform_int(kEasyMinOperands, kEasyMaxOperands)
                                   : rng.uniform_int(kHardMinOperands, kHardMaxOperands);
  std::vector<int> ops(static_cast<std::size_t>(k));
  for (auto& d : ops) d = rng.uniform_int(0, 9);
  return make_instance(std::move(ops), id);
}

/// Frozen question set: instance i is drawn from its own child stream.
inline std::vector<TaskInstance> generate_question_set(std::uint64_t seed, int count, Tier tier,
                                                       double easy_fraction = 0.5) {
  std::vector<TaskInstance> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, {0x9e57ULL, static_cast<std::uint64_t>(i)}));
    out.push_back(generate_instance(rng, tier, i, easy_fraction));
  }
  return out;
}

/// 1 iff the response is exactly <think> X* </think> D <eos>, where X is any
/// token other than </think> and <eos>.
inline int check_format(std::span<const TokenId> response) {
  const std::size_t n = response.size();
  if (n < 4 || response[0] != tok::kThinkOpen) return 0;
  std::size_t i = 1;
  while (i < n && response[i] != tok::kThinkClose) {
    if (response[i] == tok::kEos) return 0;
    ++i;
  }
  // i at </think>; need exactly digit, eos, end
  if (i + 3 != n) return 0;
  return tok::is_digit(response[i + 1]) && response[i + 2] == tok::kEos ? 1 : 0;
}

/// First digit after the first </think>; without </think>, the last digit in
/// the sequence. nullopt when no digit qualifies.
inline std::optional<int> extract_answer(std::span<const TokenId> response) {
  const auto close = std::find(response.begin(), response.end(), tok::kThinkClose);
  if (close != response.end()) {
    const auto d = std::find_if(close + 1, response.end(), tok::is_digit);
    if (d == response.end()) return std::nullopt;
    return *d;
  }
  const auto d = std::find_if(response.rbegin(), response.rend(), tok::is_digit);
  if (d == response.rend()) return std::nullopt;
  return *d;
}

inline int check_accuracy(const TaskInstance& instance, std::span<const TokenId> response) {
  const auto ans = extract_answer(response);
  return ans && *ans == instance.truth ? 1 : 0;
}

/// Length of the shortest well-formed response: <think> </think> D <eos>.
inline constexpr int kMinimalFormatLength = 4;

}  // namespace ces
