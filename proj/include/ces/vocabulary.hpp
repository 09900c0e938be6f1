// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ces {

using TokenId = int;

/// Ordered token inventory with four reserved control ids.
class Vocabulary {
 public:
  struct Reserved {
    TokenId prompt_sep;
    TokenId think_open;
    TokenId think_close;
    TokenId eos;
  };

  Vocabulary(std::vector<std::string> symbols, Reserved reserved)
      : symbols_(std::move(symbols)), reserved_(reserved) {
    const int v = size();
    if (v < 8) throw std::invalid_argument("vocabulary: size must be >= 8, got " + std::to_string(v));
    const TokenId ids[] = {reserved_.prompt_sep, reserved_.think_open, reserved_.think_close, reserved_.eos};
    for (int a = 0; a < 4; ++a) {
      if (ids[a] < 0 || ids[a] >= v) throw std::invalid_argument("vocabulary: reserved id out of range");
      for (int b = a + 1; b < 4; ++b)
        if (ids[a] == ids[b]) throw std::invalid_argument("vocabulary: reserved ids must be distinct");
    }
  }

  /// Generic vocabulary "t0".."t{V-1}" with the reserved ids at 0..3. Used by
  /// gradient tests that do not need task semantics.
  static Vocabulary generic(int size) {
    std::vector<std::string> names;
    for (int i = 0; i < size; ++i) names.push_back("t" + std::to_string(i));
    return Vocabulary(std::move(names), {0, 1, 2, 3});
  }

  [[nodiscard]] int size() const noexcept { return static_cast<int>(symbols_.size()); }
  [[nodiscard]] const std::string& symbol(TokenId id) const { return symbols_.at(static_cast<std::size_t>(id)); }
  [[nodiscard]] const std::vector<std::string>& symbols() const noexcept { return symbols_; }
  [[nodiscard]] const Reserved& reserved() const noexcept { return reserved_; }
  [[nodiscard]] TokenId prompt_sep() const noexcept { return reserved_.prompt_sep; }
  [[nodiscard]] TokenId think_open() const noexcept { return reserved_.think_open; }
  [[nodiscard]] TokenId think_close() const noexcept { return reserved_.think_close; }
  [[nodiscard]] TokenId eos() const noexcept { return reserved_.eos; }
  [[nodiscard]] bool contains(TokenId id) const noexcept { return id >= 0 && id < size(); }

  /// FNV-1a over symbol names and reserved ids; stored in checkpoint headers.
  [[nodiscard]] std::uint64_t hash() const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](unsigned char c) {
      h ^= c;
      h *= 0x100000001b3ULL;
    };
    for (const auto& s : symbols_) {
      for (unsigned char c : s) feed(c);
      feed(0);
    }
    for (TokenId id : {reserved_.prompt_sep, reserved_.think_open, reserved_.think_close, reserved_.eos})
      feed(static_cast<unsigned char>(id));
    return h;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.symbols_ == b.symbols_ && a.reserved_.prompt_sep == b.reserved_.prompt_sep &&
           a.reserved_.think_open == b.reserved_.think_open && a.reserved_.think_close == b.reserved_.think_close &&
           a.reserved_.eos == b.reserved_.eos;
  }

 private:
  std::vector<std::string> symbols_;
  Reserved reserved_;
};

}  // namespace ces
