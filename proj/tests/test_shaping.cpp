// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "ces/shaping.hpp"
#include "oracles/reference_shaping.hpp"
#include "support.hpp"

using namespace ces;
using testing_support::random_group;
using testing_support::synthetic_group;

TEST(Multiplier, Examples) {
  EXPECT_EQ(dynamic_multiplier(1, 0.75), 0.75);
  EXPECT_EQ(dynamic_multiplier(0, 0.75), 0.25);
  EXPECT_EQ(dynamic_multiplier(1, 1.0), 1.0);
  EXPECT_THROW(dynamic_multiplier(1, 1.5), std::invalid_argument);
}

TEST(TopK, FourHundredTokens) {
  Rng rng(1);
  std::vector<double> h(400);
  for (auto& x : h) x = rng.uniform();
  h[37] = 5.0;
  h[301] = 4.5;
  const auto sel = select_topk(h, 0.01, 0.5);
  EXPECT_EQ(sel.k, 2);
  EXPECT_EQ(sel.indices, (std::vector<int>{37, 301}));
}

TEST(TopK, FloorToZero) {
  const std::vector<double> h(50, 1.0);
  const auto sel = select_topk(h, 0.01, 0.25);
  EXPECT_EQ(sel.k, 0);
  EXPECT_TRUE(sel.indices.empty());
}

TEST(TopK, TiesPreferEarlierPositions) {
  const std::vector<double> h{1.0, 2.0, 2.0, 0.5};
  EXPECT_EQ(select_topk(h, 0.25, 1.0).indices, std::vector<int>{1});
  EXPECT_EQ(select_topk(h, 0.5, 1.0).indices, (std::vector<int>{1, 2}));
  const std::vector<double> flat(8, 0.7);
  EXPECT_EQ(select_topk(flat, 0.375, 1.0).indices, (std::vector<int>{0, 1, 2}));
}

TEST(TopK, FloorGuardAbsorbsRepresentationError) {
  // 100 * 0.29 evaluates to 28.999999999999996
  EXPECT_EQ(topk_count(100, 0.29, 1.0), 29);
  EXPECT_EQ(topk_count(100, 0.07, 1.0), 7);
  EXPECT_EQ(topk_count(3, 1.0, 1.0), 3);
}

TEST(TopK, RejectsBadArguments) {
  const std::vector<double> h{1.0};
  EXPECT_THROW(select_topk(h, 0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(select_topk(h, 0.5, -0.1), std::invalid_argument);
}

TEST(Shape, CorrectSelectedTokenIsPenalized) {
  // one correct (R=2) and one incorrect (R=0): A = +-1 up to the epsilon guard
  auto b = synthetic_group({{2.0, 0.1}, {1.5, 0.1}}, {1, 0}, {1, 0});
  ShapingConfig cfg{1.0, 0.4, 0.4, ShapingMode::full_ces};
  // b = 0.5 for both, k = floor(2 * 1 * 0.5) = 1
  const auto plan = shape_advantages(b, cfg);
  const double A = b.advantages[0];
  EXPECT_NEAR(A, 1.0, 1e-7);
  EXPECT_NEAR(plan.responses[0].shaped[0], A - 0.4 * 2.0, 1e-15);
  EXPECT_NEAR(plan.responses[0].shaped[0], 0.2, 1e-7);
  EXPECT_EQ(plan.responses[0].shaped[1], A);
  EXPECT_EQ(plan.responses[0].sign[0], -1);
  EXPECT_EQ(plan.responses[0].sign[1], 0);
}

TEST(Shape, IncorrectSelectedTokenIsRewarded) {
  auto b = synthetic_group({{3.0}, {1.5, 0.2}}, {1, 0}, {0, 0});
  ShapingConfig cfg{1.0, 0.4, 0.4, ShapingMode::full_ces};
  const auto plan = shape_advantages(b, cfg);
  const double A = b.advantages[1];
  EXPECT_NEAR(plan.responses[1].shaped[0], A + 0.4 * 1.5, 1e-15);
  EXPECT_EQ(plan.responses[1].sign[0], +1);
  EXPECT_EQ(plan.responses[1].shaped[1], A);
}

TEST(Shape, WorkedValues) {
  // base advantages set directly to the worked values
  auto b = synthetic_group({{2.0}, {1.5}}, {1, 0}, {0, 0});
  b.advantages = {1.0, -0.8};
  ShapingConfig cfg{1.0, 0.4, 0.4, ShapingMode::full_ces};
  b.accuracy = 0.0;  // b_i = 0 for the correct response, 1 for the incorrect one
  auto plan = shape_advantages(b, cfg);
  EXPECT_NEAR(plan.responses[1].shaped[0], -0.2, 1e-15);
  b.accuracy = 1.0;
  plan = shape_advantages(b, cfg);
  EXPECT_NEAR(plan.responses[0].shaped[0], 0.2, 1e-15);
}

TEST(Shape, ModesOffAndEntropyAdv) {
  auto b = synthetic_group({{1.0, 2.0, 0.5}, {0.3, 0.0}}, {1, 0}, {1, 1});
  ShapingConfig cfg{1.0, 0.4, 0.7, ShapingMode::off};
  const auto off = shape_advantages(b, cfg);
  EXPECT_FALSE(off.gradient_flow);
  for (std::size_t i = 0; i < 2; ++i)
    for (double a : off.responses[i].shaped) EXPECT_EQ(a, b.advantages[i]);
  cfg.mode = ShapingMode::entropy_adv;
  const auto ea = shape_advantages(b, cfg);
  EXPECT_FALSE(ea.gradient_flow);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto h = b.responses[i].entropies();
    for (std::size_t j = 0; j < h.size(); ++j) {
      EXPECT_NEAR(ea.responses[i].shaped[j], b.advantages[i] + 0.7 * h[j], 1e-15);
      EXPECT_TRUE(ea.responses[i].is_selected[j]);
    }
  }
}

TEST(Shape, DetachKeepsValuesDropsFlow) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const auto b = random_group(rng);
    ShapingConfig cfg{0.2, 0.4, 0.4, ShapingMode::full_ces};
    const auto full = shape_advantages(b, cfg);
    cfg.mode = ShapingMode::detach;
    const auto det = shape_advantages(b, cfg);
    EXPECT_TRUE(full.gradient_flow);
    EXPECT_FALSE(det.gradient_flow);
    for (std::size_t i = 0; i < b.responses.size(); ++i) {
      EXPECT_EQ(full.responses[i].shaped, det.responses[i].shaped);
      EXPECT_EQ(full.responses[i].selected, det.responses[i].selected);
    }
  }
}

TEST(Shape, ZeroVarianceCorrectGroupGetsNegativeSignal) {
  auto b = synthetic_group({{1.2, 0.4}, {0.9, 2.0}}, {1, 1}, {1, 1});
  ShapingConfig cfg{0.5, 0.4, 0.4, ShapingMode::full_ces};
  const auto plan = shape_advantages(b, cfg);
  EXPECT_NEAR(plan.responses[0].shaped[0], -0.4 * 1.2, 1e-15);
  EXPECT_NEAR(plan.responses[1].shaped[1], -0.4 * 2.0, 1e-15);
  EXPECT_EQ(plan.responses[0].shaped[1], 0.0);
}

TEST(Shape, MisalignedLiveEntropyFails) {
  auto b = synthetic_group({{1.0, 2.0}, {1.0}}, {1, 0}, {0, 0});
  ShapingConfig cfg;
  EXPECT_THROW(shape_advantages(b, cfg, {{1.0, 2.0}}), std::invalid_argument);
  EXPECT_THROW(shape_advantages(b, cfg, {{1.0}, {1.0}}), std::invalid_argument);
  GroupBatch unscored = b;
  unscored.scored = false;
  EXPECT_THROW(shape_advantages(unscored, cfg), std::invalid_argument);
}

TEST(Shape, LiveEntropyUsedForValueRolloutForRanking) {
  auto b = synthetic_group({{3.0, 1.0, 0.5}, {0.1}}, {1, 0}, {1, 0});
  ShapingConfig cfg{0.7, 0.5, 0.5, ShapingMode::full_ces};
  // k = floor(3 * 0.7 * 0.5) = 1, ranked by the rollout entropies -> position 0
  const auto plan = shape_advantages(b, cfg, {{0.2, 9.0, 9.0}, {0.1}});
  EXPECT_EQ(plan.responses[0].selected, std::vector<int>{0});
  EXPECT_NEAR(plan.responses[0].shaped[0], b.advantages[0] - 0.5 * 0.2, 1e-15);
}

TEST(Shape, PropertiesOnRandomGroups) {
  Rng rng(17);
  for (int t = 0; t < 1000; ++t) {
    const auto b = random_group(rng);
    const double tau = 0.05 + 0.95 * rng.uniform();
    const ShapingConfig cfg{tau, 0.4, 0.6, ShapingMode::full_ces};
    const auto plan = shape_advantages(b, cfg);
    for (std::size_t i = 0; i < b.responses.size(); ++i) {
      const auto& r = b.responses[i];
      const auto& rp = plan.responses[i];
      const int k = topk_count(r.length(), tau, dynamic_multiplier(r.r_acc, b.accuracy));
      EXPECT_EQ(static_cast<int>(rp.selected.size()), std::min<int>(k, static_cast<int>(r.length())));
      for (std::size_t j = 0; j < r.length(); ++j) {
        if (!rp.is_selected[j]) {
          EXPECT_EQ(rp.shaped[j], b.advantages[i]);
          EXPECT_EQ(rp.sign[j], 0);
        } else if (r.r_acc == 1) {
          EXPECT_LE(rp.shaped[j], b.advantages[i]);
          EXPECT_EQ(rp.sign[j], -1);
        } else {
          EXPECT_GE(rp.shaped[j], b.advantages[i]);
          EXPECT_EQ(rp.sign[j], +1);
        }
      }
    }
  }
}

TEST(Shape, FullAndRemoveAccCoincideAtExtremes) {
  Rng rng(18);
  int checked = 0;
  for (int t = 0; t < 2000 && checked < 100; ++t) {
    const auto b = random_group(rng);
    if (b.accuracy != 0.0 && b.accuracy != 1.0) continue;
    ++checked;
    ShapingConfig cfg{0.3, 0.4, 0.4, ShapingMode::full_ces};
    const auto full = shape_advantages(b, cfg);
    cfg.mode = ShapingMode::remove_acc;
    const auto rem = shape_advantages(b, cfg);
    for (std::size_t i = 0; i < b.responses.size(); ++i) {
      EXPECT_EQ(full.responses[i].selected, rem.responses[i].selected);
      EXPECT_EQ(full.responses[i].shaped, rem.responses[i].shaped);
    }
  }
  EXPECT_GE(checked, 50);
}

TEST(Shape, KMonotoneInMultiplier) {
  for (std::size_t len = 1; len < 200; len += 7)
    for (double tau : {0.01, 0.1, 0.37, 1.0}) {
      int prev = 0;
      for (int i = 0; i <= 20; ++i) {
        const int k = topk_count(len, tau, i / 20.0);
        EXPECT_GE(k, prev);
        prev = k;
      }
    }
}

TEST(Shape, AgreesWithReferenceOracle) {
  Rng rng(19);
  for (int t = 0; t < 200; ++t) {
    const auto b = random_group(rng);
    const long long tau_den = 100;
    const long long tau_num = rng.uniform_int(1, 100);
    const double beta1 = 2.0 * rng.uniform();
    const double beta2 = 2.0 * rng.uniform();
    std::vector<oracle::RefResponse> Y;
    for (const auto& r : b.responses) Y.push_back({r.entropies(), r.r_acc, r.r_fmt});
    for (auto mode : {ShapingMode::full_ces, ShapingMode::remove_acc}) {
      const auto ref = oracle::reference_shaping(Y, tau_num, tau_den, beta1, beta2, mode == ShapingMode::remove_acc ? 1.0 : -1.0);
      const ShapingConfig cfg{static_cast<double>(tau_num) / tau_den, beta1, beta2, mode};
      const auto plan = shape_advantages(b, cfg);
      EXPECT_NEAR(b.accuracy, ref.a, 1e-12);
      for (std::size_t i = 0; i < Y.size(); ++i) {
        EXPECT_NEAR(plan.responses[i].base_advantage, ref.base[i], 1e-12);
        EXPECT_EQ(plan.responses[i].k, ref.k[i]);
        for (std::size_t j = 0; j < Y[i].entropy.size(); ++j) {
          EXPECT_EQ(static_cast<bool>(plan.responses[i].is_selected[j]), ref.tokens[i][j].selected);
          EXPECT_NEAR(plan.responses[i].shaped[j], ref.tokens[i][j].shaped, 1e-12);
        }
      }
    }
  }
}

TEST(Shape, ModeNamesRoundTrip) {
  for (auto m : kAllShapingModes) EXPECT_EQ(shaping_mode_from_string(to_string(m)), m);
  EXPECT_THROW(shaping_mode_from_string("fullces"), std::invalid_argument);
  EXPECT_THROW((ShapingConfig{0.0, 0.4, 0.4, ShapingMode::off}.validate()), std::invalid_argument);
  EXPECT_THROW((ShapingConfig{0.1, -1.0, 0.4, ShapingMode::off}.validate()), std::invalid_argument);
}
