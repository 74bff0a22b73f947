#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "moesim/gating.hpp"
#include "support/generators.hpp"

namespace moesim {
namespace {

GateMatrix identity_gate(std::size_t n) {
  GateMatrix g{0, n, n, std::vector<float>(n * n, 0.0f)};
  for (std::size_t i = 0; i < n; ++i) g.weights[i * n + i] = 1.0f;
  return g;
}

TEST(ComputeGate, SingleSelectionNormalizesToOne) {
  const std::vector<float> x{2.0f, 1.0f};
  const auto g = compute_gate(x, identity_gate(2), 1);
  ASSERT_EQ(g.ranked.size(), 1u);
  EXPECT_EQ(g.ranked[0].key, (ExpertKey{0, 0}));
  EXPECT_EQ(g.ranked[0].weight, 1.0);
}

TEST(ComputeGate, SoftmaxOverSelectedLogits) {
  const std::vector<float> x{2.0f, 1.0f};
  const auto g = compute_gate(x, identity_gate(2), 2);
  const double e = std::exp(1.0);
  EXPECT_NEAR(g.ranked[0].weight, e / (e + 1), 1e-15);
  EXPECT_NEAR(g.ranked[1].weight, 1 / (e + 1), 1e-15);
  EXPECT_NEAR(g.ranked[0].weight, 0.7311, 1e-4);
  EXPECT_EQ(g.ranked[1].key.expert, 1u);
}

TEST(ComputeGate, TiesGoToLowerExpertIndex) {
  const std::vector<float> x{-1.0f, 0.0f, -2.0f, 0.0f};
  const auto g = compute_gate(x, identity_gate(4), 1);
  EXPECT_EQ(g.ranked[0].key.expert, 1u);
  const auto g2 = compute_gate(x, identity_gate(4), 2);
  EXPECT_EQ(g2.ranked[1].key.expert, 3u);
}

TEST(ComputeGate, RejectsDimensionMismatch) {
  const std::vector<float> x{1.0f, 2.0f, 3.0f};
  EXPECT_THROW(compute_gate(x, identity_gate(2), 1), InputError);
}

TEST(ComputeGate, OutcomeInvariantsOnRandomGates) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    const auto gate = testing_support::random_gate(rng, 0, 8, 16);
    const auto x = testing_support::random_vector(rng, 16);
    const std::size_t k = 1 + i % 8;
    const auto g = compute_gate(x, gate, k);
    ASSERT_EQ(g.ranked.size(), k);
    double sum = 0;
    for (std::size_t r = 0; r < k; ++r) {
      sum += g.ranked[r].weight;
      EXPECT_GE(g.ranked[r].weight, 0.0);
      EXPECT_LE(g.ranked[r].weight, 1.0);
      if (r > 0) {
        EXPECT_GE(g.ranked[r - 1].weight, g.ranked[r].weight);
        if (g.ranked[r - 1].weight == g.ranked[r].weight) {
          EXPECT_LT(g.ranked[r - 1].key.expert, g.ranked[r].key.expert);
        }
      }
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(UnimportanceScores, BaseCase) {
  GateOutcome g{0, {{{0, 0}, 1.0}}};
  EXPECT_EQ(unimportance_scores(g), std::vector<double>{0.0});
}

TEST(UnimportanceScores, TwoExperts) {
  GateOutcome g{0, {{{0, 0}, 0.7}, {{0, 1}, 0.3}}};
  EXPECT_EQ(unimportance_scores(g), (std::vector<double>{0.0, 0.7}));
}

TEST(UnimportanceScores, ThreeExperts) {
  GateOutcome g{0, {{{0, 0}, 0.4}, {{0, 1}, 0.35}, {{0, 2}, 0.25}}};
  const auto s = unimportance_scores(g);
  EXPECT_EQ(s[0], 0.0);
  EXPECT_EQ(s[1], 0.4);
  EXPECT_DOUBLE_EQ(s[2], 0.75);
}

TEST(UnimportanceScores, NonDecreasingWithinUnitInterval) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 2000; ++i) {
    const auto g = testing_support::random_outcome(rng, 1 + i % 6);
    const auto s = unimportance_scores(g);
    EXPECT_EQ(s[0], 0.0);
    for (std::size_t r = 1; r < s.size(); ++r) {
      EXPECT_GE(s[r], s[r - 1]);
      EXPECT_LE(s[r], 1.0 + 1e-12);
    }
  }
}

TEST(ClassifyPrecision, ThresholdExamples) {
  const Thresholds th{0.6, 0.9};
  EXPECT_EQ(classify_precision(std::vector<double>{0, 0.7}, th),
            (PrecisionDecision{Decision::High, Decision::Low}));
  EXPECT_EQ(classify_precision(std::vector<double>{0, 0.95}, th),
            (PrecisionDecision{Decision::High, Decision::Skip}));
  EXPECT_EQ(classify_precision(std::vector<double>{0, 0.5}, th),
            (PrecisionDecision{Decision::High, Decision::High}));
}

TEST(ClassifyPrecision, BoundariesAreInclusive) {
  const Thresholds th{0.6, 0.9};
  EXPECT_EQ(classify_precision(std::vector<double>{0, 0.6, 0.9}, th),
            (PrecisionDecision{Decision::High, Decision::High, Decision::Low}));
}

TEST(ClassifyPrecision, RankZeroAlwaysHigh) {
  const Thresholds zero{0.0, 0.0};
  EXPECT_EQ(classify_precision(std::vector<double>{0, 0.1}, zero),
            (PrecisionDecision{Decision::High, Decision::Skip}));
}

TEST(ClassifyPrecision, RejectsInvertedThresholds) {
  EXPECT_THROW(classify_precision(std::vector<double>{0, 0.5}, {0.9, 0.6}), InputError);
  EXPECT_THROW(classify_precision(std::vector<double>{0}, {-0.1, 0.5}), InputError);
}

// Raising t1 with t2 fixed never demotes an expert.
TEST(ClassifyPrecision, MonotoneInT1) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 2000; ++i) {
    const auto s = unimportance_scores(testing_support::random_outcome(rng, 2 + i % 4));
    const double t2 = u(rng);
    const double a = u(rng) * t2, b = u(rng) * t2;
    const auto lo = classify_precision(s, {std::min(a, b), t2});
    const auto hi = classify_precision(s, {std::max(a, b), t2});
    for (std::size_t r = 0; r < s.size(); ++r)
      EXPECT_LE(static_cast<int>(hi[r]), static_cast<int>(lo[r]));
  }
}

}  // namespace
}  // namespace moesim
