#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace flextrain;

TEST(ActivationDistribution, OneHotAlwaysDrawsItsDepth) {
  const auto pi = ActivationDistribution::one_hot(5, 3);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_config(pi, rng), 3u);
  EXPECT_TRUE(pi.degenerate());
}

TEST(ActivationDistribution, DegenerateDrawConsumesNoRandomness) {
  const auto pi = ActivationDistribution::one_hot(4, 4);
  Rng a(3), b(3);
  sample_config(pi, a);
  EXPECT_TRUE(a == b);
}

TEST(ActivationDistribution, SameSeedSameSequence) {
  const ActivationDistribution pi({0.1, 0.2, 0.3, 0.4});
  Rng a(8), b(8);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(sample_config(pi, a), sample_config(pi, b));
}

TEST(ActivationDistribution, EmpiricalFrequenciesMatch) {
  const ActivationDistribution pi({0.1, 0.0, 0.25, 0.15, 0.5});
  Rng rng(12);
  std::vector<int> counts(5, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[sample_config(pi, rng) - 1];
  for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(counts[k] / double(n), pi.probs()[k], 0.01) << k;
  EXPECT_EQ(counts[1], 0);
}

TEST(ActivationDistribution, FromPairsAndSupport) {
  const auto pi = ActivationDistribution::from_pairs(6, {{2, 0.25}, {4, 0.25}, {6, 0.5}});
  EXPECT_EQ(pi.support(), (std::vector<std::size_t>{2, 4, 6}));
  EXPECT_DOUBLE_EQ(pi.prob(1), 0.0);
  EXPECT_DOUBLE_EQ(pi.prob(6), 0.5);
}

TEST(ActivationDistribution, InvalidInputsRejected) {
  EXPECT_THROW(ActivationDistribution(std::vector<double>{}), std::invalid_argument);
  EXPECT_THROW(ActivationDistribution({0.5, 0.6}), std::invalid_argument);
  EXPECT_THROW(ActivationDistribution({-0.1, 1.1}), std::invalid_argument);
  EXPECT_THROW(ActivationDistribution({std::nan(""), 1.0}), std::invalid_argument);
  EXPECT_THROW(ActivationDistribution::one_hot(3, 0), std::out_of_range);
  EXPECT_THROW(ActivationDistribution::from_pairs(3, {{4, 1.0}}), std::out_of_range);
}

TEST(ActivationDistribution, NearOneSumIsRenormalized) {
  const ActivationDistribution pi({0.5, 0.5 + 1e-12});
  EXPECT_NEAR(pi.prob(1) + pi.prob(2), 1.0, 1e-15);
}

TEST(PrefixParams, HandCountedSmallNet) {
  // input 2, hidden 4, classes 3: pre 12, block 40, head 15.
  const NetShape s{2, 4, 3, 2};
  EXPECT_EQ(prefix_param_count(s, 1), 67u);
  EXPECT_EQ(prefix_param_count(s, 2), 107u);
  EXPECT_EQ(prefix_param_count(s, 2), init_net(s, 1).param_count());
  EXPECT_EQ(prefix_param_count(s, 1), init_net(s.with_depth(1), 1).param_count());
}

TEST(ExpectedRatio, HandTable) {
  const std::vector<double> counts = {1.0, 2.0, 4.0};
  EXPECT_DOUBLE_EQ(expected_param_ratio(ActivationDistribution({0.5, 0.0, 0.5}), counts), 0.625);
  EXPECT_NEAR(expected_param_ratio(ActivationDistribution({1.0 / 3, 2.0 / 3, 0.0}), counts), 5.0 / 12, 1e-12);
  EXPECT_DOUBLE_EQ(expected_param_ratio(ActivationDistribution::one_hot(3, 3), counts), 1.0);
}

TEST(ExpectedRatio, ShapeVersion) {
  const NetShape s{2, 4, 3, 2};
  EXPECT_NEAR(expected_param_ratio(ActivationDistribution({0.5, 0.5}), s), (67.0 + 107.0) / 2 / 107.0, 1e-12);
  EXPECT_THROW(expected_param_ratio(ActivationDistribution({1.0}), s), std::invalid_argument);
}

TEST(FractionToDepth, PicksLargestFittingPrefix) {
  const NetShape s{2, 4, 3, 2};  // A_1 = 67, A_2 = 107
  EXPECT_EQ(fraction_to_depth(s, 1.0).depth, 2u);
  EXPECT_EQ(fraction_to_depth(s, 67.0 / 107.0).depth, 1u);
  EXPECT_FALSE(fraction_to_depth(s, 0.7).over_budget);
  const DepthChoice tiny = fraction_to_depth(s, 0.1);
  EXPECT_EQ(tiny.depth, 1u);
  EXPECT_TRUE(tiny.over_budget);
  EXPECT_THROW(fraction_to_depth(s, 0.0), std::out_of_range);
  EXPECT_THROW(fraction_to_depth(s, 1.5), std::out_of_range);
}
