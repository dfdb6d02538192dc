#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "s2tdpt/spike_coding.hpp"

using namespace s2tdpt;

namespace {

std::vector<double> ones_then_zeros(std::size_t ones, std::size_t d) {
  std::vector<double> v(d, 0.0);
  for (std::size_t i = 0; i < ones; ++i) v[i] = 1.0;
  return v;
}

double sim(std::size_t cq, std::size_t ck, std::size_t d, const GeneralStdpConfig& cfg) {
  const auto q = ones_then_zeros(cq, d), k = ones_then_zeros(ck, d);
  return stdp_similarity<double>(q, k, LatencyCoderConfig{1.0, d}, cfg);
}

}  // namespace

TEST(SpikeCount, CountsOnes) {
  const std::vector<double> v{1, 0, 1, 1};
  EXPECT_EQ(spike_count<double>(v), 3u);
  EXPECT_EQ(spike_count<double>(std::vector<double>(8, 0.0)), 0u);
  EXPECT_EQ(spike_count<double>(std::vector<double>(8, 1.0)), 8u);
}

TEST(SpikeCount, NonBinaryIsContractError) {
  const std::vector<double> v{1, 0.5};
  EXPECT_THROW(spike_count<double>(v), Error);
}

TEST(LatencyEncode, Endpoints) {
  LatencyCoderConfig c{1.0, 4};
  EXPECT_EQ(latency_encode(0, c), 1.0);
  EXPECT_EQ(latency_encode(4, c), 0.0);
  EXPECT_DOUBLE_EQ(latency_encode(2, c), 0.5);
}

TEST(LatencyEncode, OutOfRangeIsContractError) {
  LatencyCoderConfig c{1.0, 4};
  EXPECT_THROW(latency_encode(5, c), Error);
  EXPECT_THROW(latency_encode(-1, c), Error);
}

TEST(LatencyEncode, EvenlySpacedStrictlyDecreasing) {
  for (std::size_t d : {1u, 3u, 8u, 16u}) {
    LatencyCoderConfig c{2.5, d};
    const double step = c.t_max / static_cast<double>(d);
    for (std::size_t p = 1; p <= d; ++p) {
      const double a = latency_encode(static_cast<double>(p - 1), c), b = latency_encode(static_cast<double>(p), c);
      EXPECT_LT(b, a);
      EXPECT_NEAR(a - b, step, 1e-12);
      EXPECT_GE(b, 0.0);
      EXPECT_LE(a, c.t_max);
    }
  }
}

TEST(StdpSimilarity, EqualCountsFallOnDepressionBranch) {
  GeneralStdpConfig cfg{1.0, 0.7, 1.0, 1.0};
  EXPECT_DOUBLE_EQ(sim(2, 2, 4, cfg), -0.7);
}

TEST(StdpSimilarity, FullQueryEmptyKey) {
  EXPECT_NEAR(sim(4, 0, 4, GeneralStdpConfig{}), std::exp(-1.0), 1e-12);
  EXPECT_NEAR(sim(4, 0, 4, GeneralStdpConfig{}), 0.36788, 1e-5);
}

TEST(StdpSimilarity, EmptyQueryFullKey) {
  EXPECT_NEAR(sim(0, 4, 4, GeneralStdpConfig{}), -std::exp(-1.0), 1e-12);
}

TEST(StdpSimilarity, LengthMismatchIsContractError) {
  const std::vector<double> q(4, 0.0), k(3, 0.0);
  EXPECT_THROW(stdp_similarity<double>(q, k, LatencyCoderConfig{1.0, 4}, GeneralStdpConfig{}), Error);
}

TEST(StdpSimilarity, NonPositiveConstantsAreConfigErrors) {
  EXPECT_THROW(stdp_window(0.1, GeneralStdpConfig{0.0, 1.0, 1.0, 1.0}), Error);
  EXPECT_THROW(stdp_window(0.1, GeneralStdpConfig{1.0, 1.0, 1.0, -1.0}), Error);
}

TEST(StdpSimilarity, SignAntisymmetryAndBound) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> amp(0.1, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 1 + rng() % 16;
    const std::size_t cq = rng() % (d + 1), ck = rng() % (d + 1);
    GeneralStdpConfig g{amp(rng), amp(rng), amp(rng), amp(rng)};
    const double w = sim(cq, ck, d, g);
    if (cq > ck)
      EXPECT_GT(w, 0.0);
    else
      EXPECT_LE(w, 0.0);
    EXPECT_LE(std::abs(w), std::max(g.a_plus, g.a_minus) + 1e-15);

    const double a = amp(rng), tau = amp(rng);
    GeneralStdpConfig sym{a, a, tau, tau};
    if (cq != ck) {
      EXPECT_NEAR(sim(cq, ck, d, sym), -sim(ck, cq, d, sym), 1e-12);
    }
  }
}
