#include <gtest/gtest.h>

#include <random>

#include "s2tdpt/lif.hpp"

using namespace s2tdpt;

namespace {

Var<double> scalar_var(double v) { return Var<double>(Tensor<double>({1}, {v})); }

// Sequence unrolled through lif_step, the composed-primitive path.
Var<double> unrolled(const Var<double>& x, const LifConfig& cfg, std::vector<Var<double>>* steps_out = nullptr) {
  const std::size_t T = x.shape()[0], M = x.size() / T;
  LifState<double> st = lif_initial_state<double>({M});
  Tensor<double> out(x.shape());
  for (std::size_t t = 0; t < T; ++t) {
    Tensor<double> xt({M});
    for (std::size_t i = 0; i < M; ++i) xt[i] = x.value()[t * M + i];
    auto r = lif_step(st, Var<double>(xt), cfg);
    for (std::size_t i = 0; i < M; ++i) out[t * M + i] = r.spikes.value()[i];
    if (steps_out) steps_out->push_back(r.spikes);
    st = r.state;
  }
  return Var<double>(out);
}

}  // namespace

TEST(LifStep, SubthresholdDecays) {
  auto r = lif_step(LifState<double>{scalar_var(0.0)}, scalar_var(0.6), LifConfig{});
  EXPECT_EQ(r.spikes.value()[0], 0.0);
  EXPECT_DOUBLE_EQ(r.state.h.value()[0], 0.3);
}

TEST(LifStep, SuprathresholdFiresAndResets) {
  auto r = lif_step(LifState<double>{scalar_var(0.3)}, scalar_var(0.8), LifConfig{});
  EXPECT_EQ(r.spikes.value()[0], 1.0);
  EXPECT_DOUBLE_EQ(r.state.h.value()[0], 0.0);
}

TEST(LifStep, ShapeMismatchIsContractError) {
  EXPECT_THROW(lif_step(lif_initial_state<double>({2}), scalar_var(1.0), LifConfig{}), Error);
}

TEST(LifSequence, NoInputNoActivity) {
  Var<double> s = lif_sequence(Var<double>(Tensor<double>({6, 4})), LifConfig{});
  EXPECT_EQ(s.value().sum(), 0.0);
}

TEST(LifSequence, PerfectIntegratorFiresOnThirdStep) {
  LifConfig cfg;
  cfg.beta = 1.0;
  Var<double> s = lif_sequence(Var<double>(Tensor<double>({3, 1}, 0.4)), cfg);
  EXPECT_EQ(s.value(), Tensor<double>({3, 1}, {0.0, 0.0, 1.0}));
}

TEST(LifSequence, StrongInputFiresEveryStep) {
  Var<double> s = lif_sequence(Var<double>(Tensor<double>({2, 1}, 2.0)), LifConfig{});
  EXPECT_EQ(s.value(), Tensor<double>({2, 1}, {1.0, 1.0}));
}

TEST(LifSequence, SingleStepEqualsLifStep) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(-1, 2);
  Tensor<double> x({1, 32});
  for (auto& v : x.data()) v = d(rng);
  EXPECT_EQ(lif_sequence(Var<double>(x), LifConfig{}).value(), unrolled(Var<double>(x), LifConfig{}).value());
}

TEST(LifSequence, InitialStateIsHonoured) {
  Tensor<double> h0({1}, {0.7});
  Var<double> s = lif_sequence(Var<double>(Tensor<double>({1, 1}, 0.3)), LifConfig{}, &h0);
  EXPECT_EQ(s.value()[0], 1.0);
}

TEST(LifSequence, ZeroTimestepsIsContractError) {
  EXPECT_THROW(lif_sequence(Var<double>(Tensor<double>({0, 3})), LifConfig{}), Error);
}

TEST(LifConfig, InvalidConstantsAreConfigErrors) {
  LifConfig a;
  a.beta = 1.5;
  EXPECT_THROW(a.validate(), Error);
  LifConfig b;
  b.v_reset = 1.0;
  EXPECT_THROW(b.validate(), Error);
}

// Membrane bookkeeping: after a spike H = v_reset, otherwise H = beta * U;
// with beta = 1 and sub-threshold input the membrane accumulates exactly.
TEST(LifProperties, ResetAndLeakInvariants) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> d(-0.5, 1.5);
  LifConfig cfg;
  cfg.v_reset = -0.2;
  cfg.beta = 0.7;
  for (int trial = 0; trial < 200; ++trial) {
    LifState<double> st = lif_initial_state<double>({1});
    for (int t = 0; t < 8; ++t) {
      const double h = st.h.value()[0], x = d(rng), u = h + x;
      auto r = lif_step(st, scalar_var(x), cfg);
      if (r.spikes.value()[0] == 1.0) {
        EXPECT_GE(u, cfg.v_th);
        EXPECT_EQ(r.state.h.value()[0], cfg.v_reset);
      } else {
        EXPECT_LT(u, cfg.v_th);
        EXPECT_DOUBLE_EQ(r.state.h.value()[0], cfg.beta * u);
      }
      st = r.state;
    }
  }
  LifConfig integ;
  integ.beta = 1.0;
  LifState<double> st = lif_initial_state<double>({1});
  for (int t = 1; t <= 4; ++t) {
    st = lif_step(st, scalar_var(0.125), integ).state;
    EXPECT_EQ(st.h.value()[0], 0.125 * t);
  }
}

TEST(LifProperties, OutputIsBinaryAndMatchesUnrolledSteps) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-1.0, 2.5);
  LifConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<double> x({8, 5});
    for (auto& v : x.data()) v = d(rng);
    Var<double> s = lif_sequence(Var<double>(x), cfg);
    EXPECT_TRUE(s.value().is_binary());
    EXPECT_EQ(s.value(), unrolled(Var<double>(x), cfg).value());
  }
}

// The fused sequence op and the step-by-step composition must agree on the
// surrogate gradient as well as on the forward pass.
TEST(LifGradient, FusedMatchesComposedSteps) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> d(0.0, 1.4);
  for (auto kind : {SurrogateKind::rectangular, SurrogateKind::triangular}) {
    LifConfig cfg;
    cfg.v_reset = -0.1;
    cfg.surrogate.kind = kind;
    const std::size_t T = 6, M = 7;
    Tensor<double> x({T, M}), w({T, M});
    for (auto& v : x.data()) v = d(rng);
    for (auto& v : w.data()) v = d(rng) - 0.7;

    Var<double> xf(x, true);
    backward(sum(mul(lif_sequence(xf, cfg), Var<double>(w))));

    std::vector<Var<double>> leaves;
    LifState<double> st = lif_initial_state<double>({M});
    Var<double> total(Tensor<double>::scalar(0.0));
    for (std::size_t t = 0; t < T; ++t) {
      Tensor<double> xt({M}), wt({M});
      for (std::size_t i = 0; i < M; ++i) {
        xt[i] = x[t * M + i];
        wt[i] = w[t * M + i];
      }
      leaves.emplace_back(xt, true);
      auto r = lif_step(st, leaves.back(), cfg);
      total = add(total, sum(mul(r.spikes, Var<double>(wt))));
      st = r.state;
    }
    backward(total);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < M; ++i)
        EXPECT_NEAR(xf.grad()[t * M + i], leaves[t].has_grad() ? leaves[t].grad()[i] : 0.0, 1e-12);
  }
}

TEST(LifGradient, ZeroWhenMembraneFarFromThreshold) {
  // beta = 0 isolates each step: U = X.
  LifConfig cfg;
  cfg.beta = 0.0;
  Var<double> x(Tensor<double>({3, 2}, {-2.0, 3.0, 0.2, 1.9, 5.0, -4.0}), true);
  backward(sum(lif_sequence(x, cfg)));
  for (double g : x.grad().data()) EXPECT_EQ(g, 0.0);
}
