#include <gtest/gtest.h>

#include <random>

#include "s2tdpt/model.hpp"

using namespace s2tdpt;

namespace {

// 32x32 RGB, two SPE + two SPED stages, kept narrow so tests stay quick.
ModelConfig small_cifar_like() {
  ModelConfig c;
  c.timesteps = 2;
  c.depth = 2;
  c.embed_dim = 16;
  c.stem_channels = 4;
  c.sps_stages = {{SpsStageKind::spe, 8}, {SpsStageKind::spe, 8}, {SpsStageKind::sped, 16}, {SpsStageKind::sped, 16}};
  c.attention.heads = 2;
  c.attention.scale = 0.5;
  return c;
}

Tensor<double> random_images(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

Var<double>* find_param(Model<double>& m, const std::string& name) {
  for (auto& p : m.parameters())
    if (p.name == name) return p.var;
  return nullptr;
}

}  // namespace

TEST(ModelConfig, DefaultAndToyConfigsValidate) {
  EXPECT_NO_THROW(ModelConfig{}.validate());
  EXPECT_NO_THROW(cifar_4_384(100).validate());
  EXPECT_NO_THROW(toy_config().validate());
  EXPECT_EQ(ModelConfig{}.num_tokens(), 64u);
  EXPECT_EQ(toy_config().num_tokens(), 16u);
}

TEST(ModelConfig, IndivisibleInputIsConfigError) {
  ModelConfig c = small_cifar_like();
  c.height = 30;
  try {
    c.validate();
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::config);
  }
  ModelConfig d = small_cifar_like();
  d.attention.heads = 3;
  EXPECT_THROW(d.validate(), Error);
  ModelConfig e = small_cifar_like();
  e.sps_stages.back().channels = 12;
  EXPECT_THROW(e.validate(), Error);
}

TEST(Sps, ThirtyTwoPixelInputGivesSixtyFourPatches) {
  std::mt19937_64 rng(1);
  Model<double> m(small_cifar_like(), 1);
  Var<double> u = m.sps_forward(Var<double>(random_images({2 * 3, 3, 32, 32}, rng)), false);
  EXPECT_EQ(u.shape(), (Shape{2, 3, 64, 16}));
}

TEST(Sps, ZeroImageGivesZeroMembrane) {
  Model<double> m(small_cifar_like(), 2);
  Var<double> u = m.sps_forward(Var<double>(Tensor<double>({2, 3, 32, 32})), false);
  for (double v : u.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Model, SpikesAreBinaryAndConvInputsAfterStemAreBinary) {
  std::mt19937_64 rng(3);
  Model<double> m(small_cifar_like(), 3);
  ForwardProbe probe;
  m.forward(random_images({2, 3, 32, 32}, rng), true, &probe);
  EXPECT_GT(probe.sn_sites, 0u);
  EXPECT_EQ(probe.sn_non_binary, 0u);
  ASSERT_FALSE(probe.layers.empty());
  EXPECT_TRUE(probe.layers.front().mac_costed);
  for (std::size_t i = 1; i < probe.layers.size(); ++i) {
    EXPECT_FALSE(probe.layers[i].mac_costed);
    EXPECT_TRUE(probe.layers[i].all_binary) << probe.layers[i].name;
  }
}

TEST(EncoderBlock, ZeroedLinearMapsLeaveResidualPlusBnBias) {
  std::mt19937_64 rng(4);
  Model<double> m(small_cifar_like(), 4);
  for (auto& p : m.parameters())
    if (p.name.rfind("block0.", 0) == 0 && p.name.ends_with(".weight")) p.var->mutable_value().fill(0.0);
  std::uniform_real_distribution<double> small(-0.4, 0.4);
  for (const char* n : {"block0.attn.proj.bn.beta", "block0.mlp.fc2.bn.beta", "block0.mlp.fc1.bn.beta",
                        "block0.attn.q.bn.beta", "block0.attn.v.bn.beta"})
    for (auto& v : find_param(m, n)->mutable_value().data()) v = small(rng);
  Tensor<double> u({2, 1, 64, 16});
  std::uniform_real_distribution<double> d(-1.0, 2.0);
  for (auto& v : u.data()) v = d(rng);
  Var<double> x = m.encoder_block_forward(0, Var<double>(u), false);
  ASSERT_EQ(x.shape(), u.shape());
  const auto& bp = find_param(m, "block0.attn.proj.bn.beta")->value();
  const auto& bf = find_param(m, "block0.mlp.fc2.bn.beta")->value();
  for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(x.value()[i], u[i] + bp[i % 16] + bf[i % 16], 1e-12);
}

TEST(Gtmp, MeansOverTime) {
  Var<double> u(Tensor<double>({2, 1, 1, 2}, {1.0, 2.0, 3.0, 6.0}));
  EXPECT_EQ(gtmp(u).value(), Tensor<double>({1, 1, 2}, {2.0, 4.0}));
  Var<double> one(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(gtmp(one).value(), one.value().reshaped({1, 2, 2}));
}

TEST(Gap, MeansOverTokensAndIsPermutationInvariant) {
  Var<double> x(Tensor<double>({1, 2, 2}, {1.0, 2.0, 3.0, 6.0}));
  EXPECT_EQ(gap(x).value(), Tensor<double>({1, 2}, {2.0, 4.0}));
  Var<double> swapped(Tensor<double>({1, 2, 2}, {3.0, 6.0, 1.0, 2.0}));
  EXPECT_EQ(gap(swapped).value(), gap(x).value());
  Var<double> single(Tensor<double>({1, 1, 3}, {1, 2, 3}));
  EXPECT_EQ(gap(single).value(), single.value().reshaped({1, 3}));
}

TEST(Pooling, TimeAndTokenMeansCommute) {
  std::mt19937_64 rng(5);
  Tensor<double> u = random_images({3, 2, 5, 4}, rng);
  Var<double> a = gap(gtmp(Var<double>(u)));
  // Token mean first: view [T, B, N, D] as [T*B, N, D].
  Var<double> tok = gap(Var<double>(u.reshaped({6, 5, 4})));
  Var<double> b = mean_axis(tok, 1, 3, 8, {2, 4});
  EXPECT_LT(max_abs_diff(a.value(), b.value()), 1e-12);
}

TEST(Model, LogitsShapeAndDeterminism) {
  std::mt19937_64 rng(6);
  Model<double> m(small_cifar_like(), 6);
  const Tensor<double> img = random_images({3, 3, 32, 32}, rng);
  Var<double> a = m.forward(img, false), b = m.forward(img, false);
  EXPECT_EQ(a.shape(), (Shape{3, 10}));
  EXPECT_TRUE(a.value().all_finite());
  EXPECT_EQ(a.value(), b.value());
  Model<double> twin(small_cifar_like(), 6);
  EXPECT_EQ(twin.forward(img, false).value(), a.value());
}

TEST(Model, SurrogateGradientIsFiniteAndNonzero) {
  std::mt19937_64 rng(7);
  Model<double> m(small_cifar_like(), 7);
  Var<double> loss = cross_entropy(m.forward(random_images({2, 3, 32, 32}, rng), true), {1, 4});
  backward(loss);
  std::size_t nonzero = 0;
  for (auto& p : m.parameters()) {
    if (!p.var->has_grad()) continue;
    EXPECT_TRUE(p.var->grad().all_finite()) << p.name;
    for (double g : p.var->grad().data()) nonzero += g != 0.0;
  }
  EXPECT_GT(nonzero, 0u);
  ASSERT_TRUE(find_param(m, "sps.stem.weight")->has_grad());
}

TEST(ParamCount, WorkedExamples) {
  Var<double> w(Tensor<double>({16, 3, 3, 3})), b(Tensor<double>({16}));
  EXPECT_EQ(param_count(std::vector<NamedParam<double>>{{"w", &w}, {"b", &b}}), 448u);
  Var<double> lw(Tensor<double>({384, 384})), lb(Tensor<double>({384}));
  EXPECT_EQ(param_count(std::vector<NamedParam<double>>{{"w", &lw}, {"b", &lb}}), 147840u);
  EXPECT_EQ(param_count(std::vector<NamedParam<double>>{}), 0u);
}

TEST(ParamCount, ExcludesRunningStatistics) {
  Model<float> m(toy_config(), 0);
  std::size_t buffers = 0;
  for (auto& b : m.buffers()) buffers += b.tensor->size();
  EXPECT_GT(buffers, 0u);
  std::size_t manual = 0;
  for (auto& p : m.parameters()) manual += p.var->size();
  EXPECT_EQ(m.param_count(), manual);
}

TEST(ParamCount, FourBlock384NearReportedSize) {
  Model<float> m(cifar_4_384(100), 0);
  const double millions = static_cast<double>(m.param_count()) / 1e6;
  EXPECT_NEAR(millions, 9.32, 0.932);
}
