#include <gtest/gtest.h>

#include <sstream>

#include "s2tdpt/profiler.hpp"

using namespace s2tdpt;

namespace {

LayerSpec conv_spec(std::size_t c, std::size_t o, std::size_t k, std::size_t h, std::size_t w) {
  LayerSpec s;
  s.kind = LayerSpecKind::conv;
  s.in_channels = c;
  s.out_channels = o;
  s.kernel = k;
  s.out_h = h;
  s.out_w = w;
  return s;
}

std::vector<LayerCostRecord> three_layers(double rate) {
  return {{"stem", LayerKind::conv, 1000, 0.0, 0.0, true},
          {"stage1", LayerKind::conv, 2000, rate, 0.0, false},
          {"fc", LayerKind::linear, 500, rate / 2, 0.0, false}};
}

}  // namespace

TEST(Flops, ConvExample) { EXPECT_EQ(flops_of_layer(conv_spec(3, 16, 3, 32, 32)), 442368u); }

TEST(Flops, LinearExample) {
  LayerSpec s;
  s.kind = LayerSpecKind::linear;
  s.in_features = s.out_features = 384;
  s.tokens = 64;
  EXPECT_EQ(flops_of_layer(s), 9437184u);
}

TEST(Flops, AttentionApplyAndBatchNorm) {
  LayerSpec s;
  s.kind = LayerSpecKind::attention_apply;
  s.heads = 12;
  s.tokens = 64;
  s.head_dim = 32;
  EXPECT_EQ(flops_of_layer(s), 12u * 64 * 64 * 32);
  LayerSpec bn;
  bn.kind = LayerSpecKind::batch_norm;
  bn.in_channels = 384;
  EXPECT_EQ(flops_of_layer(bn), 0u);
}

TEST(Flops, UnknownKindIsContractError) { EXPECT_THROW(flops_of_layer(LayerSpec{}), Error); }

TEST(FiringRate, TapAveragesInputs) {
  ForwardProbe p;
  p.tap_layer("a", LayerKind::conv, 10, Tensor<double>({4}, 0.0), false);
  p.tap_layer("b", LayerKind::conv, 10, Tensor<double>({4}, 1.0), false);
  p.tap_layer("c", LayerKind::conv, 10, Tensor<double>({4}, {1, 0, 1, 0}), false);
  p.tap_layer("c", LayerKind::conv, 10, Tensor<double>({2}, {1, 0}), false);
  EXPECT_EQ(p.layers[0].firing_rate(), 0.0);
  EXPECT_EQ(p.layers[1].firing_rate(), 1.0);
  EXPECT_EQ(p.layers[2].firing_rate(), 0.5);
}

TEST(FiringRate, ModelRatesInUnitInterval) {
  const Dataset d = gen_synthetic(1, 4);
  Model<float> m(toy_config(), 1);
  const auto layers = measure_firing_rates(m, d, 16);
  ASSERT_FALSE(layers.empty());
  EXPECT_TRUE(layers.front().mac_costed);
  for (const auto& l : layers) {
    EXPECT_GE(l.firing_rate, 0.0) << l.name;
    EXPECT_LE(l.firing_rate, 1.0) << l.name;
    EXPECT_GT(l.flops, 0u) << l.name;
  }
}

TEST(Energy, WorkedExample) {
  std::vector<LayerCostRecord> layers{{"stem", LayerKind::conv, 0, 0.0, 0.0, true},
                                      {"x", LayerKind::linear, 1000, 0.25, 0.0, false}};
  EnergyReport r = energy_estimate(layers, 4);
  EXPECT_DOUBLE_EQ(r.total_sops, 1000.0);
  EXPECT_NEAR(r.energy_mj_snn, 900e-9, 1e-20);
  EXPECT_NEAR(r.energy_mj_ann, 46.0 * 1000 * 1e-9, 1e-20);
}

TEST(Energy, ZeroFiringLeavesOnlyEncodingCost) {
  EnergyReport r = energy_estimate(three_layers(0.0), 4);
  EXPECT_EQ(r.total_sops, 0.0);
  EXPECT_DOUBLE_EQ(r.energy_mj_snn, 46.0 * 1000 * 1e-9);
}

TEST(Energy, DeadModelLeavesOnlyEncodingCost) {
  Model<float> m(toy_config(), 2);
  m.lif().v_th = 1e9;
  EnergyReport r = profile_model(m, gen_synthetic(2, 2), 8);
  EXPECT_EQ(r.total_sops, 0.0);
  EXPECT_DOUBLE_EQ(r.energy_mj_snn, kEnergyMacPj * static_cast<double>(r.first_layer_flops) * 1e-9);
}

TEST(Energy, SopsLinearInTimesteps) {
  const EnergyReport one = energy_estimate(three_layers(0.3), 1);
  for (std::size_t T = 1; T <= 16; ++T) {
    const EnergyReport r = energy_estimate(three_layers(0.3), T);
    EXPECT_EQ(r.total_sops, static_cast<double>(T) * one.total_sops);
    EXPECT_EQ(r.first_layer_flops, one.first_layer_flops);
  }
}

TEST(Energy, MonotoneInFiringRate) {
  double prev = -1.0;
  for (int i = 0; i <= 10; ++i) {
    const double e = energy_estimate(three_layers(i / 10.0), 4).energy_mj_snn;
    EXPECT_GT(e, prev);
    prev = e;
  }
}

TEST(Energy, FirstLayerMustBeEncodingConv) {
  auto layers = three_layers(0.1);
  layers.front().mac_costed = false;
  EXPECT_THROW(energy_estimate(layers, 4), Error);
  EXPECT_THROW(energy_estimate({}, 4), Error);
}

TEST(Energy, ScoreConstructionReportedSeparately) {
  const EnergyReport r = energy_estimate(three_layers(0.2), 4, 1e6);
  EXPECT_DOUBLE_EQ(r.energy_mj_snn_with_scores, r.energy_mj_snn + 0.9 * 1e6 * 1e-9);
  ModelConfig c = toy_config();
  EXPECT_DOUBLE_EQ(score_construction_ops(c), 2.0 * 4 * 4 * (2.0 * 16 * 16 + 2.0 * 16 + 4.0 * 256));
}

TEST(Footprint, WorkedExamples) {
  EXPECT_EQ(attention_memory_footprint(512), 1u << 20);
  EXPECT_EQ(attention_memory_footprint(4096), 64u << 20);
  EXPECT_EQ(attention_memory_footprint(16384), 1u << 30);
  EXPECT_EQ(format_bytes(1u << 20), "1 MiB");
  EXPECT_EQ(format_bytes(64u << 20), "64 MiB");
  EXPECT_EQ(format_bytes(1u << 30), "1 GiB");
  EXPECT_THROW(attention_memory_footprint(0), Error);
}

TEST(Footprint, QuadraticInSequenceLength) {
  for (std::uint64_t n = 1; n < 3000; n += 37) {
    EXPECT_EQ(attention_memory_footprint(2 * n), 4 * attention_memory_footprint(n));
    EXPECT_EQ(attention_memory_footprint(n, 2), n * n * 2);
  }
}

TEST(Report, JsonAndTable) {
  EnergyReport r = energy_estimate(three_layers(0.5), 4, 10.0);
  r.seed = 3;
  const auto j = to_json(r);
  EXPECT_EQ(j["seed"], 3);
  EXPECT_EQ(j["layers"].size(), 3u);
  EXPECT_EQ(j["layers"][0]["mac_costed"], true);
  EXPECT_DOUBLE_EQ(j["energy_mj_snn"].get<double>(), r.energy_mj_snn);
  EXPECT_DOUBLE_EQ(j["reference"]["cifar100_4_384_energy_mj"].get<double>(), 0.49);
  const auto f = footprint_json({512});
  EXPECT_EQ(f["explicit_score_matrix"][0]["human"], "1 MiB");
  EXPECT_EQ(f["stdp_persistent_score_bytes"], 0);
  std::ostringstream out;
  write_energy_table(out, r);
  EXPECT_NE(out.str().find("stage1"), std::string::npos);
  EXPECT_NE(out.str().find("(MAC)"), std::string::npos);
  EXPECT_NE(out.str().find("reduction vs ANN"), std::string::npos);
}
