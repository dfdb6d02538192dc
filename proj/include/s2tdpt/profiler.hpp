#pragma once

#include <cstdint>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "s2tdpt/train.hpp"

namespace s2tdpt {

// 45 nm reference energies, picojoules per operation.
inline constexpr double kEnergyMacPj = 46.0;
inline constexpr double kEnergyAcPj = 0.9;

enum class LayerSpecKind { conv, linear, attention_apply, batch_norm, other };

// Shape description sufficient to count MACs for one sample and timestep.
struct LayerSpec {
  LayerSpecKind kind = LayerSpecKind::other;
  std::size_t in_channels = 0, out_channels = 0, kernel = 0;  // conv
  std::size_t out_h = 0, out_w = 0;                           // conv
  std::size_t in_features = 0, out_features = 0, tokens = 0;  // linear
  std::size_t batch = 1, heads = 0, head_dim = 0;             // attention_apply (uses tokens)
};

inline std::uint64_t flops_of_layer(const LayerSpec& s) {
  switch (s.kind) {
    case LayerSpecKind::conv:
      return static_cast<std::uint64_t>(s.out_channels) * s.out_h * s.out_w * s.kernel * s.kernel * s.in_channels;
    case LayerSpecKind::linear:
      return static_cast<std::uint64_t>(s.out_features) * s.in_features * s.tokens;
    case LayerSpecKind::attention_apply:
      return static_cast<std::uint64_t>(s.batch) * s.heads * s.tokens * s.tokens * s.head_dim;
    case LayerSpecKind::batch_norm:
      return 0;  // folded into the preceding convolution
    case LayerSpecKind::other:
      break;
  }
  fail(ErrorCategory::contract, "flops_of_layer: unknown layer kind");
}

struct LayerCostRecord {
  std::string name;
  LayerKind kind = LayerKind::other;
  std::uint64_t flops = 0;   // MACs per sample per timestep
  double firing_rate = 0.0;  // mean input spike probability
  double sops = 0.0;         // firing_rate * flops * T
  bool mac_costed = false;   // encoding layer with real-valued input
};

struct EnergyReport {
  double e_mac_pj = kEnergyMacPj;
  double e_ac_pj = kEnergyAcPj;
  std::size_t timesteps = 0;
  std::uint64_t first_layer_flops = 0;
  std::uint64_t total_flops = 0;
  double total_sops = 0.0;
  // Score construction (counts, latencies, differences, kernel, sign,
  // offset) charged as AC operations, one per entry per stage. Kept out of
  // energy_mj_snn so the convolution + attention figure stays comparable.
  double score_construction_ops = 0.0;
  double energy_mj_snn = 0.0;
  double energy_mj_snn_with_scores = 0.0;
  double energy_mj_ann = 0.0;
  double reduction_vs_ann = 0.0;
  std::vector<LayerCostRecord> layers;
  std::uint64_t seed = 0;
  std::size_t samples = 0;
};

// Layer records from probe taps. Rates come from the spikes actually fed to
// each layer.
inline std::vector<LayerCostRecord> layer_costs(const ForwardProbe& probe, std::size_t timesteps) {
  std::vector<LayerCostRecord> out;
  for (const auto& tap : probe.layers) {
    LayerCostRecord r;
    r.name = tap.name;
    r.kind = tap.kind;
    r.flops = tap.flops;
    r.mac_costed = tap.mac_costed;
    r.firing_rate = tap.mac_costed ? 0.0 : tap.firing_rate();
    r.sops = r.firing_rate * static_cast<double>(r.flops) * static_cast<double>(timesteps);
    out.push_back(std::move(r));
  }
  return out;
}

// Spike rates per counted layer over a data sample, evaluated in inference mode.
template <class T>
std::vector<LayerCostRecord> measure_firing_rates(Model<T>& model, const Dataset& sample, std::size_t max_samples,
                                                  std::size_t batch_size = 32) {
  require(sample.size() > 0, ErrorCategory::contract, "measure_firing_rates: empty sample");
  const std::size_t n = std::min(max_samples, sample.size());
  ForwardProbe probe;
  std::vector<std::size_t> idx;
  for (std::size_t lo = 0; lo < n; lo += batch_size) {
    const std::size_t hi = std::min(n, lo + batch_size);
    idx.resize(hi - lo);
    std::iota(idx.begin(), idx.end(), lo);
    model.forward(make_batch<T>(sample, idx).images, false, &probe);
  }
  return layer_costs(probe, model.config().timesteps);
}

// AC-class operations for building the score matrices, per sample.
inline double score_construction_ops(const ModelConfig& cfg) {
  const double N = static_cast<double>(cfg.num_tokens()), H = static_cast<double>(cfg.heads());
  const double dh = static_cast<double>(cfg.embed_dim / cfg.heads());
  const double per_head = 2.0 * N * dh + 2.0 * N + 4.0 * N * N;
  return static_cast<double>(cfg.depth * cfg.timesteps) * H * per_head;
}

// E_snn = E_AC * sum(SOP over spike-driven layers) + E_MAC * FLOPs(encoding conv)
// E_ann = E_MAC * sum(FLOPs)
// Results in millijoules (1 pJ = 1e-9 mJ).
inline EnergyReport energy_estimate(std::vector<LayerCostRecord> layers, std::size_t timesteps,
                                    double score_ops = 0.0) {
  require(!layers.empty() && layers.front().mac_costed, ErrorCategory::contract,
          "energy_estimate: first layer must be the RGB-encoding convolution");
  EnergyReport r;
  r.timesteps = timesteps;
  double per_step = 0.0;
  for (auto& l : layers) {
    const double base = l.mac_costed ? 0.0 : l.firing_rate * static_cast<double>(l.flops);
    l.sops = base * static_cast<double>(timesteps);
    r.total_flops += l.flops;
    if (l.mac_costed)
      r.first_layer_flops += l.flops;
    else
      per_step += base;
  }
  r.total_sops = per_step * static_cast<double>(timesteps);
  r.layers = std::move(layers);
  r.score_construction_ops = score_ops;
  r.energy_mj_snn = (r.e_ac_pj * r.total_sops + r.e_mac_pj * static_cast<double>(r.first_layer_flops)) * 1e-9;
  r.energy_mj_snn_with_scores = r.energy_mj_snn + r.e_ac_pj * score_ops * 1e-9;
  r.energy_mj_ann = r.e_mac_pj * static_cast<double>(r.total_flops) * 1e-9;
  r.reduction_vs_ann = r.energy_mj_ann > 0.0 ? 1.0 - r.energy_mj_snn / r.energy_mj_ann : 0.0;
  return r;
}

template <class T>
EnergyReport profile_model(Model<T>& model, const Dataset& sample, std::size_t max_samples, std::uint64_t seed = 0) {
  EnergyReport r = energy_estimate(measure_firing_rates(model, sample, max_samples), model.config().timesteps,
                                   score_construction_ops(model.config()));
  r.seed = seed;
  r.samples = std::min(max_samples, sample.size());
  return r;
}

// Bytes needed to hold an n x n score matrix.
inline std::uint64_t attention_memory_footprint(std::uint64_t n, std::uint64_t bytes_per_element = 4) {
  require(n >= 1, ErrorCategory::contract, "attention_memory_footprint: n must be at least 1");
  return n * n * bytes_per_element;
}

// 1024-based human-readable size ("1 MiB", "64 MiB", "1 GiB").
inline std::string format_bytes(std::uint64_t bytes) {
  const char* units[] = {"B", "KiB", "MiB", "GiB", "TiB"};
  double v = static_cast<double>(bytes);
  std::size_t u = 0;
  while (v >= 1024.0 && u < 4) {
    v /= 1024.0;
    ++u;
  }
  std::ostringstream s;
  s << std::setprecision(4) << v << " " << units[u];
  return s.str();
}

inline nlohmann::json footprint_json(const std::vector<std::uint64_t>& lengths) {
  nlohmann::json arr = nlohmann::json::array();
  for (auto n : lengths) {
    const auto b = attention_memory_footprint(n);
    arr.push_back({{"n", n}, {"bytes", b}, {"human", format_bytes(b)}});
  }
  return {{"explicit_score_matrix", arr},
          {"stdp_persistent_score_bytes", 0},
          {"note", "STDP attention keeps no persistent score matrix; scores are recomputed from spike timing"}};
}

inline nlohmann::json to_json(const EnergyReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : r.layers)
    layers.push_back({{"name", l.name},
                      {"kind", layer_kind_name(l.kind)},
                      {"flops", l.flops},
                      {"firing_rate", l.firing_rate},
                      {"sops", l.sops},
                      {"mac_costed", l.mac_costed}});
  return {{"seed", r.seed},
          {"samples", r.samples},
          {"timesteps", r.timesteps},
          {"e_mac_pj", r.e_mac_pj},
          {"e_ac_pj", r.e_ac_pj},
          {"first_layer_flops", r.first_layer_flops},
          {"total_flops", r.total_flops},
          {"total_sops", r.total_sops},
          {"score_construction_ops", r.score_construction_ops},
          {"energy_mj_snn", r.energy_mj_snn},
          {"energy_mj_snn_with_scores", r.energy_mj_snn_with_scores},
          {"energy_mj_ann", r.energy_mj_ann},
          {"reduction_vs_ann", r.reduction_vs_ann},
          {"reference", {{"cifar100_4_384_energy_mj", 0.49}, {"cifar100_4_384_reduction", 0.8847}}},
          {"layers", layers}};
}

inline void write_energy_table(std::ostream& out, const EnergyReport& r) {
  out << std::left << std::setw(24) << "layer" << std::setw(17) << "kind" << std::right << std::setw(14) << "flops"
      << std::setw(10) << "rate" << std::setw(16) << "sops" << "\n";
  for (const auto& l : r.layers) {
    out << std::left << std::setw(24) << l.name << std::setw(17) << layer_kind_name(l.kind) << std::right
        << std::setw(14) << l.flops << std::setw(10) << std::fixed << std::setprecision(4)
        << (l.mac_costed ? 0.0 : l.firing_rate) << std::setw(16) << std::setprecision(0) << l.sops
        << (l.mac_costed ? "  (MAC)" : "") << "\n";
  }
  out << std::defaultfloat << std::setprecision(6);
  out << "timesteps              " << r.timesteps << "\n"
      << "first-layer MACs       " << r.first_layer_flops << "\n"
      << "total SOPs             " << r.total_sops << "\n"
      << "score-construction ACs " << r.score_construction_ops << "\n"
      << "energy SNN (mJ)        " << r.energy_mj_snn << "\n"
      << "energy SNN+scores (mJ) " << r.energy_mj_snn_with_scores << "\n"
      << "energy ANN (mJ)        " << r.energy_mj_ann << "\n"
      << "reduction vs ANN       " << r.reduction_vs_ann * 100.0 << " %\n";
}

}  // namespace s2tdpt
