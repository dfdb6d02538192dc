#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "s2tdpt/tensor.hpp"

namespace s2tdpt {

enum class LayerKind { conv, linear, attention_apply, other };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::linear: return "linear";
    case LayerKind::attention_apply: return "attention_apply";
    case LayerKind::other: return "other";
  }
  return "other";
}

// Input statistics for one weight-bearing layer, accumulated over every
// forward pass that ran with the probe attached.
struct LayerTap {
  std::string name;
  LayerKind kind = LayerKind::other;
  std::uint64_t flops = 0;  // MACs per sample per timestep
  double input_sum = 0.0;
  double input_count = 0.0;
  bool mac_costed = false;  // consumes real-valued input (the encoding conv)
  bool all_binary = true;

  double firing_rate() const { return input_count > 0 ? input_sum / input_count : 0.0; }
};

// Attention score tensor of one encoder block, axis order [t, b, h, i, j].
struct AttentionDump {
  std::size_t layer = 0;
  Shape shape;
  std::vector<double> values;
};

// Optional observer handed to a forward pass. Never affects the computation.
class ForwardProbe {
 public:
  bool record_attention = false;

  std::vector<LayerTap> layers;
  std::size_t sn_sites = 0;
  std::size_t sn_non_binary = 0;
  // Closest approach of any spiking-neuron membrane to its threshold.
  double min_threshold_margin = std::numeric_limits<double>::infinity();
  std::vector<AttentionDump> attention;
  // Per encoder block: spike rate of the attention spiking neurons for each
  // (sample, token), averaged over timesteps and channels. Layout [b * N + n].
  std::vector<std::vector<double>> block_token_rates;
  std::size_t token_grid_h = 0, token_grid_w = 0;

  template <class T>
  void tap_layer(const std::string& name, LayerKind kind, std::uint64_t flops, const Tensor<T>& input,
                 bool mac_costed) {
    LayerTap* tap = nullptr;
    for (auto& l : layers)
      if (l.name == name) tap = &l;
    if (!tap) {
      layers.push_back(LayerTap{name, kind, flops, 0.0, 0.0, mac_costed, true});
      tap = &layers.back();
    }
    for (T v : input.data()) tap->input_sum += static_cast<double>(v);
    tap->input_count += static_cast<double>(input.size());
    if (!mac_costed && !input.is_binary()) tap->all_binary = false;
  }

  template <class T>
  void tap_spikes(const Tensor<T>& spikes) {
    ++sn_sites;
    if (!spikes.is_binary()) ++sn_non_binary;
  }

  // spikes laid out [T, B, N, D].
  template <class T>
  void tap_block_spikes(std::size_t block, const Tensor<T>& spikes) {
    const std::size_t steps = spikes.dim(0), B = spikes.dim(1), N = spikes.dim(2), D = spikes.dim(3);
    if (block_token_rates.size() <= block) block_token_rates.resize(block + 1);
    auto& rates = block_token_rates[block];
    rates.assign(B * N, 0.0);
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t n = 0; n < N; ++n) {
          const T* p = spikes.raw() + ((t * B + b) * N + n) * D;
          double s = 0.0;
          for (std::size_t d = 0; d < D; ++d) s += static_cast<double>(p[d]);
          rates[b * N + n] += s;
        }
    for (double& r : rates) r /= static_cast<double>(steps * D);
  }
};

}  // namespace s2tdpt
