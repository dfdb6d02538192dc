#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "s2tdpt/stdp_attention.hpp"

namespace s2tdpt {

enum class SpsStageKind { spe, sped };

// One patch-splitting stage: SN -> [max-pool if SPED] -> 3x3 conv -> BN.
struct SpsStage {
  SpsStageKind kind = SpsStageKind::spe;
  std::size_t channels = 0;

  friend bool operator==(const SpsStage&, const SpsStage&) = default;
};

struct ModelConfig {
  std::size_t timesteps = 4;
  std::size_t depth = 4;
  std::size_t embed_dim = 384;
  std::size_t num_classes = 10;
  std::size_t in_channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t stem_channels = 48;
  std::vector<SpsStage> sps_stages{{SpsStageKind::spe, 96},
                                   {SpsStageKind::spe, 192},
                                   {SpsStageKind::sped, 384},
                                   {SpsStageKind::sped, 384}};
  double mlp_ratio = 4.0;
  LifConfig lif{};
  StdpAttentionConfig attention{};

  std::size_t downsampling() const {
    std::size_t f = 1;
    for (const auto& s : sps_stages)
      if (s.kind == SpsStageKind::sped) f *= 2;
    return f;
  }
  std::size_t grid_h() const { return height / downsampling(); }
  std::size_t grid_w() const { return width / downsampling(); }
  std::size_t num_tokens() const { return grid_h() * grid_w(); }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(static_cast<double>(embed_dim) * mlp_ratio); }
  std::size_t heads() const { return attention.heads; }

  void validate() const {
    require(timesteps >= 1 && depth >= 1 && embed_dim >= 1 && num_classes >= 1, ErrorCategory::config,
            "model: timesteps, depth, embed_dim and num_classes must be positive");
    require(in_channels >= 1 && height >= 1 && width >= 1 && stem_channels >= 1, ErrorCategory::config,
            "model: input extents and stem channels must be positive");
    require(!sps_stages.empty(), ErrorCategory::config, "model: at least one SPS stage is required");
    require(sps_stages.back().channels == embed_dim, ErrorCategory::config,
            "model: last SPS stage must output embed_dim channels");
    for (const auto& s : sps_stages)
      require(s.channels >= 1, ErrorCategory::config, "model: SPS stage channels must be positive");
    const std::size_t f = downsampling();
    require(height % f == 0 && width % f == 0, ErrorCategory::config,
            "model: input " + std::to_string(height) + "x" + std::to_string(width) +
                " is not divisible by the cumulative SPS downsampling " + std::to_string(f));
    require(mlp_ratio > 0.0 && hidden_dim() >= 1, ErrorCategory::config, "model: mlp_ratio must be positive");
    lif.validate();
    attention.validate(embed_dim);
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// 4 blocks, D = 384, two SPE and two SPED stages on 32x32 RGB.
inline ModelConfig cifar_4_384(std::size_t num_classes = 10) {
  ModelConfig c;
  c.num_classes = num_classes;
  c.attention.heads = 12;
  return c;
}

// Desk-scale configuration for the synthetic 16x16 shape task.
inline ModelConfig toy_config() {
  ModelConfig c;
  c.timesteps = 4;
  c.depth = 2;
  c.embed_dim = 64;
  c.num_classes = 4;
  c.height = 16;
  c.width = 16;
  c.stem_channels = 8;
  c.sps_stages = {{SpsStageKind::spe, 16}, {SpsStageKind::sped, 32}, {SpsStageKind::sped, 64}};
  c.attention.heads = 4;
  c.attention.scale = 0.5;
  return c;
}

template <class T>
struct ConvBn {
  Var<T> weight;  // [out, in, 3, 3]
  BatchNorm<T> bn;

  ConvBn() = default;
  ConvBn(std::size_t in, std::size_t out, std::mt19937_64& rng) : weight(Tensor<T>({out, in, 3, 3}), true), bn(out) {
    uniform_init(weight, 1.0 / std::sqrt(static_cast<double>(in * 9)), rng);
  }

  // x: [G, C, H, W]
  Var<T> operator()(const Var<T>& x, bool training) {
    Var<T> y = conv2d(x, weight);
    return batch_norm(y, bn, y.shape()[0], y.shape()[2] * y.shape()[3], training);
  }
};

template <class T>
struct EncoderBlock {
  AttentionWeights<T> attn;
  ProjectionBn<T> fc1, fc2;

  EncoderBlock() = default;
  EncoderBlock(std::size_t dim, std::size_t hidden, std::mt19937_64& rng)
      : attn(dim, rng), fc1(dim, hidden, rng), fc2(hidden, dim, rng) {}
};

template <class T>
struct NamedParam {
  std::string name;
  Var<T>* var;
};

template <class T>
struct NamedBuffer {
  std::string name;
  Tensor<T>* tensor;
};

template <class T>
std::size_t param_count(const std::vector<NamedParam<T>>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var->size();
  return n;
}

// x_temp = mean over the time axis. u: [T, B, N, D] -> [B, N, D]
template <class T>
Var<T> gtmp(const Var<T>& u) {
  require(u.value().rank() == 4 && u.shape()[0] >= 1, ErrorCategory::contract, "gtmp: need [T, B, N, D], T >= 1");
  const std::size_t steps = u.shape()[0];
  return mean_axis(u, 1, steps, u.size() / steps, {u.shape()[1], u.shape()[2], u.shape()[3]});
}

// x_final = mean over tokens. x: [B, N, D] -> [B, D]
template <class T>
Var<T> gap(const Var<T>& x) {
  require(x.value().rank() == 3 && x.shape()[1] >= 1, ErrorCategory::contract, "gap: need [B, N, D], N >= 1");
  return mean_axis(x, x.shape()[0], x.shape()[1], x.shape()[2], {x.shape()[0], x.shape()[2]});
}

template <class T>
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    stem_ = ConvBn<T>(cfg_.in_channels, cfg_.stem_channels, rng);
    std::size_t in = cfg_.stem_channels;
    for (const auto& s : cfg_.sps_stages) {
      stages_.emplace_back(in, s.channels, rng);
      in = s.channels;
    }
    for (std::size_t l = 0; l < cfg_.depth; ++l) blocks_.emplace_back(cfg_.embed_dim, cfg_.hidden_dim(), rng);
    head_weight_ = Var<T>(Tensor<T>({cfg_.num_classes, cfg_.embed_dim}), true);
    head_bias_ = Var<T>(Tensor<T>({cfg_.num_classes}), true);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg_.embed_dim));
    uniform_init(head_weight_, bound, rng);
    uniform_init(head_bias_, bound, rng);
    for (auto& p : parameters()) p.var->node()->op = p.name;
  }

  // Parameters are shared handles; copying would alias them.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  // Changing neuron constants after construction is allowed (used to probe
  // degenerate dead / saturated regimes); the architecture is fixed.
  LifConfig& lif() { return cfg_.lif; }

  // images: [G, C, H, W] with the time axis folded into G (G = T * B).
  // Returns the membrane token batch U0 laid out [T, B, N, D].
  Var<T> sps_forward(const Var<T>& images, bool training, ForwardProbe* probe = nullptr) {
    require(images.value().rank() == 4 && images.shape()[1] == cfg_.in_channels &&
                images.shape()[2] == cfg_.height && images.shape()[3] == cfg_.width,
            ErrorCategory::contract,
            "sps_forward: images " + shape_str(images.shape()) + " do not match the model input spec");
    require(images.shape()[0] % cfg_.timesteps == 0, ErrorCategory::contract,
            "sps_forward: leading axis must be timesteps * batch");
    const std::size_t steps = cfg_.timesteps, G = images.shape()[0], B = G / steps;
    std::size_t h = cfg_.height, w = cfg_.width;
    if (probe)
      probe->tap_layer("sps.stem", LayerKind::conv,
                       static_cast<std::uint64_t>(cfg_.stem_channels * h * w * cfg_.in_channels * 9), images.value(),
                       true);
    Var<T> z = stem_(images, training);
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      const std::size_t c_in = z.shape()[1];
      Var<T> s = reshape(spiking_neuron(reshape(z, {steps, z.size() / steps}), cfg_.lif, probe), z.shape());
      if (cfg_.sps_stages[i].kind == SpsStageKind::sped) {
        s = maxpool2d(s);
        h /= 2;
        w /= 2;
      }
      if (probe)
        probe->tap_layer("sps.stage" + std::to_string(i + 1), LayerKind::conv,
                         static_cast<std::uint64_t>(cfg_.sps_stages[i].channels * h * w * c_in * 9), s.value(), false);
      z = stages_[i](s, training);
    }
    const std::size_t D = cfg_.embed_dim, N = h * w;
    Var<T> tokens = swap_axes(z, G, D, N, 1, {G, N, D});
    return reshape(tokens, {steps, B, N, D});
  }

  // u: membrane [T, B, N, D] -> membrane [T, B, N, D]
  Var<T> encoder_block_forward(std::size_t l, const Var<T>& u, bool training, ForwardProbe* probe = nullptr) {
    require(l < blocks_.size(), ErrorCategory::contract, "encoder_block_forward: block index out of range");
    require(u.value().rank() == 4, ErrorCategory::contract, "encoder_block_forward: need [T, B, N, D]");
    auto& blk = blocks_[l];
    const std::string prefix = "block" + std::to_string(l);
    Var<T> s_in = spiking_neuron(u, cfg_.lif, probe);
    Var<T> u_attn = add(u, s2tdpsa_forward(s_in, cfg_.attention, cfg_.lif, blk.attn, training, probe, l));
    Var<T> m_in = spiking_neuron(u_attn, cfg_.lif, probe);
    const std::size_t N = u.shape()[2], D = u.shape()[3], hidden = cfg_.hidden_dim();
    if (probe) probe->tap_layer(prefix + ".mlp.fc1", LayerKind::linear, N * D * hidden, m_in.value(), false);
    Var<T> hid = spiking_neuron(blk.fc1(m_in, training), cfg_.lif, probe);
    if (probe) probe->tap_layer(prefix + ".mlp.fc2", LayerKind::linear, N * D * hidden, hid.value(), false);
    return add(u_attn, blk.fc2(hid, training));
  }

  // x: [B, D] -> logits [B, K]
  Var<T> head_forward(const Var<T>& x) { return linear(x, head_weight_, head_bias_); }

  // Membrane after the last encoder block, [T, B, N, D].
  Var<T> encode(const Tensor<T>& images, bool training, ForwardProbe* probe = nullptr) {
    require(images.rank() == 4, ErrorCategory::contract, "forward: images must be [B, C, H, W]");
    const std::size_t B = images.dim(0), per = images.size() / B;
    Tensor<T> rep({cfg_.timesteps * B, images.dim(1), images.dim(2), images.dim(3)});
    for (std::size_t t = 0; t < cfg_.timesteps; ++t)
      std::copy(images.raw(), images.raw() + B * per, rep.raw() + t * B * per);
    if (probe) {
      probe->token_grid_h = cfg_.grid_h();
      probe->token_grid_w = cfg_.grid_w();
    }
    Var<T> u = sps_forward(Var<T>(std::move(rep)), training, probe);
    for (std::size_t l = 0; l < blocks_.size(); ++l) u = encoder_block_forward(l, u, training, probe);
    return u;
  }

  // images: [B, C, H, W] static frames, replicated over the T timesteps.
  Var<T> forward(const Tensor<T>& images, bool training, ForwardProbe* probe = nullptr) {
    return head_forward(gap(gtmp(encode(images, training, probe))));
  }

  std::vector<NamedParam<T>> parameters() {
    std::vector<NamedParam<T>> out;
    auto conv = [&](const std::string& n, ConvBn<T>& c) {
      out.push_back({n + ".weight", &c.weight});
      out.push_back({n + ".bn.gamma", &c.bn.gamma});
      out.push_back({n + ".bn.beta", &c.bn.beta});
    };
    auto proj = [&](const std::string& n, ProjectionBn<T>& p) {
      out.push_back({n + ".weight", &p.weight});
      out.push_back({n + ".bn.gamma", &p.bn.gamma});
      out.push_back({n + ".bn.beta", &p.bn.beta});
    };
    conv("sps.stem", stem_);
    for (std::size_t i = 0; i < stages_.size(); ++i) conv("sps.stage" + std::to_string(i + 1), stages_[i]);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const std::string b = "block" + std::to_string(l);
      proj(b + ".attn.q", blocks_[l].attn.q);
      proj(b + ".attn.k", blocks_[l].attn.k);
      proj(b + ".attn.v", blocks_[l].attn.v);
      proj(b + ".attn.proj", blocks_[l].attn.proj);
      proj(b + ".mlp.fc1", blocks_[l].fc1);
      proj(b + ".mlp.fc2", blocks_[l].fc2);
    }
    out.push_back({"head.weight", &head_weight_});
    out.push_back({"head.bias", &head_bias_});
    return out;
  }

  std::vector<NamedBuffer<T>> buffers() {
    std::vector<NamedBuffer<T>> out;
    auto add_bn = [&](const std::string& n, BatchNorm<T>& bn) {
      out.push_back({n + ".bn.running_mean", &bn.running_mean});
      out.push_back({n + ".bn.running_var", &bn.running_var});
    };
    add_bn("sps.stem", stem_.bn);
    for (std::size_t i = 0; i < stages_.size(); ++i) add_bn("sps.stage" + std::to_string(i + 1), stages_[i].bn);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const std::string b = "block" + std::to_string(l);
      add_bn(b + ".attn.q", blocks_[l].attn.q.bn);
      add_bn(b + ".attn.k", blocks_[l].attn.k.bn);
      add_bn(b + ".attn.v", blocks_[l].attn.v.bn);
      add_bn(b + ".attn.proj", blocks_[l].attn.proj.bn);
      add_bn(b + ".mlp.fc1", blocks_[l].fc1.bn);
      add_bn(b + ".mlp.fc2", blocks_[l].fc2.bn);
    }
    return out;
  }

  std::size_t param_count() { return s2tdpt::param_count(parameters()); }

  void zero_grad() {
    for (auto& p : parameters()) p.var->zero_grad();
  }

 private:
  ModelConfig cfg_;
  ConvBn<T> stem_;
  std::vector<ConvBn<T>> stages_;
  std::vector<EncoderBlock<T>> blocks_;
  Var<T> head_weight_, head_bias_;
};

}  // namespace s2tdpt
