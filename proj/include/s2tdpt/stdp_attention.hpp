#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>

#include "s2tdpt/lif.hpp"
#include "s2tdpt/nn.hpp"
#include "s2tdpt/probe.hpp"

namespace s2tdpt {

// Hyperparameters of the STDP self-attention block. Scores take the form
// w_offset + sign * a_stdp * exp(-|dt| / tau_stdp) and must stay in (0, 1).
struct StdpAttentionConfig {
  std::size_t heads = 8;
  double a_stdp = 0.4;
  double tau_stdp = 0.5;
  double w_offset = 0.5;
  double t_max = 1.0;
  double scale = 0.125;

  void validate() const {
    require(heads >= 1, ErrorCategory::config, "attention: heads must be positive");
    require(a_stdp > 0.0 && tau_stdp > 0.0 && t_max > 0.0 && scale > 0.0, ErrorCategory::config,
            "attention: a_stdp, tau_stdp, t_max and scale must be positive");
    // The lower bound w_offset - a_stdp is attained at dt == 0, hence strict.
    require(a_stdp < w_offset, ErrorCategory::config, "attention: need a_stdp < w_offset so scores stay above 0");
    require(w_offset + a_stdp <= 1.0, ErrorCategory::config,
            "attention: need w_offset + a_stdp <= 1 so scores stay below 1");
  }

  void validate(std::size_t embed_dim) const {
    validate();
    require(embed_dim % heads == 0, ErrorCategory::config,
            "attention: embed dim " + std::to_string(embed_dim) + " not divisible by " + std::to_string(heads) +
                " heads");
  }

  std::pair<double, double> score_bounds() const { return {w_offset - a_stdp, w_offset + a_stdp}; }

  friend bool operator==(const StdpAttentionConfig&, const StdpAttentionConfig&) = default;
};

// [G, N, D] -> [G, H, N, D/H]
template <class T>
Var<T> head_split(const Var<T>& x, std::size_t heads) {
  require(x.value().rank() >= 2, ErrorCategory::contract, "head_split: need [.., N, D]");
  const std::size_t D = x.shape().back(), N = x.shape()[x.value().rank() - 2];
  require(heads >= 1 && D % heads == 0, ErrorCategory::contract,
          "head_split: D=" + std::to_string(D) + " not divisible by H=" + std::to_string(heads));
  const std::size_t G = x.size() / (N * D), dh = D / heads;
  Shape out(x.shape().begin(), x.shape().end() - 2);
  out.insert(out.end(), {heads, N, dh});
  return swap_axes(x, G, N, heads, dh, std::move(out));
}

// [G, H, N, Dh] -> [G, N, H*Dh]
template <class T>
Var<T> head_merge(const Var<T>& x) {
  require(x.value().rank() >= 3, ErrorCategory::contract, "head_merge: need [.., H, N, Dh]");
  const std::size_t r = x.value().rank();
  const std::size_t H = x.shape()[r - 3], N = x.shape()[r - 2], dh = x.shape()[r - 1];
  const std::size_t G = x.size() / (H * N * dh);
  Shape out(x.shape().begin(), x.shape().end() - 3);
  out.insert(out.end(), {N, H * dh});
  return swap_axes(x, G, H, N, dh, std::move(out));
}

// Per-token spike counts over the feature axis: [.., N, Dh] -> [.., N].
template <class T>
Var<T> token_rates(const Var<T>& spikes) {
  require(spikes.value().is_binary(), ErrorCategory::contract, "token_rates: input spikes must be binary");
  const std::size_t dh = spikes.shape().back();
  Shape out(spikes.shape().begin(), spikes.shape().end() - 1);
  return sum_last(spikes, dh, std::move(out));
}

// t = t_max * (1 - r / d_h). Higher rates fire earlier.
template <class T>
Var<T> token_latencies(const Var<T>& rates, std::size_t d_h, double t_max) {
  require(d_h >= 1 && t_max > 0.0, ErrorCategory::contract, "token_latencies: need d_h >= 1 and t_max > 0");
  for (T r : rates.value().data())
    require(r >= T{0} && r <= static_cast<T>(d_h), ErrorCategory::contract,
            "token_latencies: rate " + std::to_string(static_cast<double>(r)) + " outside [0, " +
                std::to_string(d_h) + "]");
  return affine(rates, static_cast<T>(-t_max / static_cast<double>(d_h)), static_cast<T>(t_max));
}

// dt[.., i, j] = t_q[.., i] - t_k[.., j]
template <class T>
Var<T> timing_diff(const Var<T>& t_q, const Var<T>& t_k) {
  require(t_q.shape() == t_k.shape() && t_q.value().rank() >= 1, ErrorCategory::contract,
          "timing_diff: shape mismatch " + shape_str(t_q.shape()) + " vs " + shape_str(t_k.shape()));
  const std::size_t N = t_q.shape().back(), G = t_q.size() / N;
  Shape out = t_q.shape();
  out.push_back(N);
  Tensor<T> dt(std::move(out));
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j) dt[(g * N + i) * N + j] = t_q.value()[g * N + i] - t_k.value()[g * N + j];
  return make_op<T>(std::move(dt), "timing_diff", {t_q, t_k}, [G, N](Node<T>& self) {
    const bool nq = self.parent_needs_grad(0), nk = self.parent_needs_grad(1);
    T* gq = nq ? self.parents[0]->grad_buffer().raw() : nullptr;
    T* gk = nk ? self.parents[1]->grad_buffer().raw() : nullptr;
    for (std::size_t g = 0; g < G; ++g)
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) {
          const T up = self.grad[(g * N + i) * N + j];
          if (nq) gq[g * N + i] += up;
          if (nk) gk[g * N + j] -= up;
        }
  });
}

// f = a_stdp * exp(-|dt| / tau). Not differentiable at dt == 0; the
// subgradient 0 is used there.
template <class T>
Var<T> stdp_kernel(const Var<T>& dt, double a_stdp, double tau_stdp) {
  require(a_stdp > 0.0 && tau_stdp > 0.0, ErrorCategory::contract, "stdp_kernel: a_stdp and tau must be positive");
  const T a = static_cast<T>(a_stdp), tau = static_cast<T>(tau_stdp);
  Tensor<T> f(dt.shape());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = a * std::exp(-std::abs(dt.value()[i]) / tau);
  return make_op<T>(std::move(f), "stdp_kernel", {dt}, [tau](Node<T>& self) {
    const auto& d = self.parents[0]->value;
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T sgn = d[i] > T{0} ? T{1} : (d[i] < T{0} ? T{-1} : T{0});
      g[i] -= self.grad[i] * sgn * self.value[i] / tau;
    }
  });
}

// dw = +f where dt < 0, -f where dt >= 0. The branch sign is a constant for
// differentiation; gradient flows through f only.
template <class T>
Var<T> synaptic_update(const Var<T>& dt, const Var<T>& f) {
  require(dt.shape() == f.shape(), ErrorCategory::contract, "synaptic_update: shape mismatch");
  Tensor<T> sign(dt.shape());
  Tensor<T> dw(dt.shape());
  for (std::size_t i = 0; i < dw.size(); ++i) {
    sign[i] = dt.value()[i] < T{0} ? T{1} : T{-1};
    dw[i] = sign[i] * f.value()[i];
  }
  return make_op<T>(std::move(dw), "synaptic_update", {f}, [sign = std::move(sign)](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * sign[i];
  });
}

// A = dw + w_offset. No normalisation follows.
template <class T>
Var<T> attention_scores(const Var<T>& dw, double w_offset) {
  return add_scalar(dw, static_cast<T>(w_offset));
}

// out[.., i, d] = s * sum_{j : V[.., j, d] = 1} A[.., i, j]
// V is binary, so the product is an accumulation of selected scores.
template <class T>
Var<T> attention_apply(const Var<T>& scores, const Var<T>& v, double s) {
  require(scores.value().rank() >= 2 && v.value().rank() >= 2, ErrorCategory::contract,
          "attention_apply: need [.., N, N] scores and [.., N, Dh] values");
  const std::size_t N = scores.shape().back(), dh = v.shape().back();
  require(scores.shape()[scores.value().rank() - 2] == N && v.shape()[v.value().rank() - 2] == N,
          ErrorCategory::contract, "attention_apply: token count mismatch");
  const std::size_t G = scores.size() / (N * N);
  require(v.size() == G * N * dh, ErrorCategory::contract,
          "attention_apply: score batch " + shape_str(scores.shape()) + " vs values " + shape_str(v.shape()));
  require(v.value().is_binary(), ErrorCategory::contract, "attention_apply: values must be binary spikes");
  const T sc = static_cast<T>(s);
  Tensor<T> out(v.shape());
  for (std::size_t g = 0; g < G; ++g) {
    const T* a = scores.value().raw() + g * N * N;
    const T* vv = v.value().raw() + g * N * dh;
    T* o = out.raw() + g * N * dh;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        const T aij = a[i * N + j];
        const T* vrow = vv + j * dh;
        T* orow = o + i * dh;
        for (std::size_t d = 0; d < dh; ++d)
          if (vrow[d] != T{0}) orow[d] += aij;
      }
    for (std::size_t i = 0; i < N * dh; ++i) o[i] *= sc;
  }
  return make_op<T>(std::move(out), "attention_apply", {scores, v}, [G, N, dh, sc](Node<T>& self) {
    const bool na = self.parent_needs_grad(0), nv = self.parent_needs_grad(1);
    const T* a = self.parents[0]->value.raw();
    const T* vv = self.parents[1]->value.raw();
    T* ga = na ? self.parents[0]->grad_buffer().raw() : nullptr;
    T* gv = nv ? self.parents[1]->grad_buffer().raw() : nullptr;
    for (std::size_t g = 0; g < G; ++g)
      for (std::size_t i = 0; i < N; ++i) {
        const T* go = self.grad.raw() + (g * N + i) * dh;
        for (std::size_t j = 0; j < N; ++j) {
          const T* vrow = vv + (g * N + j) * dh;
          if (na) {
            T acc{0};
            for (std::size_t d = 0; d < dh; ++d) acc += go[d] * vrow[d];
            ga[(g * N + i) * N + j] += sc * acc;
          }
          if (nv) {
            const T aij = sc * a[(g * N + i) * N + j];
            T* gvr = gv + (g * N + j) * dh;
            for (std::size_t d = 0; d < dh; ++d) gvr[d] += aij * go[d];
          }
        }
      }
  });
}

// Scores from per-token counts, shared by the block forward and the
// smooth-subgraph gradient check. r_q, r_k: [.., N] counts in [0, d_h].
template <class T>
Var<T> scores_from_rates(const Var<T>& r_q, const Var<T>& r_k, std::size_t d_h, const StdpAttentionConfig& cfg) {
  Var<T> dt = timing_diff(token_latencies(r_q, d_h, cfg.t_max), token_latencies(r_k, d_h, cfg.t_max));
  return attention_scores(synaptic_update(dt, stdp_kernel(dt, cfg.a_stdp, cfg.tau_stdp)), cfg.w_offset);
}

template <class T>
void uniform_init(Var<T>& p, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (T& v : p.mutable_value().data()) v = static_cast<T>(dist(rng));
}

// Pointwise (1x1) projection followed by batch normalisation.
template <class T>
struct ProjectionBn {
  Var<T> weight;  // [out, in]
  BatchNorm<T> bn;

  ProjectionBn() = default;
  ProjectionBn(std::size_t in, std::size_t out, std::mt19937_64& rng)
      : weight(Tensor<T>({out, in}), true), bn(out) {
    uniform_init(weight, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  }

  // x: [.., in] -> [.., out]
  Var<T> operator()(const Var<T>& x, bool training) {
    Var<T> y = linear(x, weight);
    return batch_norm(y, bn, y.size() / bn.channels(), 1, training);
  }
};

template <class T>
struct AttentionWeights {
  ProjectionBn<T> q, k, v, proj;

  AttentionWeights() = default;
  AttentionWeights(std::size_t dim, std::mt19937_64& rng)
      : q(dim, dim, rng), k(dim, dim, rng), v(dim, dim, rng), proj(dim, dim, rng) {}
};

template <class T>
struct QkvSpikes {
  Var<T> q, k, v;  // each [T, B, N, D], binary
};

// Spiking neurons over a [T, ...] membrane tensor, keeping the input shape.
template <class T>
Var<T> spiking_neuron(const Var<T>& membrane, const LifConfig& lif, ForwardProbe* probe) {
  Var<T> s = lif_sequence(membrane, lif);
  if (probe) {
    probe->tap_spikes(s.value());
    probe->min_threshold_margin =
        std::min(probe->min_threshold_margin, lif_threshold_margin(membrane.value(), lif));
  }
  return s;
}

template <class T>
QkvSpikes<T> project_qkv(const Var<T>& x, AttentionWeights<T>& w, const LifConfig& lif, bool training,
                         ForwardProbe* probe = nullptr, const std::string& prefix = "attn") {
  require(x.value().rank() == 4, ErrorCategory::contract, "project_qkv: input must be [T, B, N, D]");
  require(x.value().is_binary(), ErrorCategory::contract, "project_qkv: input must be binary spikes");
  const std::size_t N = x.shape()[2], D = x.shape()[3];
  if (probe) {
    const auto flops = static_cast<std::uint64_t>(N * D * D);
    probe->tap_layer(prefix + ".q", LayerKind::linear, flops, x.value(), false);
    probe->tap_layer(prefix + ".k", LayerKind::linear, flops, x.value(), false);
    probe->tap_layer(prefix + ".v", LayerKind::linear, flops, x.value(), false);
  }
  auto branch = [&](ProjectionBn<T>& p) {
    Var<T> m = p(x, training);
    return spiking_neuron(m, lif, probe);
  };
  return {branch(w.q), branch(w.k), branch(w.v)};
}

// STDP self-attention block. x: [T, B, N, D] binary spikes. Returns the
// post-BN membrane contribution [T, B, N, D]. Scores are recomputed
// independently at every timestep.
template <class T>
Var<T> s2tdpsa_forward(const Var<T>& x, const StdpAttentionConfig& cfg, const LifConfig& lif,
                       AttentionWeights<T>& w, bool training, ForwardProbe* probe = nullptr,
                       std::size_t layer = 0) {
  require(x.value().rank() == 4, ErrorCategory::contract, "s2tdpsa_forward: input must be [T, B, N, D]");
  const std::size_t steps = x.shape()[0], B = x.shape()[1], N = x.shape()[2], D = x.shape()[3];
  cfg.validate(D);
  const std::size_t H = cfg.heads, dh = D / H, G = steps * B;
  const std::string prefix = "block" + std::to_string(layer) + ".attn";

  QkvSpikes<T> qkv = project_qkv(x, w, lif, training, probe, prefix);
  Var<T> qh = head_split(reshape(qkv.q, {G, N, D}), H);
  Var<T> kh = head_split(reshape(qkv.k, {G, N, D}), H);
  Var<T> vh = head_split(reshape(qkv.v, {G, N, D}), H);

  Var<T> scores = scores_from_rates(token_rates(qh), token_rates(kh), dh, cfg);  // [G, H, N, N]
  if (probe) {
    probe->tap_layer(prefix + ".apply", LayerKind::attention_apply, static_cast<std::uint64_t>(H * N * N * dh),
                     vh.value(), false);
    if (probe->record_attention) {
      AttentionDump dump{layer, {steps, B, H, N, N}, {}};
      dump.values.assign(scores.value().data().begin(), scores.value().data().end());
      probe->attention.push_back(std::move(dump));
    }
  }
  Var<T> mixed = head_merge(attention_apply(scores, vh, cfg.scale));  // [G, N, D]
  Var<T> spikes = spiking_neuron(reshape(mixed, {steps, B, N, D}), lif, probe);
  if (probe) {
    probe->tap_block_spikes(layer, spikes.value());
    probe->tap_layer(prefix + ".proj", LayerKind::linear, static_cast<std::uint64_t>(N * D * D), spikes.value(),
                     false);
  }
  return w.proj(spikes, training);
}

}  // namespace s2tdpt
