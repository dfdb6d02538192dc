#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "s2tdpt/autodiff.hpp"

namespace s2tdpt {

// 2-D convolution, stride 1, zero "same" padding of k/2.
// x: [B, C, H, W], weight: [O, C, k, k], bias: [O] or undefined.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias = Var<T>()) {
  require(x.value().rank() == 4 && weight.value().rank() == 4, ErrorCategory::contract,
          "conv2d: expects [B,C,H,W] input and [O,C,k,k] weight");
  const std::size_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::size_t O = weight.shape()[0], k = weight.shape()[2];
  require(weight.shape()[1] == C && weight.shape()[3] == k && k % 2 == 1, ErrorCategory::contract,
          "conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
  const std::size_t pad = k / 2, HW = H * W, CKK = C * k * k;

  auto im2col = [=](const T* img, T* cols) {
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) {
        T* row = cols + (y * W + xx) * CKK;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t ky = 0; ky < k; ++ky) {
            const long iy = static_cast<long>(y + ky) - static_cast<long>(pad);
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long ix = static_cast<long>(xx + kx) - static_cast<long>(pad);
              *row++ = (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W))
                           ? T{0}
                           : img[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)];
            }
          }
      }
  };

  Tensor<T> out({B, O, H, W});
  const auto wt = kernels::transpose(weight.value().raw(), O, CKK);  // [CKK, O]
  std::vector<T> cols(HW * CKK), yt(HW * O);
  for (std::size_t b = 0; b < B; ++b) {
    im2col(x.value().raw() + b * C * HW, cols.data());
    std::fill(yt.begin(), yt.end(), T{0});
    kernels::gemm_nn(HW, O, CKK, cols.data(), wt.data(), yt.data());
    T* dst = out.raw() + b * O * HW;
    for (std::size_t o = 0; o < O; ++o) {
      const T bo = bias.defined() ? bias.value()[o] : T{0};
      for (std::size_t p = 0; p < HW; ++p) dst[o * HW + p] = yt[p * O + o] + bo;
    }
  }

  std::vector<Var<T>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_op<T>(std::move(out), "conv2d", std::move(parents), [=](Node<T>& self) {
    const bool need_x = self.parent_needs_grad(0), need_w = self.parent_needs_grad(1);
    const bool need_b = self.parents.size() > 2 && self.parent_needs_grad(2);
    const T* xin = self.parents[0]->value.raw();
    const T* w = self.parents[1]->value.raw();
    std::vector<T> cols(HW * CKK), dyt(HW * O), dcols(HW * CKK), dwt(need_w ? CKK * O : 0);
    for (std::size_t b = 0; b < B; ++b) {
      const T* gy = self.grad.raw() + b * O * HW;
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t p = 0; p < HW; ++p) dyt[p * O + o] = gy[o * HW + p];
      if (need_b) {
        T* gb = self.parents[2]->grad_buffer().raw();
        for (std::size_t o = 0; o < O; ++o)
          for (std::size_t p = 0; p < HW; ++p) gb[o] += gy[o * HW + p];
      }
      if (need_w) {
        im2col(xin + b * C * HW, cols.data());
        kernels::gemm_tn(CKK, O, HW, cols.data(), dyt.data(), dwt.data());
      }
      if (need_x) {
        std::fill(dcols.begin(), dcols.end(), T{0});
        kernels::gemm_nn(HW, CKK, O, dyt.data(), w, dcols.data());
        T* gx = self.parents[0]->grad_buffer().raw() + b * C * HW;
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t xx = 0; xx < W; ++xx) {
            const T* row = dcols.data() + (y * W + xx) * CKK;
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t ky = 0; ky < k; ++ky) {
                const long iy = static_cast<long>(y + ky) - static_cast<long>(pad);
                for (std::size_t kx = 0; kx < k; ++kx, ++row) {
                  const long ix = static_cast<long>(xx + kx) - static_cast<long>(pad);
                  if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                  gx[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)] += *row;
                }
              }
          }
      }
    }
    if (need_w) {
      T* gw = self.parents[1]->grad_buffer().raw();
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t j = 0; j < CKK; ++j) gw[o * CKK + j] += dwt[j * O + o];
    }
  });
}

// 2x2 max-pool, stride 2. Gradient goes to the arg-max; ties resolve to the
// lowest index in row-major window order.
template <class T>
Var<T> maxpool2d(const Var<T>& x) {
  require(x.value().rank() == 4, ErrorCategory::contract, "maxpool2d: expects [B,C,H,W]");
  const std::size_t BC = x.shape()[0] * x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  require(H % 2 == 0 && W % 2 == 0, ErrorCategory::config,
          "maxpool2d: spatial size " + std::to_string(H) + "x" + std::to_string(W) + " is not divisible by 2");
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor<T> out({x.shape()[0], x.shape()[1], Ho, Wo});
  std::vector<std::uint32_t> argmax(out.size());
  const T* src = x.value().raw();
  for (std::size_t bc = 0; bc < BC; ++bc)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t xx = 0; xx < Wo; ++xx) {
        std::size_t best = (bc * H + 2 * y) * W + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (bc * H + 2 * y + dy) * W + 2 * xx + dx;
            if (src[idx] > src[best]) best = idx;
          }
        const std::size_t o = (bc * Ho + y) * Wo + xx;
        out[o] = src[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
  return make_op<T>(std::move(out), "maxpool2d", {x}, [argmax = std::move(argmax)](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
  });
}

// Batch normalization parameters plus running statistics. The running
// statistics are buffers, not learnable parameters.
template <class T>
struct BatchNorm {
  Var<T> gamma;
  Var<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels)
      : gamma(Tensor<T>({channels}, T{1}), true),
        beta(Tensor<T>({channels}, T{0}), true),
        running_mean({channels}, T{0}),
        running_var({channels}, T{1}) {}

  std::size_t channels() const { return running_mean.size(); }
};

// x viewed as [outer, C, inner]; statistics are per channel over outer*inner.
template <class T>
Var<T> batch_norm(const Var<T>& x, BatchNorm<T>& bn, std::size_t outer, std::size_t inner, bool training) {
  const std::size_t C = bn.channels();
  require(outer * C * inner == x.size(), ErrorCategory::contract,
          "batch_norm: " + std::to_string(C) + " channels incompatible with " + shape_str(x.shape()));
  const std::size_t count = outer * inner;
  std::vector<T> mean(C), inv_std(C);
  const T* src = x.value().raw();
  if (training) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0, ss = 0.0;
      for (std::size_t o = 0; o < outer; ++o) {
        const T* p = src + (o * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      for (std::size_t o = 0; o < outer; ++o) {
        const T* p = src + (o * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      const double var = ss / static_cast<double>(count);
      mean[c] = static_cast<T>(m);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(bn.eps)));
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      bn.running_mean[c] = (T{1} - bn.momentum) * bn.running_mean[c] + bn.momentum * static_cast<T>(m);
      bn.running_var[c] = (T{1} - bn.momentum) * bn.running_var[c] + bn.momentum * static_cast<T>(unbiased);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = bn.running_mean[c];
      inv_std[c] = T{1} / std::sqrt(bn.running_var[c] + bn.eps);
    }
  }
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (o * C + c) * inner;
      const T g = bn.gamma.value()[c], b = bn.beta.value()[c];
      for (std::size_t i = 0; i < inner; ++i) {
        const T h = (src[base + i] - mean[c]) * inv_std[c];
        xhat[base + i] = h;
        out[base + i] = g * h + b;
      }
    }
  return make_op<T>(
      std::move(out), "batch_norm", {x, bn.gamma, bn.beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), outer, inner, C, count, training](Node<T>& self) {
        const T* gy = self.grad.raw();
        std::vector<T> sum_g(C, T{0}), sum_gx(C, T{0});
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (o * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              sum_g[c] += gy[base + i];
              sum_gx[c] += gy[base + i] * xhat[base + i];
            }
          }
        if (self.parent_needs_grad(1)) {
          T* gg = self.parents[1]->grad_buffer().raw();
          for (std::size_t c = 0; c < C; ++c) gg[c] += sum_gx[c];
        }
        if (self.parent_needs_grad(2)) {
          T* gb = self.parents[2]->grad_buffer().raw();
          for (std::size_t c = 0; c < C; ++c) gb[c] += sum_g[c];
        }
        if (self.parent_needs_grad(0)) {
          const T* gamma = self.parents[1]->value.raw();
          T* gx = self.parents[0]->grad_buffer().raw();
          const T n = static_cast<T>(count);
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t base = (o * C + c) * inner;
              const T k = gamma[c] * inv_std[c];
              for (std::size_t i = 0; i < inner; ++i) {
                if (training)
                  gx[base + i] += k * (gy[base + i] - sum_g[c] / n - xhat[base + i] * sum_gx[c] / n);
                else
                  gx[base + i] += k * gy[base + i];
              }
            }
        }
      });
}

// Folds an inference-mode BN into the preceding convolution so that
// conv(x; W', b') == BN(conv(x; W, b)). Weight is [O, ...] with any trailing
// extent. Empty bias is treated as zero.
template <class T>
struct FoldedConv {
  Tensor<T> weight;
  Tensor<T> bias;
};

template <class T>
FoldedConv<T> fold_bn_into_conv(const Tensor<T>& weight, const Tensor<T>& bias, const Tensor<T>& gamma,
                                const Tensor<T>& beta, const Tensor<T>& running_mean,
                                const Tensor<T>& running_var, T eps) {
  require(weight.rank() >= 1, ErrorCategory::contract, "fold_bn_into_conv: weight needs an output axis");
  const std::size_t O = weight.dim(0);
  require(gamma.size() == O && beta.size() == O && running_mean.size() == O && running_var.size() == O,
          ErrorCategory::contract, "fold_bn_into_conv: BN parameter length mismatch");
  require(bias.size() == 0 || bias.size() == O, ErrorCategory::contract, "fold_bn_into_conv: bias length mismatch");
  const std::size_t per = weight.size() / O;
  FoldedConv<T> f{weight, Tensor<T>({O})};
  for (std::size_t o = 0; o < O; ++o) {
    require(running_var[o] > T{0}, ErrorCategory::contract,
            "fold_bn_into_conv: channel " + std::to_string(o) + " has non-positive running variance");
    const T k = gamma[o] / std::sqrt(running_var[o] + eps);
    for (std::size_t j = 0; j < per; ++j) f.weight[o * per + j] = weight[o * per + j] * k;
    const T b = bias.size() ? bias[o] : T{0};
    f.bias[o] = (b - running_mean[o]) * k + beta[o];
  }
  return f;
}

}  // namespace s2tdpt
