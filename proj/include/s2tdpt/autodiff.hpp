#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "s2tdpt/tensor.hpp"

namespace s2tdpt {

// Reverse-mode autodiff over a dynamic graph. Every op that has at least one
// grad-requiring input records its parents and a backward closure; the graph
// is released when the last Var referring to its output goes away, so each
// forward call owns its own tape.
template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads self.grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return grad;
  }

  bool parent_needs_grad(std::size_t i) const { return parents[i]->requires_grad; }
};

template <class T>
class Var {
 public:
  Var() = default;

  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& op() const { return node_->op; }

  bool has_grad() const { return node_->grad.size() == node_->value.size() && node_->value.size(); }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Tensor<T>(); }

  Var detach() const { return Var(node_->value, false); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <class T>
using BackwardFn = std::function<void(Node<T>&)>;

// Builds an op result. When no parent requires grad the result is a plain
// constant and nothing is recorded.
template <class T>
Var<T> make_op(Tensor<T> value, std::string op, std::vector<Var<T>> parents, BackwardFn<T> fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = std::move(op);
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(fn);
  }
  return Var<T>(std::move(node));
}

namespace detail {

template <class T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

template <class T>
void accumulate(Node<T>& target, const Tensor<T>& g) {
  auto& buf = target.grad_buffer();
  T* d = buf.raw();
  const T* s = g.raw();
  for (std::size_t i = 0; i < buf.size(); ++i) d[i] += s[i];
}

}  // namespace detail

// Seeds d(root)/d(root) = 1 (or the given seed) and propagates to all leaves.
template <class T>
void backward(const Var<T>& root, std::optional<Tensor<T>> seed = std::nullopt) {
  if (!root.requires_grad()) return;
  Node<T>* r = root.node().get();
  if (seed) {
    require(seed->shape() == r->value.shape(), ErrorCategory::contract, "backward seed shape mismatch");
    detail::accumulate(*r, *seed);
  } else {
    require(r->value.size() == 1, ErrorCategory::contract, "backward() without seed needs a scalar root");
    r->grad_buffer()[0] += T{1};
  }
  auto order = detail::topo_order(r);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
  }
  // Interior grads are no longer needed once propagated.
  for (Node<T>* n : order)
    if (n->backward) n->grad = Tensor<T>();
}

// Walks the graph feeding `root` in evaluation order and names the first op
// whose output holds a NaN or Inf. Returns an empty string if none.
template <class T>
std::string first_non_finite(const Var<T>& root) {
  if (!root.requires_grad()) return root.value().all_finite() ? "" : root.op();
  auto order = detail::topo_order(root.node().get());
  for (std::size_t i = 0; i < order.size(); ++i)
    if (!order[i]->value.all_finite())
      return order[i]->op + " (node " + std::to_string(i) + ", shape " +
             shape_str(order[i]->value.shape()) + ")";
  return "";
}

// ---------------------------------------------------------------------------
// Small dense kernels. All are accumulate-into-C and skip zero multiplicands
// of A, which makes products with binary spike operands cheap.
namespace kernels {

// C[M,N] += A[M,K] * B[K,N]
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    const T* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = a[k];
      if (av == T{0}) continue;
      const T* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t k = 0; k < K; ++k) {
    const T* a = A + k * M;
    const T* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const T av = a[i];
      if (av == T{0}) continue;
      T* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

template <class T>
std::vector<T> transpose(const T* A, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = A[r * cols + c];
  return out;
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Elementwise and structural ops.

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), ErrorCategory::contract,
          "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_op<T>(std::move(out), "add", {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (self.parent_needs_grad(p)) detail::accumulate(*self.parents[p], self.grad);
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), ErrorCategory::contract, "sub: shape mismatch");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_op<T>(std::move(out), "sub", {a, b}, [](Node<T>& self) {
    if (self.parent_needs_grad(0)) detail::accumulate(*self.parents[0], self.grad);
    if (self.parent_needs_grad(1)) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), ErrorCategory::contract, "mul: shape mismatch");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_op<T>(std::move(out), "mul", {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!self.parent_needs_grad(p)) continue;
      const auto& other = self.parents[1 - p]->value;
      auto& g = self.parents[p]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * other[i];
    }
  });
}

// y = a * x + c
template <class T>
Var<T> affine(const Var<T>& x, T a, T c) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x.value()[i] + c;
  return make_op<T>(std::move(out), "affine", {x}, [a](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += a * self.grad[i];
  });
}

template <class T>
Var<T> scale(const Var<T>& x, T a) { return affine(x, a, T{0}); }

template <class T>
Var<T> add_scalar(const Var<T>& x, T c) { return affine(x, T{1}, c); }

template <class T>
Var<T> square(const Var<T>& x) { return mul(x, x); }

template <class T>
Var<T> exp(const Var<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.value()[i]);
  return make_op<T>(std::move(out), "exp", {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i];
  });
}

template <class T>
Var<T> sum(const Var<T>& x) {
  T s{0};
  for (T v : x.value().data()) s += v;
  return make_op<T>(Tensor<T>::scalar(s), "sum", {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T up = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up;
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.size()));
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return make_op<T>(std::move(out), "reshape", {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// Views x as [outer, m, n, inner] and returns [outer, n, m, inner].
template <class T>
Var<T> swap_axes(const Var<T>& x, std::size_t outer, std::size_t m, std::size_t n, std::size_t inner,
                 Shape out_shape) {
  require(outer * m * n * inner == x.size() && numel(out_shape) == x.size(), ErrorCategory::contract,
          "swap_axes: extents do not match tensor of shape " + shape_str(x.shape()));
  auto permute = [=](const T* src, T* dst, bool forward) {
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t a = ((o * m + i) * n + j) * inner;
          const std::size_t b = ((o * n + j) * m + i) * inner;
          for (std::size_t k = 0; k < inner; ++k) {
            if (forward)
              dst[b + k] = src[a + k];
            else
              dst[a + k] += src[b + k];
          }
        }
  };
  Tensor<T> out(std::move(out_shape));
  permute(x.value().raw(), out.raw(), true);
  return make_op<T>(std::move(out), "swap_axes", {x}, [permute](Node<T>& self) {
    permute(self.grad.raw(), self.parents[0]->grad_buffer().raw(), false);
  });
}

// Views x as [outer, mid, inner]; returns the mean over `mid` as [outer, inner].
template <class T>
Var<T> mean_axis(const Var<T>& x, std::size_t outer, std::size_t mid, std::size_t inner, Shape out_shape) {
  require(outer * mid * inner == x.size() && mid > 0, ErrorCategory::contract,
          "mean_axis: extents do not match tensor of shape " + shape_str(x.shape()));
  require(numel(out_shape) == outer * inner, ErrorCategory::contract, "mean_axis: bad output shape");
  Tensor<T> out(std::move(out_shape));
  const T inv = T{1} / static_cast<T>(mid);
  const T* src = x.value().raw();
  for (std::size_t o = 0; o < outer; ++o) {
    T* dst = out.raw() + o * inner;
    for (std::size_t m = 0; m < mid; ++m) {
      const T* row = src + (o * mid + m) * inner;
      for (std::size_t k = 0; k < inner; ++k) dst[k] += row[k];
    }
    for (std::size_t k = 0; k < inner; ++k) dst[k] *= inv;
  }
  return make_op<T>(std::move(out), "mean_axis", {x}, [=](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer().raw();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t m = 0; m < mid; ++m)
        for (std::size_t k = 0; k < inner; ++k) g[(o * mid + m) * inner + k] += inv * self.grad[o * inner + k];
  });
}

// Views x as [outer, n] and sums the last axis -> [outer].
template <class T>
Var<T> sum_last(const Var<T>& x, std::size_t n, Shape out_shape) {
  require(n > 0 && x.size() % n == 0 && numel(out_shape) == x.size() / n, ErrorCategory::contract,
          "sum_last: extents do not match");
  Tensor<T> out(std::move(out_shape));
  for (std::size_t o = 0; o < out.size(); ++o) {
    T s{0};
    for (std::size_t k = 0; k < n; ++k) s += x.value()[o * n + k];
    out[o] = s;
  }
  return make_op<T>(std::move(out), "sum_last", {x}, [n](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < self.grad.size(); ++o)
      for (std::size_t k = 0; k < n; ++k) g[o * n + k] += self.grad[o];
  });
}

// x: [M, K], weight: [N, K], bias: [N] or undefined -> [M, N]
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias = Var<T>()) {
  require(weight.value().rank() == 2, ErrorCategory::contract, "linear: weight must be [out, in]");
  const std::size_t N = weight.shape()[0], K = weight.shape()[1];
  require(x.size() % K == 0 && x.shape().back() == K, ErrorCategory::contract,
          "linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(weight.shape()));
  const std::size_t M = x.size() / K;
  Shape out_shape = x.shape();
  out_shape.back() = N;
  Tensor<T> out(out_shape);
  if (bias.defined()) {
    require(bias.size() == N, ErrorCategory::contract, "linear: bias length mismatch");
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j) out[i * N + j] = bias.value()[j];
  }
  const auto wt = kernels::transpose(weight.value().raw(), N, K);  // [K, N]
  kernels::gemm_nn(M, N, K, x.value().raw(), wt.data(), out.raw());

  std::vector<Var<T>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_op<T>(std::move(out), "linear", std::move(parents), [M, N, K](Node<T>& self) {
    const T* gy = self.grad.raw();
    if (self.parent_needs_grad(0))
      kernels::gemm_nn(M, K, N, gy, self.parents[1]->value.raw(), self.parents[0]->grad_buffer().raw());
    if (self.parent_needs_grad(1))
      kernels::gemm_tn(N, K, M, gy, self.parents[0]->value.raw(), self.parents[1]->grad_buffer().raw());
    if (self.parents.size() > 2 && self.parent_needs_grad(2)) {
      T* gb = self.parents[2]->grad_buffer().raw();
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) gb[j] += gy[i * N + j];
    }
  });
}

// Mean softmax cross-entropy. Softmax appears only here, never inside the network.
template <class T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
  require(logits.value().rank() == 2, ErrorCategory::contract, "cross_entropy: logits must be [B, K]");
  const std::size_t B = logits.shape()[0], K = logits.shape()[1];
  require(labels.size() == B, ErrorCategory::contract, "cross_entropy: label count mismatch");
  Tensor<T> probs({B, K});
  T loss{0};
  for (std::size_t b = 0; b < B; ++b) {
    require(labels[b] >= 0 && static_cast<std::size_t>(labels[b]) < K, ErrorCategory::contract,
            "cross_entropy: label " + std::to_string(labels[b]) + " outside [0," + std::to_string(K) + ")");
    const T* z = logits.value().raw() + b * K;
    T mx = *std::max_element(z, z + K);
    T s{0};
    for (std::size_t k = 0; k < K; ++k) s += std::exp(z[k] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t k = 0; k < K; ++k) probs[b * K + k] = std::exp(z[k] - lse);
    loss += lse - z[labels[b]];
  }
  loss /= static_cast<T>(B);
  return make_op<T>(Tensor<T>::scalar(loss), "cross_entropy", {logits},
                    [probs = std::move(probs), labels, B, K](Node<T>& self) {
                      auto& g = self.parents[0]->grad_buffer();
                      const T up = self.grad[0] / static_cast<T>(B);
                      for (std::size_t b = 0; b < B; ++b)
                        for (std::size_t k = 0; k < K; ++k) {
                          T p = probs[b * K + k] - (static_cast<std::size_t>(labels[b]) == k ? T{1} : T{0});
                          g[b * K + k] += up * p;
                        }
                    });
}

// ---------------------------------------------------------------------------
// Gradient oracle: central differences against reverse mode.

struct FiniteDiffResult {
  double max_relative_error = 0.0;
  bool oracle_failed = false;  // f produced a non-finite value
  std::string message;
};

// f maps a leaf Var to a scalar Var. Returns max_i |fd - ad| / max(|fd|, |ad|, 1e-8).
template <class T, class F>
FiniteDiffResult finite_diff_check(F&& f, const Tensor<T>& x, double eps) {
  FiniteDiffResult r;
  require(eps > 0.0, ErrorCategory::contract, "finite_diff_check: eps must be positive");
  Var<T> leaf(x, true);
  Var<T> y = f(leaf);
  if (!y.value().all_finite()) {
    r.oracle_failed = true;
    r.message = "function value is not finite at x";
    return r;
  }
  backward(y);
  Tensor<T> ad = leaf.has_grad() ? leaf.grad() : Tensor<T>(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor<T> xp = x, xm = x;
    xp[i] += static_cast<T>(eps);
    xm[i] -= static_cast<T>(eps);
    const double fp = static_cast<double>(f(Var<T>(xp)).value().item());
    const double fm = static_cast<double>(f(Var<T>(xm)).value().item());
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      r.oracle_failed = true;
      r.message = "non-finite function value at coordinate " + std::to_string(i);
      return r;
    }
    const double fd = (fp - fm) / (2.0 * eps);
    const double a = static_cast<double>(ad[i]);
    const double denom = std::max({std::abs(fd), std::abs(a), 1e-8});
    r.max_relative_error = std::max(r.max_relative_error, std::abs(fd - a) / denom);
  }
  return r;
}

}  // namespace s2tdpt
