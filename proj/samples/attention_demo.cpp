// Builds STDP attention scores for a handful of random spike tokens and
// prints the timing table, the score matrix and the accumulated output.
#include <cstdio>
#include <random>

#include "s2tdpt/stdp_attention.hpp"

using namespace s2tdpt;

int main() {
  const std::size_t N = 5, dh = 8;
  StdpAttentionConfig cfg;
  std::mt19937_64 rng(3);
  std::bernoulli_distribution bit(0.4);

  auto spikes = [&] {
    Tensor<double> t({N, dh});
    for (auto& v : t.data()) v = bit(rng) ? 1.0 : 0.0;
    return Var<double>(t);
  };
  Var<double> q = spikes(), k = spikes(), v = spikes();

  Var<double> rq = token_rates(q), rk = token_rates(k);
  Var<double> tq = token_latencies(rq, dh, cfg.t_max), tk = token_latencies(rk, dh, cfg.t_max);
  std::printf("token  count_q  t_q     count_k  t_k\n");
  for (std::size_t i = 0; i < N; ++i)
    std::printf("%5zu  %7.0f  %.3f  %7.0f  %.3f\n", i, rq.value()[i], tq.value()[i], rk.value()[i], tk.value()[i]);

  Var<double> a = scores_from_rates(rq, rk, dh, cfg);
  const auto [lo, hi] = cfg.score_bounds();
  std::printf("\nscores (bounded to [%.2f, %.2f])\n", lo, hi);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < N; ++j) std::printf(" %.4f", a.value()[i * N + j]);
    std::printf("\n");
  }

  Var<double> out = attention_apply(a, v, cfg.scale);
  std::printf("\noutput = %.3f * sum of selected scores\n", cfg.scale);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t d = 0; d < dh; ++d) std::printf(" %.4f", out.value()[i * dh + d]);
    std::printf("\n");
  }
}
