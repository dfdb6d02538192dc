#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "s2tdpt/error.hpp"

namespace s2tdpt {

// Linear rate-to-latency map: t = t_max * (1 - p / d).
struct LatencyCoderConfig {
  double t_max = 1.0;
  std::size_t d = 1;

  void validate() const {
    require(t_max > 0.0, ErrorCategory::config, "latency coder: t_max must be positive");
    require(d >= 1, ErrorCategory::config, "latency coder: d must be at least 1");
  }
};

// Two-sided exponential STDP window.
struct GeneralStdpConfig {
  double a_plus = 1.0;
  double a_minus = 1.0;
  double tau_plus = 1.0;
  double tau_minus = 1.0;

  void validate() const {
    require(a_plus > 0.0 && a_minus > 0.0 && tau_plus > 0.0 && tau_minus > 0.0, ErrorCategory::config,
            "stdp: amplitudes and time constants must be strictly positive");
  }
};

// l1 norm of a binary vector.
template <class T>
std::size_t spike_count(std::span<const T> v) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    require(v[i] == T{0} || v[i] == T{1}, ErrorCategory::contract,
            "spike_count: element " + std::to_string(i) + " is not binary");
    n += v[i] == T{1};
  }
  return n;
}

inline double latency_encode(double p, const LatencyCoderConfig& cfg) {
  cfg.validate();
  require(p >= 0.0 && p <= static_cast<double>(cfg.d), ErrorCategory::contract,
          "latency_encode: count " + std::to_string(p) + " outside [0, " + std::to_string(cfg.d) + "]");
  return cfg.t_max * (1.0 - p / static_cast<double>(cfg.d));
}

// Delta t = t_q - t_k. Positive weight change when q fires first (dt < 0),
// negative otherwise; dt == 0 falls on the negative branch.
inline double stdp_window(double dt, const GeneralStdpConfig& cfg) {
  cfg.validate();
  if (dt < 0.0) return cfg.a_plus * std::exp(dt / cfg.tau_plus);
  return -cfg.a_minus * std::exp(-dt / cfg.tau_minus);
}

template <class T>
double stdp_similarity(std::span<const T> q, std::span<const T> k, const LatencyCoderConfig& coder,
                       const GeneralStdpConfig& cfg) {
  require(q.size() == k.size(), ErrorCategory::contract, "stdp_similarity: vector length mismatch");
  require(q.size() == coder.d, ErrorCategory::contract, "stdp_similarity: vector length differs from coder d");
  const double tq = latency_encode(static_cast<double>(spike_count(q)), coder);
  const double tk = latency_encode(static_cast<double>(spike_count(k)), coder);
  return stdp_window(tq - tk, cfg);
}

}  // namespace s2tdpt
