#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <future>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "s2tdpt/config.hpp"
#include "s2tdpt/data.hpp"

namespace s2tdpt {

// AdamW (decoupled weight decay on rank>=2 weights) or SGD with momentum 0.9.
template <class T>
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double weight_decay) : kind_(kind), weight_decay_(weight_decay) {}

  void step(std::vector<NamedParam<T>>& params, double lr) {
    if (first_.empty()) {
      for (auto& p : params) {
        first_.emplace_back(p.var->shape());
        second_.emplace_back(kind_ == OptimizerKind::adamw ? p.var->shape() : Shape{0});
      }
    }
    ++steps_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Var<T>& p = *params[i].var;
      if (!p.has_grad()) continue;
      T* w = p.mutable_value().raw();
      const T* g = p.grad().raw();
      T* m = first_[i].raw();
      const bool decay = p.value().rank() >= 2;
      if (kind_ == OptimizerKind::adamw) {
        T* v = second_[i].raw();
        const T lr_t = static_cast<T>(lr);
        const T wd = decay ? static_cast<T>(lr * weight_decay_) : T{0};
        for (std::size_t k = 0; k < p.size(); ++k) {
          m[k] = static_cast<T>(b1) * m[k] + static_cast<T>(1 - b1) * g[k];
          v[k] = static_cast<T>(b2) * v[k] + static_cast<T>(1 - b2) * g[k] * g[k];
          const T mhat = m[k] / static_cast<T>(bc1), vhat = v[k] / static_cast<T>(bc2);
          w[k] -= wd * w[k];
          w[k] -= lr_t * mhat / (std::sqrt(vhat) + static_cast<T>(eps));
        }
      } else {
        const T lr_t = static_cast<T>(lr), wd = decay ? static_cast<T>(weight_decay_) : T{0};
        for (std::size_t k = 0; k < p.size(); ++k) {
          m[k] = T(0.9) * m[k] + g[k] + wd * w[k];
          w[k] -= lr_t * m[k];
        }
      }
    }
  }

 private:
  OptimizerKind kind_;
  double weight_decay_;
  std::uint64_t steps_ = 0;
  std::vector<Tensor<T>> first_, second_;
};

inline double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  if (cfg.lr_schedule == LrSchedule::constant || total_steps == 0) return cfg.learning_rate;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// Worker-thread cap from S2TDPT_THREADS (default 2: trainer + one loader).
inline std::size_t worker_threads() {
  if (const char* env = std::getenv("S2TDPT_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return 2;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct EpochMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t steps = 0;
};

inline std::size_t argmax_row(const float* row, std::size_t k) {
  return static_cast<std::size_t>(std::max_element(row, row + k) - row);
}
inline std::size_t argmax_row(const double* row, std::size_t k) {
  return static_cast<std::size_t>(std::max_element(row, row + k) - row);
}

// One pass of minibatch updates. Batches are assembled on a loader thread
// with at most one batch in flight; the update itself runs on the caller.
template <class T>
EpochMetrics train_epoch(Model<T>& model, const Dataset& data, const TrainConfig& cfg, Optimizer<T>& opt,
                         std::size_t epoch, std::size_t& global_step, std::size_t total_steps) {
  require(data.size() > 0, ErrorCategory::contract, "train_epoch: empty dataset");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(cfg.seed, 1000 + epoch));
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t nb = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const AugmentOptions aug{cfg.hflip, cfg.random_crop};
  auto build = [&](std::size_t b) {
    const std::size_t lo = b * cfg.batch_size, hi = std::min(data.size(), lo + cfg.batch_size);
    return make_batch<T>(data, std::span<const std::size_t>(order).subspan(lo, hi - lo), aug,
                         mix_seed(cfg.seed, (epoch << 32) + b));
  };
  const bool prefetch = worker_threads() > 1;
  std::future<Batch<T>> pending;
  if (prefetch) pending = std::async(std::launch::async, build, 0);

  auto params = model.parameters();
  EpochMetrics m;
  double correct = 0.0;
  for (std::size_t b = 0; b < nb; ++b) {
    Batch<T> batch = prefetch ? pending.get() : build(b);
    if (prefetch && b + 1 < nb) pending = std::async(std::launch::async, build, b + 1);

    model.zero_grad();
    Var<T> logits = model.forward(batch.images, true);
    Var<T> loss = cross_entropy(logits, batch.labels);
    const double lv = static_cast<double>(loss.value().item());
    if (!std::isfinite(lv)) {
      const std::string where = first_non_finite(loss);
      fail(ErrorCategory::numeric, "non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                       std::to_string(b) + "; first non-finite tensor: " +
                                       (where.empty() ? std::string("loss") : where));
    }
    backward(loss);
    opt.step(params, scheduled_lr(cfg, global_step++, total_steps));

    const std::size_t K = logits.shape()[1];
    for (std::size_t i = 0; i < batch.labels.size(); ++i)
      correct += argmax_row(logits.value().raw() + i * K, K) == static_cast<std::size_t>(batch.labels[i]);
    m.loss += lv * static_cast<double>(batch.labels.size());
    ++m.steps;
  }
  m.loss /= static_cast<double>(data.size());
  m.accuracy = correct / static_cast<double>(data.size());
  return m;
}

struct EvalReport {
  double top1_accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<double> per_class_accuracy;
  std::size_t total = 0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline EvalReport make_eval_report(std::span<const int> predictions, std::span<const int> labels,
                                   std::size_t num_classes) {
  require(predictions.size() == labels.size(), ErrorCategory::contract, "eval report: prediction/label count mismatch");
  require(!labels.empty(), ErrorCategory::contract, "evaluate: empty data");
  EvalReport r;
  r.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  std::size_t trace = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < num_classes && predictions[i] >= 0 &&
                static_cast<std::size_t>(predictions[i]) < num_classes,
            ErrorCategory::contract, "eval report: class index out of range");
    ++r.confusion[labels[i]][predictions[i]];
    trace += labels[i] == predictions[i];
  }
  r.total = labels.size();
  r.top1_accuracy = static_cast<double>(trace) / static_cast<double>(r.total);
  r.per_class_accuracy.resize(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t row = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::size_t{0});
    r.per_class_accuracy[c] = row ? static_cast<double>(r.confusion[c][c]) / static_cast<double>(row) : 0.0;
  }
  return r;
}

template <class T>
std::vector<int> predict(Model<T>& model, const Dataset& data, std::size_t batch_size = 64) {
  std::vector<int> preds;
  preds.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t lo = 0; lo < data.size(); lo += batch_size) {
    const std::size_t hi = std::min(data.size(), lo + batch_size);
    idx.resize(hi - lo);
    std::iota(idx.begin(), idx.end(), lo);
    Batch<T> b = make_batch<T>(data, idx);
    Var<T> logits = model.forward(b.images, false);
    const std::size_t K = logits.shape()[1];
    for (std::size_t i = 0; i < idx.size(); ++i)
      preds.push_back(static_cast<int>(argmax_row(logits.value().raw() + i * K, K)));
  }
  return preds;
}

template <class T>
EvalReport evaluate(Model<T>& model, const Dataset& data, std::size_t batch_size = 64) {
  require(data.size() > 0, ErrorCategory::contract, "evaluate: empty data");
  const auto preds = predict(model, data, batch_size);
  std::vector<int> labels(data.labels.begin(), data.labels.end());
  return make_eval_report(preds, labels, model.config().num_classes);
}

inline void write_confusion_csv(std::ostream& out, const EvalReport& r) {
  const std::size_t K = r.confusion.size();
  out << "true\\pred";
  for (std::size_t c = 0; c < K; ++c) out << "," << c;
  out << "\n";
  for (std::size_t i = 0; i < K; ++i) {
    out << i;
    for (std::size_t j = 0; j < K; ++j) out << "," << r.confusion[i][j];
    out << "\n";
  }
}

// Appends one row per epoch; writes the header only when the file is new.
class MetricsLog {
 public:
  MetricsLog(const std::string& path, std::uint64_t seed) : path_(path) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    out_.open(path, std::ios::app);
    require(static_cast<bool>(out_), ErrorCategory::io, "cannot open metrics file " + path);
    if (fresh) out_ << "# seed=" << seed << "\nepoch,train_loss,train_acc,eval_acc,wall_seconds\n";
  }

  void append(std::size_t epoch, const EpochMetrics& m, double eval_acc, double wall) {
    out_ << epoch << "," << detail::fmt_double(m.loss) << "," << detail::fmt_double(m.accuracy) << ","
         << detail::fmt_double(eval_acc) << "," << detail::fmt_double(wall) << "\n";
    out_.flush();
  }

 private:
  std::string path_;
  std::ofstream out_;
};

struct FitResult {
  std::vector<EpochMetrics> epochs;
  std::vector<double> eval_accuracy;
  double seconds = 0.0;
};

// Full run: `cfg.epochs` passes over `train`, evaluating on `test` (if non
// empty) after each epoch. `on_epoch` may return false to stop early.
template <class T>
FitResult fit(Model<T>& model, const Dataset& train, const Dataset& test, const TrainConfig& cfg,
              MetricsLog* log = nullptr,
              const std::function<bool(std::size_t, const EpochMetrics&, double)>& on_epoch = {}) {
  cfg.validate();
  Optimizer<T> opt(cfg.optimizer, cfg.weight_decay);
  const std::size_t per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  std::size_t step = 0;
  FitResult res;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    EpochMetrics m = train_epoch(model, train, cfg, opt, e, step, total);
    const double acc = test.size() ? evaluate(model, test).top1_accuracy : 0.0;
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.epochs.push_back(m);
    res.eval_accuracy.push_back(acc);
    if (log) log->append(e + 1, m, acc, wall);
    if (on_epoch && !on_epoch(e + 1, m, acc)) break;
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// Spatial map of mean spike probability over heads, timesteps, blocks and
// channels, one cell per token.
struct SfrMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> grid;  // row-major [height, width]
};

// Averages the per-block token rates recorded by a probe for sample `b`.
inline SfrMap sfr_from_probe(const ForwardProbe& probe, std::size_t b = 0) {
  SfrMap m{probe.token_grid_h, probe.token_grid_w, {}};
  const std::size_t N = m.height * m.width;
  m.grid.assign(N, 0.0);
  if (probe.block_token_rates.empty()) return m;
  for (const auto& rates : probe.block_token_rates) {
    require(rates.size() >= (b + 1) * N, ErrorCategory::contract, "sfr: sample index out of range");
    for (std::size_t n = 0; n < N; ++n) m.grid[n] += rates[b * N + n];
  }
  for (double& v : m.grid) v /= static_cast<double>(probe.block_token_rates.size());
  return m;
}

// image: [1, C, H, W]
template <class T>
SfrMap sfr_map(Model<T>& model, const Tensor<T>& image) {
  ForwardProbe probe;
  model.forward(image, false, &probe);
  return sfr_from_probe(probe, 0);
}

inline void write_sfr_csv(std::ostream& out, const SfrMap& m) {
  for (std::size_t y = 0; y < m.height; ++y) {
    for (std::size_t x = 0; x < m.width; ++x) {
      if (x) out << ",";
      out << detail::fmt_double(m.grid[y * m.width + x]);
    }
    out << "\n";
  }
}

// Plain PGM (P2), max value 255, value = round(255 * rate).
inline void write_sfr_pgm(std::ostream& out, const SfrMap& m, std::uint64_t seed) {
  out << "P2\n# spike firing rate map, seed=" << seed << "\n" << m.width << " " << m.height << "\n255\n";
  for (std::size_t y = 0; y < m.height; ++y) {
    for (std::size_t x = 0; x < m.width; ++x) {
      if (x) out << " ";
      out << std::lround(255.0 * std::clamp(m.grid[y * m.width + x], 0.0, 1.0));
    }
    out << "\n";
  }
}

}  // namespace s2tdpt
