#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "s2tdpt/model.hpp"

namespace s2tdpt {

enum class OptimizerKind { sgd_momentum, adamw };
enum class LrSchedule { constant, cosine };

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  OptimizerKind optimizer = OptimizerKind::adamw;
  std::uint64_t seed = 0;
  LrSchedule lr_schedule = LrSchedule::cosine;
  bool hflip = false;
  bool random_crop = false;

  void validate() const {
    require(epochs >= 1 && batch_size >= 1, ErrorCategory::config, "train: epochs and batch_size must be positive");
    require(learning_rate >= 0.0 && weight_decay >= 0.0, ErrorCategory::config,
            "train: learning_rate and weight_decay must be non-negative");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct RunConfig {
  ModelConfig model{};
  TrainConfig train{};

  void validate() const {
    model.validate();
    train.validate();
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline RunConfig toy_run_config() {
  RunConfig c;
  c.model = toy_config();
  c.train.batch_size = 32;
  c.train.learning_rate = 2e-3;
  return c;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto r = std::from_chars(v.data(), end, out);
  require(r.ec == std::errc{} && r.ptr == end, ErrorCategory::config, "config: " + key + " expects a number, got '" + v + "'");
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const char* end = v.data() + v.size();
  auto r = std::from_chars(v.data(), end, out);
  require(r.ec == std::errc{} && r.ptr == end, ErrorCategory::config,
          "config: " + key + " expects a non-negative integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(ErrorCategory::config, "config: " + key + " expects true/false, got '" + v + "'");
}

inline std::string stages_str(const std::vector<SpsStage>& stages) {
  std::string s;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (i) s += ",";
    s += (stages[i].kind == SpsStageKind::spe ? "SPE:" : "SPED:") + std::to_string(stages[i].channels);
  }
  return s;
}

inline std::vector<SpsStage> parse_stages(const std::string& v) {
  std::vector<SpsStage> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto colon = item.find(':');
    require(colon != std::string::npos, ErrorCategory::config, "config: bad SPS stage '" + item + "' (want SPE:n or SPED:n)");
    const std::string kind = item.substr(0, colon);
    SpsStage st;
    if (kind == "SPE") st.kind = SpsStageKind::spe;
    else if (kind == "SPED") st.kind = SpsStageKind::sped;
    else fail(ErrorCategory::config, "config: unknown SPS stage kind '" + kind + "'");
    st.channels = parse_uint("model.sps_stages", trim(item.substr(colon + 1)));
    out.push_back(st);
  }
  return out;
}

}  // namespace detail

// Flat list of (key, value) pairs in canonical emit order.
inline std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& c) {
  using detail::fmt_double;
  const auto& m = c.model;
  const auto& t = c.train;
  return {
      {"model.timesteps", std::to_string(m.timesteps)},
      {"model.depth", std::to_string(m.depth)},
      {"model.embed_dim", std::to_string(m.embed_dim)},
      {"model.num_classes", std::to_string(m.num_classes)},
      {"model.in_channels", std::to_string(m.in_channels)},
      {"model.height", std::to_string(m.height)},
      {"model.width", std::to_string(m.width)},
      {"model.stem_channels", std::to_string(m.stem_channels)},
      {"model.sps_stages", detail::stages_str(m.sps_stages)},
      {"model.mlp_ratio", fmt_double(m.mlp_ratio)},
      {"lif.v_th", fmt_double(m.lif.v_th)},
      {"lif.v_reset", fmt_double(m.lif.v_reset)},
      {"lif.beta", fmt_double(m.lif.beta)},
      {"lif.surrogate", m.lif.surrogate.kind == SurrogateKind::rectangular ? "rectangular" : "triangular"},
      {"lif.surrogate_width", fmt_double(m.lif.surrogate.width)},
      {"attention.heads", std::to_string(m.attention.heads)},
      {"attention.a_stdp", fmt_double(m.attention.a_stdp)},
      {"attention.tau_stdp", fmt_double(m.attention.tau_stdp)},
      {"attention.w_offset", fmt_double(m.attention.w_offset)},
      {"attention.t_max", fmt_double(m.attention.t_max)},
      {"attention.scale", fmt_double(m.attention.scale)},
      {"train.epochs", std::to_string(t.epochs)},
      {"train.batch_size", std::to_string(t.batch_size)},
      {"train.learning_rate", fmt_double(t.learning_rate)},
      {"train.weight_decay", fmt_double(t.weight_decay)},
      {"train.optimizer", t.optimizer == OptimizerKind::adamw ? "adamw" : "sgd_momentum"},
      {"train.seed", std::to_string(t.seed)},
      {"train.lr_schedule", t.lr_schedule == LrSchedule::cosine ? "cosine" : "constant"},
      {"train.hflip", t.hflip ? "true" : "false"},
      {"train.random_crop", t.random_crop ? "true" : "false"},
  };
}

// Applies one key=value assignment. Unknown keys are configuration errors.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  auto& m = c.model;
  auto& t = c.train;
  const std::string& v = value;
  if (key == "model.timesteps") m.timesteps = parse_uint(key, v);
  else if (key == "model.depth") m.depth = parse_uint(key, v);
  else if (key == "model.embed_dim") m.embed_dim = parse_uint(key, v);
  else if (key == "model.num_classes") m.num_classes = parse_uint(key, v);
  else if (key == "model.in_channels") m.in_channels = parse_uint(key, v);
  else if (key == "model.height") m.height = parse_uint(key, v);
  else if (key == "model.width") m.width = parse_uint(key, v);
  else if (key == "model.stem_channels") m.stem_channels = parse_uint(key, v);
  else if (key == "model.sps_stages") m.sps_stages = parse_stages(v);
  else if (key == "model.mlp_ratio") m.mlp_ratio = parse_double(key, v);
  else if (key == "lif.v_th") m.lif.v_th = parse_double(key, v);
  else if (key == "lif.v_reset") m.lif.v_reset = parse_double(key, v);
  else if (key == "lif.beta") m.lif.beta = parse_double(key, v);
  else if (key == "lif.surrogate") {
    if (v == "rectangular") m.lif.surrogate.kind = SurrogateKind::rectangular;
    else if (v == "triangular") m.lif.surrogate.kind = SurrogateKind::triangular;
    else fail(ErrorCategory::config, "config: lif.surrogate must be rectangular or triangular");
  } else if (key == "lif.surrogate_width") m.lif.surrogate.width = parse_double(key, v);
  else if (key == "attention.heads") m.attention.heads = parse_uint(key, v);
  else if (key == "attention.a_stdp") m.attention.a_stdp = parse_double(key, v);
  else if (key == "attention.tau_stdp") m.attention.tau_stdp = parse_double(key, v);
  else if (key == "attention.w_offset") m.attention.w_offset = parse_double(key, v);
  else if (key == "attention.t_max") m.attention.t_max = parse_double(key, v);
  else if (key == "attention.scale") m.attention.scale = parse_double(key, v);
  else if (key == "train.epochs") t.epochs = parse_uint(key, v);
  else if (key == "train.batch_size") t.batch_size = parse_uint(key, v);
  else if (key == "train.learning_rate") t.learning_rate = parse_double(key, v);
  else if (key == "train.weight_decay") t.weight_decay = parse_double(key, v);
  else if (key == "train.optimizer") {
    if (v == "adamw") t.optimizer = OptimizerKind::adamw;
    else if (v == "sgd_momentum") t.optimizer = OptimizerKind::sgd_momentum;
    else fail(ErrorCategory::config, "config: train.optimizer must be adamw or sgd_momentum");
  } else if (key == "train.seed") t.seed = parse_uint(key, v);
  else if (key == "train.lr_schedule") {
    if (v == "cosine") t.lr_schedule = LrSchedule::cosine;
    else if (v == "constant") t.lr_schedule = LrSchedule::constant;
    else fail(ErrorCategory::config, "config: train.lr_schedule must be cosine or constant");
  } else if (key == "train.hflip") t.hflip = parse_bool(key, v);
  else if (key == "train.random_crop") t.random_crop = parse_bool(key, v);
  else fail(ErrorCategory::config, "config: unknown key '" + key + "'");
}

// "key=value" override syntax used by --set.
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos, ErrorCategory::config, "override '" + assignment + "' is not key=value");
  apply_setting(c, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

inline std::string emit_config(const RunConfig& c) {
  std::string out;
  std::string section;
  for (const auto& [k, v] : config_entries(c)) {
    const std::string sec = k.substr(0, k.find('.'));
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "# " + sec + "\n";
      section = sec;
    }
    out += k + " = " + v + "\n";
  }
  return out;
}

// Starts from `base` and applies every assignment in `text`. Blank lines
// and '#' comments are ignored.
inline RunConfig parse_config(std::string_view text, RunConfig base = {}) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = detail::trim(line);
    if (s.empty() || s[0] == '#') continue;
    const auto eq = s.find('=');
    require(eq != std::string::npos, ErrorCategory::config,
            "config line " + std::to_string(lineno) + ": expected key = value");
    apply_setting(base, detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
  }
  return base;
}

inline RunConfig load_config_file(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCategory::config, "cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

}  // namespace s2tdpt
