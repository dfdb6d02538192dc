#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "s2tdpt/checkpoint.hpp"
#include "s2tdpt/profiler.hpp"

namespace s2tdpt {

struct CliOptions {
  std::string command;
  std::string config_path;
  std::string checkpoint_path;
  std::string data_path;
  std::string output_path;
  std::vector<std::string> overrides;
  std::string preset = "auto";
  std::uint64_t seed = 0;
  std::size_t per_class = 200;
  std::size_t test_per_class = 100;
  std::size_t samples = 64;
  std::size_t index = 0;
  std::size_t count = 1;
};

namespace cli_detail {

namespace fs = std::filesystem;

inline std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::trunc);
  require(static_cast<bool>(f), ErrorCategory::io, "cannot write " + p.string());
  return f;
}

inline fs::path out_dir(const CliOptions& o, const char* fallback) {
  fs::path d = o.output_path.empty() ? fs::path(fallback) : fs::path(o.output_path);
  fs::create_directories(d);
  return d;
}

inline void need(const std::string& v, const char* flag, const std::string& cmd) {
  require(!v.empty(), ErrorCategory::usage, cmd + " requires " + flag);
}

inline RunConfig base_config(const CliOptions& o, const Dataset* sample) {
  RunConfig c;
  std::string preset = o.preset;
  if (preset == "auto") preset = (sample && sample->height == 16) ? "toy" : "cifar10";
  if (preset == "toy") {
    c = toy_run_config();
  } else if (preset == "cifar10") {
    c.model = cifar_4_384(10);
  } else if (preset == "cifar100") {
    c.model = cifar_4_384(100);
  } else {
    fail(ErrorCategory::usage, "unknown preset '" + preset + "' (toy, cifar10, cifar100, auto)");
  }
  if (!o.config_path.empty()) c = load_config_file(o.config_path, c);
  for (const auto& s : o.overrides) apply_override(c, s);
  c.validate();
  return c;
}

inline void check_geometry(const ModelConfig& m, const Dataset& d, const std::string& what) {
  require(m.in_channels == d.channels && m.height == d.height && m.width == d.width, ErrorCategory::config,
          what + " images are " + std::to_string(d.channels) + "x" + std::to_string(d.height) + "x" +
              std::to_string(d.width) + " but the model expects " + std::to_string(m.in_channels) + "x" +
              std::to_string(m.height) + "x" + std::to_string(m.width));
}

inline Dataset load_data(const CliOptions& o, Split split, std::size_t classes, std::ostream& err) {
  std::vector<std::string> warnings;
  Dataset d = load_split(o.data_path, split, classes, &warnings);
  for (const auto& w : warnings) err << "warning: " << w << "\n";
  return d;
}

inline Dataset subset(const Dataset& d, std::size_t first, std::size_t n) {
  require(first < d.size(), ErrorCategory::usage,
          "index " + std::to_string(first) + " out of range (dataset has " + std::to_string(d.size()) + " images)");
  Dataset out{d.channels, d.height, d.width, d.num_classes, {}, {}};
  for (std::size_t i = first; i < std::min(d.size(), first + n); ++i) {
    const auto img = d.image(i);
    out.append(d.labels[i], std::vector<std::uint8_t>(img.begin(), img.end()));
  }
  return out;
}

inline int gen_data(const CliOptions& o, std::ostream& out) {
  need(o.output_path, "--out", "gen-data");
  const Dataset train = gen_synthetic(o.seed, o.per_class);
  const Dataset test = gen_synthetic(mix_seed(o.seed, 1), o.test_per_class);
  write_dataset_dir(o.output_path, train, test, o.seed);
  out << "wrote " << train.size() << " train / " << test.size() << " test images to " << o.output_path << "\n";
  return 0;
}

inline int train(const CliOptions& o, std::ostream& out, std::ostream& err) {
  need(o.data_path, "--data", "train");
  std::vector<std::string> warnings;
  Dataset train = load_split(o.data_path, Split::train, 1u << 16, &warnings);
  RunConfig cfg = base_config(o, &train);
  train = load_data(o, Split::train, cfg.model.num_classes, err);
  Dataset test = load_data(o, Split::test, cfg.model.num_classes, err);
  require(train.size() > 0, ErrorCategory::data, "training split is empty");
  check_geometry(cfg.model, train, "training");

  const fs::path dir = out_dir(o, "run");
  {
    auto f = open_out(dir / "config.cfg");
    f << "# seed=" << cfg.train.seed << "\n" << emit_config(cfg);
  }
  Model<float> model(cfg.model, cfg.train.seed);
  out << "params " << model.param_count() << ", seed " << cfg.train.seed << "\n";
  MetricsLog log((dir / "metrics.csv").string(), cfg.train.seed);
  fit(model, train, test, cfg.train, &log, [&](std::size_t e, const EpochMetrics& m, double acc) {
    out << "epoch " << e << " loss " << m.loss << " train_acc " << m.accuracy << " eval_acc " << acc << "\n";
    return true;
  });
  const std::string ckpt = o.checkpoint_path.empty() ? (dir / "model.ckpt").string() : o.checkpoint_path;
  save_checkpoint(ckpt, cfg, model);
  if (test.size()) {
    const EvalReport r = evaluate(model, test);
    auto f = open_out(dir / "confusion.csv");
    f << "# seed=" << cfg.train.seed << "\n";
    write_confusion_csv(f, r);
    out << "final eval_acc " << r.top1_accuracy << "\n";
  }
  out << "checkpoint " << ckpt << "\n";
  return 0;
}

inline int eval(const CliOptions& o, std::ostream& out, std::ostream& err) {
  need(o.checkpoint_path, "--checkpoint", "eval");
  need(o.data_path, "--data", "eval");
  auto ck = load_checkpoint<float>(o.checkpoint_path);
  Dataset test = load_data(o, Split::test, ck.config.model.num_classes, err);
  check_geometry(ck.config.model, test, "evaluation");
  const EvalReport r = evaluate(ck.model, test);
  if (!o.output_path.empty()) {
    const fs::path dir = out_dir(o, "eval");
    auto f = open_out(dir / "confusion.csv");
    f << "# seed=" << ck.config.train.seed << "\n";
    write_confusion_csv(f, r);
  }
  nlohmann::json j{{"seed", ck.config.train.seed},
                   {"top1_accuracy", r.top1_accuracy},
                   {"total", r.total},
                   {"per_class_accuracy", r.per_class_accuracy}};
  out << j.dump() << "\n";
  return 0;
}

// Model for commands that only run forward passes: the checkpoint when
// given, otherwise a freshly initialised model from the configuration.
inline LoadedCheckpoint<float> inference_model(const CliOptions& o, const Dataset* sample) {
  if (!o.checkpoint_path.empty()) return load_checkpoint<float>(o.checkpoint_path);
  RunConfig cfg = base_config(o, sample);
  Model<float> m(cfg.model, cfg.train.seed);
  return {cfg, std::move(m)};
}

inline int profile(const CliOptions& o, std::ostream& out, std::ostream& err) {
  need(o.data_path, "--data", "profile");
  Dataset probe_set = load_split(o.data_path, Split::test, 1u << 16, nullptr);
  auto ck = inference_model(o, &probe_set);
  Dataset test = load_data(o, Split::test, ck.config.model.num_classes, err);
  require(test.size() > 0, ErrorCategory::data, "profile: test split is empty");
  check_geometry(ck.config.model, test, "profiling");
  const EnergyReport r = profile_model(ck.model, test, o.samples, ck.config.train.seed);
  nlohmann::json j = to_json(r);
  j["attention_memory"] = footprint_json({ck.config.model.num_tokens(), 512, 4096, 16384});
  const fs::path dir = out_dir(o, "profile");
  open_out(dir / "energy.json") << j.dump(2) << "\n";
  {
    auto f = open_out(dir / "energy.txt");
    f << "# seed=" << r.seed << "\n";
    write_energy_table(f, r);
  }
  write_energy_table(out, r);
  return 0;
}

inline int export_sfr(const CliOptions& o, std::ostream& out, std::ostream& err) {
  need(o.data_path, "--data", "export-sfr");
  Dataset probe_set = load_split(o.data_path, Split::test, 1u << 16, nullptr);
  auto ck = inference_model(o, &probe_set);
  Dataset test = load_data(o, Split::test, ck.config.model.num_classes, err);
  check_geometry(ck.config.model, test, "input");
  const Dataset one = subset(test, o.index, 1);
  const std::size_t idx0 = 0;
  const SfrMap m = sfr_map(ck.model, make_batch<float>(one, std::span<const std::size_t>(&idx0, 1)).images);
  const fs::path dir = out_dir(o, "sfr");
  const std::uint64_t seed = ck.config.train.seed;
  {
    auto f = open_out(dir / "sfr.csv");
    f << "# seed=" << seed << " image=" << o.index << " label=" << int(one.labels[0]) << "\n";
    write_sfr_csv(f, m);
  }
  {
    auto f = open_out(dir / "sfr.pgm");
    write_sfr_pgm(f, m, seed);
  }
  out << "wrote " << m.height << "x" << m.width << " SFR map to " << dir.string() << "\n";
  return 0;
}

inline int inspect_attention(const CliOptions& o, std::ostream& out, std::ostream& err) {
  need(o.data_path, "--data", "inspect-attention");
  Dataset probe_set = load_split(o.data_path, Split::test, 1u << 16, nullptr);
  auto ck = inference_model(o, &probe_set);
  Dataset test = load_data(o, Split::test, ck.config.model.num_classes, err);
  check_geometry(ck.config.model, test, "input");
  const Dataset part = subset(test, o.index, std::max<std::size_t>(o.count, 1));
  std::vector<std::size_t> idx(part.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  ForwardProbe probe;
  probe.record_attention = true;
  ck.model.forward(make_batch<float>(part, idx).images, false, &probe);
  require(!probe.attention.empty(), ErrorCategory::contract, "inspect-attention: no attention recorded");

  const Shape& s = probe.attention.front().shape;
  std::vector<double> values;
  for (const auto& d : probe.attention) values.insert(values.end(), d.values.begin(), d.values.end());
  nlohmann::json j{{"seed", ck.config.train.seed},
                   {"axis_order", {"layer", "t", "b", "h", "i", "j"}},
                   {"shape", {probe.attention.size(), s[0], s[1], s[2], s[3], s[4]}},
                   {"first_image", o.index},
                   {"labels", std::vector<int>(part.labels.begin(), part.labels.end())},
                   {"values", values}};
  const fs::path dir = out_dir(o, "attention");
  open_out(dir / "attention.json") << j.dump() << "\n";
  out << "wrote attention [" << probe.attention.size() << "," << s[0] << "," << s[1] << "," << s[2] << "," << s[3]
      << "," << s[4] << "] to " << (dir / "attention.json").string() << "\n";
  return 0;
}

}  // namespace cli_detail

inline int run_command(const CliOptions& o, std::ostream& out, std::ostream& err) {
  if (o.command == "gen-data") return cli_detail::gen_data(o, out);
  if (o.command == "train") return cli_detail::train(o, out, err);
  if (o.command == "eval") return cli_detail::eval(o, out, err);
  if (o.command == "profile") return cli_detail::profile(o, out, err);
  if (o.command == "export-sfr") return cli_detail::export_sfr(o, out, err);
  if (o.command == "inspect-attention") return cli_detail::inspect_attention(o, out, err);
  fail(ErrorCategory::usage, "unknown command '" + o.command + "'");
}

inline std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

inline int exit_code(ErrorCategory c) {
  return (c == ErrorCategory::config || c == ErrorCategory::usage) ? 2 : 1;
}

// Errors are reported as one line: "error: CATEGORY: message".
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CliOptions o;
  CLI::App app{"Spiking transformer with spike-timing attention"};
  app.require_subcommand(1);
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "key = value configuration file");
    sub->add_option("--checkpoint", o.checkpoint_path, "checkpoint path");
    sub->add_option("--data", o.data_path, "dataset directory or CIFAR binary file");
    sub->add_option("--out", o.output_path, "output directory");
    sub->add_option("--set", o.overrides, "override one setting, key=value (repeatable)");
    sub->add_option("--preset", o.preset, "base configuration: auto, toy, cifar10, cifar100");
  };
  auto* gen = app.add_subcommand("gen-data", "write the synthetic four-shape dataset");
  gen->add_option("--out", o.output_path, "output directory");
  gen->add_option("--seed", o.seed, "generator seed");
  gen->add_option("--per-class", o.per_class, "training images per class");
  gen->add_option("--test-per-class", o.test_per_class, "test images per class");
  common(app.add_subcommand("train", "train a model and write metrics + checkpoint"));
  common(app.add_subcommand("eval", "evaluate a checkpoint"));
  auto* prof = app.add_subcommand("profile", "firing rates, SOPs and energy estimate");
  common(prof);
  prof->add_option("--samples", o.samples, "images used to measure firing rates");
  auto* sfr = app.add_subcommand("export-sfr", "spike firing rate map of one image (CSV + PGM)");
  common(sfr);
  sfr->add_option("--index", o.index, "test image index");
  auto* att = app.add_subcommand("inspect-attention", "dump attention scores [layer,t,b,h,i,j] as JSON");
  common(att);
  att->add_option("--index", o.index, "first test image index");
  att->add_option("--count", o.count, "number of images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: USAGE: " << one_line(e.what()) << "\n";
    return 2;
  }
  for (auto* sub : app.get_subcommands()) o.command = sub->get_name();

  try {
    return run_command(o, out, err);
  } catch (const Error& e) {
    err << "error: " << category_name(e.category()) << ": " << one_line(e.what()) << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    err << "error: IO: " << one_line(e.what()) << "\n";
    return 1;
  }
}

}  // namespace s2tdpt
