// Copyright 2026 The SoftCon Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// The `softcon` command-line front end. Exit codes: 0 success, 1 invalid
// arguments or configuration, 2 file I/O or format errors.

#include <CLI11.hpp>

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "softcon/checkpoint.hpp"
#include "softcon/config.hpp"
#include "softcon/datasynth.hpp"
#include "softcon/evalkit.hpp"
#include "softcon/gradsuite.hpp"
#include "softcon/trainkit.hpp"

namespace softcon {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitIo = 2;

/// Sidecar holding the effective configuration of an output artifact.
inline std::filesystem::path config_sidecar(const std::filesystem::path& artifact) {
  return std::filesystem::path(artifact.string() + ".config.txt");
}

namespace cli_detail {

namespace fs = std::filesystem;

/// Flags collected during parsing; applied after the config file so they win.
struct Settings {
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> flags;

  RunConfig resolve() const {
    RunConfig c;
    if (!config_file.empty()) apply_config_file(c, config_file);
    for (const auto& [k, v] : flags) apply_setting(c, k, v);
    return c;
  }
};

inline void add_config_flags(CLI::App* cmd, Settings& s) {
  cmd->add_option("--config", s.config_file, "config file of `key = value` lines; flags override it");
  for (const auto& key : config_keys()) {
    const std::string name = key.name;
    cmd->add_option_function<std::string>(
        "--" + name, [&s, name](const std::string& v) { s.flags.emplace_back(name, v); }, key.help);
  }
}

inline void write_with_config(const fs::path& path, std::string_view text, const RunConfig& c) {
  write_text(path, text);
  write_text(config_sidecar(path), config_text(c));
}

inline int synth(const Settings& s, const fs::path& out_path, std::ostream& out) {
  const RunConfig c = s.resolve();
  c.gen.validate();
  const Dataset ds = generate_dataset(c.gen);
  save_dataset(ds, out_path);
  write_text(config_sidecar(out_path), config_text(c));
  out << "wrote " << ds.scenes.size() << " scenes to " << out_path.string() << " (manifest "
      << manifest_path(out_path).string() << ")\n";
  return kExitOk;
}

inline int stats(const fs::path& data, std::ostream& out) {
  out << dataset_stats(load_dataset(data)).to_text();
  return kExitOk;
}

inline int pretrain_cmd(const Settings& s, const fs::path& data, const fs::path& out_path, fs::path metrics_path,
                        const std::string& init_from, std::ostream& out) {
  RunConfig c = s.resolve();
  const Dataset ds = load_dataset(data);
  std::optional<ParamSet> init;
  if (!init_from.empty()) {
    const Checkpoint source = load_checkpoint(init_from);
    c.train.arch = Architecture::from_metadata(source);
    c.adopt_dataset(ds);
    c.validate();
    Rng rng(derive_seed({c.train.seed, kContinualStream}));
    init = init_continual(source, c.train.arch, rng);
  } else {
    c.adopt_dataset(ds);
    c.validate();
  }
  if (metrics_path.empty()) metrics_path = fs::path(out_path).replace_extension(".metrics.csv");

  double epoch_sum = 0.0;
  std::size_t epoch_steps = 0, current = 0;
  auto flush = [&] {
    if (epoch_steps) out << "epoch " << current << " mean loss " << format_double(epoch_sum / epoch_steps) << "\n";
  };
  const PretrainResult r = pretrain(ds, c.train, init ? &*init : nullptr, [&](const StepMetrics& m) {
    if (m.epoch != current) {
      flush();
      current = m.epoch;
      epoch_sum = 0.0;
      epoch_steps = 0;
    }
    epoch_sum += m.total;
    ++epoch_steps;
  });
  flush();
  Checkpoint ckpt = r.checkpoint;
  if (!init_from.empty()) ckpt.metadata["train.init_from"] = init_from;
  save_checkpoint(ckpt, out_path);
  write_text(config_sidecar(out_path), config_text(c));
  write_with_config(metrics_path, metrics_csv(r.metrics), c);
  out << "wrote " << out_path.string() << " after " << r.metrics.size() << " steps; metrics in "
      << metrics_path.string() << "\n";
  return kExitOk;
}

inline int probe_cmd(const Settings& s, const fs::path& data, const fs::path& ckpt_path, const fs::path& report_path,
                     std::ostream& out) {
  RunConfig c = s.resolve();
  const Dataset ds = load_dataset(data);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  c.train.arch = Architecture::from_metadata(ckpt);
  c.train.augment.out_size = c.train.arch.image_size;
  c.validate();
  const ProbeReport r = probe_encoder(base_params(ckpt), c.train.arch, ds, c.probe);
  std::string text = "micro_map = " + format_double(r.micro_map) + "\nmacro_map = " + format_double(r.macro_map) + "\n";
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    text += "ap_class_" + std::to_string(k) + " = " + (r.per_class[k] ? format_double(*r.per_class[k]) : "none") + "\n";
  }
  out << text;
  if (!report_path.empty()) {
    text += "checkpoint = " + ckpt_path.string() + "\n" + r.config;
    write_with_config(report_path, text, c);
  }
  return kExitOk;
}

inline int ablate_cmd(const Settings& s, const fs::path& data, const fs::path& out_path, const std::string& source_path,
                      std::ostream& out) {
  RunConfig c = s.resolve();
  const Dataset ds = load_dataset(data);
  c.adopt_dataset(ds);
  c.validate();
  std::optional<Checkpoint> source;
  if (!source_path.empty()) source = load_checkpoint(source_path);
  std::vector<AblationVariant> variants;
  for (auto o : c.variants)
    for (double l : c.lambdas)
      for (double r : c.mask_ratios)
        for (auto i : c.inits) variants.push_back({o, l, r, i});
  AblationSetup setup{c.train, c.probe, source ? &*source : nullptr};
  const auto rows = ablation_report(ds, variants, c.seeds, setup, [&](const AblationRow& r) {
    out << objective_name(r.variant.objective) << " lambda " << format_double(r.variant.lambda) << " mask "
        << format_double(r.variant.mask_ratio) << " " << init_name(r.variant.init) << " seed " << r.seed
        << ": micro " << format_double(r.micro_map) << " macro " << format_double(r.macro_map) << "\n";
  });
  write_with_config(out_path, ablation_csv(rows), c);
  out << "wrote " << out_path.string() << "\n";
  return kExitOk;
}

inline int gradcheck_cmd(const GradSuiteConfig& cfg, std::ostream& out, std::ostream& err) {
  constexpr double kTolerance = 1e-6;
  bool ok = true;
  for (const auto& r : run_grad_suite(cfg)) {
    out << r.loss << " max_rel_error " << r.max_error << " over " << r.instances << " instances\n";
    ok = ok && r.max_error <= kTolerance;
  }
  if (!ok) err << "gradient check exceeded " << kTolerance << "\n";
  return ok ? kExitOk : kExitInvalid;
}

}  // namespace cli_detail

/// Runs one invocation; args[0] is the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  using namespace cli_detail;
  CLI::App app{"Soft contrastive pretraining on synthetic multi-label scenes", "softcon"};
  app.require_subcommand(1);

  Settings s;
  std::string data, out_path, metrics, init_from, checkpoint, source;

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset and its manifest");
  synth_cmd->add_option("--out", out_path, "dataset file")->required();
  add_config_flags(synth_cmd, s);

  auto* stats_cmd = app.add_subcommand("stats", "print label and season statistics of a dataset");
  stats_cmd->add_option("--data", data, "dataset file")->required();

  auto* pre = app.add_subcommand("pretrain", "pretrain an encoder and write a checkpoint");
  pre->add_option("--data", data, "dataset file")->required();
  pre->add_option("--out", out_path, "checkpoint file")->required();
  pre->add_option("--metrics", metrics, "metrics CSV (default: <out stem>.metrics.csv)");
  pre->add_option("--init-from", init_from, "source checkpoint for continual pretraining");
  add_config_flags(pre, s);

  auto* probe = app.add_subcommand("probe", "linear probe on frozen features");
  probe->add_option("--data", data, "dataset file")->required();
  probe->add_option("--checkpoint", checkpoint, "encoder checkpoint")->required();
  probe->add_option("--out", out_path, "report file");
  add_config_flags(probe, s);

  auto* ablate = app.add_subcommand("ablate", "pretrain and probe every variant and seed");
  ablate->add_option("--data", data, "dataset file")->required();
  ablate->add_option("--out", out_path, "ablation CSV")->required();
  ablate->add_option("--source", source, "source checkpoint for continual variants");
  add_config_flags(ablate, s);

  GradSuiteConfig gc;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every loss");
  grad->add_option("--instances", gc.instances, "random instances per loss");
  grad->add_option("--batch", gc.batch, "batch size N");
  grad->add_option("--dim", gc.dim, "embedding width d");
  grad->add_option("--epsilon", gc.epsilon, "central-difference step");
  grad->add_option("--seed", gc.seed, "seed");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitInvalid;
  }

  try {
    if (synth_cmd->parsed()) return synth(s, out_path, out);
    if (stats_cmd->parsed()) return stats(data, out);
    if (pre->parsed()) return pretrain_cmd(s, data, out_path, metrics, init_from, out);
    if (probe->parsed()) return probe_cmd(s, data, checkpoint, out_path, out);
    if (ablate->parsed()) return ablate_cmd(s, data, out_path, source, out);
    return gradcheck_cmd(gc, out, err);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
}

}  // namespace softcon
