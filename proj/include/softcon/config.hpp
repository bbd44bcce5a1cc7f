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

// Flat run configuration. Every tunable has one key, shared by config files
// (`key = value`, `#` comments) and command-line flags (`--key value`).

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "softcon/binio.hpp"
#include "softcon/datasynth.hpp"
#include "softcon/evalkit.hpp"
#include "softcon/text.hpp"
#include "softcon/trainkit.hpp"

namespace softcon {

struct RunConfig {
  std::uint64_t seed = 0;
  GenConfig gen;
  TrainConfig train;
  ProbeConfig probe;
  // ablate only
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<Objective> variants{Objective::kContrast, Objective::kContrastSupCon, Objective::kContrastSoftCon};
  std::vector<double> lambdas{0.1};
  std::vector<double> mask_ratios{0.2};
  std::vector<InitMode> inits{InitMode::kScratch};

  /// Copies the master seed into every component.
  void propagate_seed() {
    gen.seed = seed;
    train.seed = seed;
    probe.seed = seed;
  }

  /// Training geometry follows the dataset it runs on.
  void adopt_dataset(const Dataset& ds) {
    train.arch.channels = ds.channels;
    train.arch.image_size = ds.size;
    train.augment.out_size = ds.size;
  }

  void validate() const {
    gen.validate();
    train.validate();
    if (probe.epochs == 0 || probe.batch_size == 0 || !(probe.lr > 0.0) || !(probe.weight_decay >= 0.0)) {
      throw ValidationError("probe settings must be positive");
    }
    if (seeds.empty() || variants.empty() || lambdas.empty() || mask_ratios.empty() || inits.empty()) {
      throw ValidationError("ablation grids must be nonempty");
    }
  }
};

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

namespace config_detail {

inline std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = s.find(',');
    out.push_back(trim(s.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  if (out.size() == 1 && out[0].empty()) out.clear();
  return out;
}

inline bool parse_bool(std::string_view s, std::string_view key) {
  s = trim(s);
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw ValidationError(std::string(key) + ": '" + std::string(s) + "' is not a boolean");
}

template <class T, class Parse, class Show>
std::pair<std::function<void(RunConfig&, std::string_view)>, std::function<std::string(const RunConfig&)>> list_key(
    std::vector<T> RunConfig::*field, std::string_view key, Parse parse, Show show) {
  return {[=](RunConfig& c, std::string_view v) {
            std::vector<T> out;
            for (auto item : split_list(v)) out.push_back(parse(item, key));
            (c.*field) = std::move(out);
          },
          [=](const RunConfig& c) {
            std::string s;
            for (const auto& x : c.*field) s += (s.empty() ? "" : ",") + show(x);
            return s;
          }};
}

}  // namespace config_detail

inline const std::vector<ConfigKey>& config_keys() {
  using namespace config_detail;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto size_key = [&](std::string name, std::string help, auto access) {
      k.push_back({name, std::move(help),
                   [=](RunConfig& c, std::string_view v) { access(c) = static_cast<std::size_t>(parse_uint(v, name)); },
                   [=](const RunConfig& c) { return std::to_string(access(const_cast<RunConfig&>(c))); }});
    };
    auto real_key = [&](std::string name, std::string help, auto access) {
      k.push_back({name, std::move(help), [=](RunConfig& c, std::string_view v) { access(c) = parse_double(v, name); },
                   [=](const RunConfig& c) { return format_double(access(const_cast<RunConfig&>(c))); }});
    };
    auto bool_key = [&](std::string name, std::string help, auto access) {
      k.push_back({name, std::move(help), [=](RunConfig& c, std::string_view v) { access(c) = parse_bool(v, name); },
                   [=](const RunConfig& c) { return std::string(access(const_cast<RunConfig&>(c)) ? "1" : "0"); }});
    };
    auto doubles = [](std::vector<double> RunConfig::*f, std::string_view key) {
      return list_key<double>(f, key, [](std::string_view s, std::string_view w) { return parse_double(s, w); },
                              [](double x) { return format_double(x); });
    };

    k.push_back({"seed", "master seed for generation, training and probing",
                 [](RunConfig& c, std::string_view v) {
                   c.seed = parse_uint(v, "seed");
                   c.propagate_seed();
                 },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});

    size_key("scenes", "number of generated scenes", [](RunConfig& c) -> std::size_t& { return c.gen.num_scenes; });
    size_key("channels", "spectral channels of generated scenes", [](RunConfig& c) -> std::size_t& { return c.gen.channels; });
    k.push_back({"size", "scene side length in pixels",
                 [](RunConfig& c, std::string_view v) {
                   c.gen.size = static_cast<std::size_t>(parse_uint(v, "size"));
                   c.train.arch.image_size = c.train.augment.out_size = c.gen.size;
                 },
                 [](const RunConfig& c) { return std::to_string(c.gen.size); }});
    size_key("classes", "land-cover classes", [](RunConfig& c) -> std::size_t& { return c.gen.num_classes; });
    real_key("noise", "per-pixel noise standard deviation", [](RunConfig& c) -> double& { return c.gen.noise_std; });
    {
      k.push_back({"label-counts", "probabilities of 1..K labels per scene",
                   [](RunConfig& c, std::string_view v) {
                     c.gen.label_counts.clear();
                     for (auto x : split_list(v)) c.gen.label_counts.push_back(parse_double(x, "label-counts"));
                   },
                   [](const RunConfig& c) {
                     std::string out;
                     for (double x : c.gen.label_counts) out += (out.empty() ? "" : ",") + format_double(x);
                     return out;
                   }});
      k.push_back({"season-counts", "probabilities of 1..S seasons per scene",
                   [](RunConfig& c, std::string_view v) {
                     c.gen.season_counts.clear();
                     for (auto x : split_list(v)) c.gen.season_counts.push_back(parse_double(x, "season-counts"));
                   },
                   [](const RunConfig& c) {
                     std::string out;
                     for (double x : c.gen.season_counts) out += (out.empty() ? "" : ",") + format_double(x);
                     return out;
                   }});
    }

    k.push_back({"encoder", "trunk: transformer or mlp",
                 [](RunConfig& c, std::string_view v) {
                   v = trim(v);
                   if (v == "transformer") {
                     c.train.arch.kind = EncoderKind::kTransformer;
                   } else if (v == "mlp") {
                     c.train.arch.kind = EncoderKind::kMlp;
                   } else {
                     throw ValidationError("encoder: '" + std::string(v) + "' is not transformer or mlp");
                   }
                 },
                 [](const RunConfig& c) {
                   return std::string(c.train.arch.kind == EncoderKind::kMlp ? "mlp" : "transformer");
                 }});
    size_key("patch-size", "patch side length", [](RunConfig& c) -> std::size_t& { return c.train.arch.patch_size; });
    size_key("d-model", "token width", [](RunConfig& c) -> std::size_t& { return c.train.arch.d_model; });
    size_key("heads", "attention heads", [](RunConfig& c) -> std::size_t& { return c.train.arch.heads; });
    size_key("blocks", "trunk depth", [](RunConfig& c) -> std::size_t& { return c.train.arch.blocks; });
    size_key("d-hidden", "hidden width of MLPs and projectors", [](RunConfig& c) -> std::size_t& { return c.train.arch.d_hidden; });
    size_key("d-proj", "projector output width", [](RunConfig& c) -> std::size_t& { return c.train.arch.d_proj; });

    k.push_back({"objective", "contrast, softcon, contrast+supcon or contrast+softcon",
                 [](RunConfig& c, std::string_view v) { c.train.objective = parse_objective(trim(v)); },
                 [](const RunConfig& c) { return std::string(objective_name(c.train.objective)); }});
    real_key("temperature", "softmax temperature of the contrast term",
             [](RunConfig& c) -> double& { return c.train.loss.temperature; });
    real_key("lambda", "weight of the soft term", [](RunConfig& c) -> double& { return c.train.loss.weight; });
    bool_key("symmetrize", "average both view orders", [](RunConfig& c) -> bool& { return c.train.loss.symmetrize; });
    real_key("momentum", "EMA coefficient of the momentum encoder", [](RunConfig& c) -> double& { return c.train.momentum; });
    real_key("mask-ratio", "fraction of patches dropped on the trainable branch",
             [](RunConfig& c) -> double& { return c.train.mask_ratio; });
    bool_key("queue", "extend contrast negatives with a FIFO queue", [](RunConfig& c) -> bool& { return c.train.use_queue; });
    size_key("queue-size", "queue capacity", [](RunConfig& c) -> std::size_t& { return c.train.queue_size; });
    size_key("batch-size", "pretraining batch size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
    size_key("epochs", "pretraining epochs", [](RunConfig& c) -> std::size_t& { return c.train.epochs; });
    size_key("warmup-epochs", "linear warmup epochs", [](RunConfig& c) -> std::size_t& { return c.train.warmup_epochs; });
    real_key("lr", "peak pretraining learning rate", [](RunConfig& c) -> double& { return c.train.base_lr; });
    real_key("weight-decay", "AdamW decoupled weight decay", [](RunConfig& c) -> double& { return c.train.adamw.weight_decay; });
    real_key("crop-scale-min", "smallest crop area fraction", [](RunConfig& c) -> double& { return c.train.augment.scale_min; });

    size_key("probe-epochs", "linear probe epochs", [](RunConfig& c) -> std::size_t& { return c.probe.epochs; });
    real_key("probe-lr", "linear probe learning rate", [](RunConfig& c) -> double& { return c.probe.lr; });
    size_key("probe-batch-size", "linear probe batch size", [](RunConfig& c) -> std::size_t& { return c.probe.batch_size; });
    real_key("probe-weight-decay", "linear probe weight decay", [](RunConfig& c) -> double& { return c.probe.weight_decay; });

    {
      auto [s, g] = list_key<std::uint64_t>(
          &RunConfig::seeds, "seeds", [](std::string_view x, std::string_view w) { return parse_uint(x, w); },
          [](std::uint64_t x) { return std::to_string(x); });
      k.push_back({"seeds", "ablation seeds", s, g});
    }
    {
      auto [s, g] = list_key<Objective>(
          &RunConfig::variants, "variants", [](std::string_view x, std::string_view) { return parse_objective(x); },
          [](Objective o) { return std::string(objective_name(o)); });
      k.push_back({"variants", "ablation objectives", s, g});
    }
    {
      auto [s, g] = doubles(&RunConfig::lambdas, "lambdas");
      k.push_back({"lambdas", "ablation soft-term weights", s, g});
    }
    {
      auto [s, g] = doubles(&RunConfig::mask_ratios, "mask-ratios");
      k.push_back({"mask-ratios", "ablation masking ratios", s, g});
    }
    {
      auto [s, g] = list_key<InitMode>(
          &RunConfig::inits, "inits", [](std::string_view x, std::string_view) { return parse_init(x); },
          [](InitMode m) { return std::string(init_name(m)); });
      k.push_back({"inits", "ablation initializations: scratch, continual", s, g});
    }
    return k;
  }();
  return keys;
}

inline const ConfigKey& find_config_key(std::string_view name) {
  for (const auto& k : config_keys()) {
    if (k.name == name) return k;
  }
  throw ValidationError("unknown config key '" + std::string(name) + "'");
}

inline void apply_setting(RunConfig& c, std::string_view key, std::string_view value) {
  find_config_key(key).set(c, value);
}

/// `key = value` pairs in file order. Underscores in keys are accepted as dashes.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key(trim(line.substr(0, eq)));
    std::replace(key.begin(), key.end(), '_', '-');
    if (key.empty()) throw ValidationError("config line " + std::to_string(line_no) + ": empty key");
    find_config_key(key);
    out.emplace_back(std::move(key), std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

inline void apply_config_text(RunConfig& c, std::string_view text) {
  for (const auto& [k, v] : parse_config_text(text)) apply_setting(c, k, v);
}

inline void apply_config_file(RunConfig& c, const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  apply_config_text(c, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

/// Effective configuration as a loadable config file.
inline std::string config_text(const RunConfig& c) {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + k.get(c) + "\n";
  return out;
}

}  // namespace softcon
