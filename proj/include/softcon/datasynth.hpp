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

// Synthetic multi-label scenes.
//
// A scene draws k distinct classes, cuts the canvas into k cells by recursive
// guillotine splits, and paints one rectangle of class i inside cell i for
// i >= 1; everything else belongs to the first class. Each class has a fixed
// spectrum, and every season rescales the clean image by a global factor and
// adds Gaussian noise.
//
// File layout (little-endian):
//   "SCML0001" u32 scenes, u32 channels, u32 height, u32 width, u32 classes
//   per scene: u32 id, u8 seasons, seasons*C*H*W f32, H*W u8 class map, u16 label bits

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "softcon/binio.hpp"
#include "softcon/error.hpp"
#include "softcon/labelsim.hpp"
#include "softcon/rng.hpp"
#include "softcon/scene.hpp"
#include "softcon/text.hpp"

namespace softcon {

inline constexpr std::string_view kDatasetMagic = "SCML0001";
inline constexpr std::size_t kMaxClasses = 16;  // label is stored as a u16 bitmask

struct GenConfig {
  std::size_t num_scenes = 2000;
  std::size_t channels = 4;
  std::size_t size = 32;
  std::size_t num_classes = kDefaultNumClasses;
  // Fraction of scenes with k = 1, 2, ... labels.
  std::vector<double> label_counts{0.17, 0.07, 0.06, 0.16, 0.16, 0.14, 0.12, 0.08, 0.04};
  // Fraction of locations with 1, 2, 3, 4 seasons.
  std::vector<double> season_counts{0.04, 0.16, 0.35, 0.45};
  double noise_std = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_scenes == 0) throw ValidationError("num_scenes must be positive");
    if (channels == 0) throw ValidationError("channels must be positive");
    if (num_classes == 0 || num_classes > kMaxClasses) {
      throw ValidationError("num_classes must lie in [1, " + std::to_string(kMaxClasses) + "]");
    }
    if (size < 8) throw ValidationError("scene size must be at least 8");
    if (season_counts.empty() || season_counts.size() > 255) throw ValidationError("season_counts must have 1..255 entries");
    if (!(noise_std >= 0.0)) throw ValidationError("noise_std must be non-negative");
    for (const auto* dist : {&label_counts, &season_counts}) {
      double total = 0.0;
      for (double p : *dist) {
        if (!(p >= 0.0)) throw ValidationError("distribution entries must be non-negative");
        total += p;
      }
      if (std::abs(total - 1.0) > 1e-9) throw ValidationError("distribution sums to " + format_double(total) + ", not 1");
    }
    for (std::size_t k = num_classes; k < label_counts.size(); ++k) {
      if (label_counts[k] > 0.0) {
        throw ValidationError("label count " + std::to_string(k + 1) + " exceeds the " + std::to_string(num_classes) +
                              " available classes");
      }
    }
  }

  std::string to_text() const {
    auto list = [](const std::vector<double>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
      return s;
    };
    std::ostringstream o;
    o << "num_scenes = " << num_scenes << "\nchannels = " << channels << "\nsize = " << size
      << "\nnum_classes = " << num_classes << "\nlabel_counts = " << list(label_counts)
      << "\nseason_counts = " << list(season_counts) << "\nnoise_std = " << format_double(noise_std)
      << "\nseed = " << seed << "\n";
    return o.str();
  }
};

/// num_classes x channels table of mean class reflectances, U(0,1).
inline Tensor class_spectra(const GenConfig& cfg) {
  Rng rng(derive_seed({cfg.seed, 0x5bec7a11ull}));
  Tensor s({cfg.num_classes, cfg.channels});
  for (double& v : s.values()) v = rng.uniform();
  return s;
}

namespace synth_detail {

struct Rect {
  std::size_t x, y, w, h;
};

// Splits r into n non-empty cells, always cutting the longer side.
inline void guillotine(const Rect& r, std::size_t n, Rng& rng, std::vector<Rect>& out) {
  if (n == 1) {
    out.push_back(r);
    return;
  }
  const std::size_t n1 = n / 2, n2 = n - n1;
  const bool cut_x = r.w >= r.h;
  const std::size_t len = cut_x ? r.w : r.h;
  if (len < 2) throw ValidationError("scene too small for " + std::to_string(n) + " label cells");
  const double frac = static_cast<double>(n1) / static_cast<double>(n) + rng.uniform(-0.15, 0.15);
  const auto at = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(frac * static_cast<double>(len))), 1,
                                          len - 1);
  if (cut_x) {
    guillotine({r.x, r.y, at, r.h}, n1, rng, out);
    guillotine({r.x + at, r.y, r.w - at, r.h}, n2, rng, out);
  } else {
    guillotine({r.x, r.y, r.w, at}, n1, rng, out);
    guillotine({r.x, r.y + at, r.w, r.h - at}, n2, rng, out);
  }
}

}  // namespace synth_detail

/// One scene from its own stream. `spectra` comes from class_spectra(cfg).
inline Scene generate_scene(Rng& rng, const GenConfig& cfg, const Tensor& spectra, std::uint32_t id) {
  const std::size_t k = 1 + rng.categorical(cfg.label_counts);
  if (k > cfg.num_classes) {
    throw ValidationError("cannot place " + std::to_string(k) + " labels with " + std::to_string(cfg.num_classes) +
                          " classes");
  }
  std::vector<std::uint8_t> classes(cfg.num_classes);
  std::iota(classes.begin(), classes.end(), std::uint8_t{0});
  for (std::size_t i = 0; i < k; ++i) std::swap(classes[i], classes[i + rng.index(cfg.num_classes - i)]);
  const std::size_t seasons = 1 + rng.categorical(cfg.season_counts);

  const std::size_t n = cfg.size;
  PixelMap map(n, n, classes[0]);
  std::vector<synth_detail::Rect> cells;
  synth_detail::guillotine({0, 0, n, n}, k, rng, cells);
  for (std::size_t i = 1; i < k; ++i) {
    const auto& c = cells[i];
    const std::size_t bw = std::max<std::size_t>(1, std::lround(static_cast<double>(c.w) * rng.uniform(0.5, 1.0)));
    const std::size_t bh = std::max<std::size_t>(1, std::lround(static_cast<double>(c.h) * rng.uniform(0.5, 1.0)));
    const std::size_t bx = c.x + rng.index(c.w - bw + 1), by = c.y + rng.index(c.h - bh + 1);
    for (std::size_t y = by; y < by + bh; ++y)
      for (std::size_t x = bx; x < bx + bw; ++x) map.at(y, x) = classes[i];
  }

  Scene s;
  s.id = id;
  s.channels = cfg.channels;
  s.size = n;
  s.map = map;
  s.label = aggregate_scene_labels(map, static_cast<int>(cfg.num_classes), 0.0);
  if (s.label.count() != k) throw NumericError("scene " + std::to_string(id) + ": a label cell was overpainted");
  for (std::size_t t = 0; t < seasons; ++t) {
    const double factor = rng.uniform(0.7, 1.3);
    std::vector<float> img(cfg.channels * n * n);
    for (std::size_t ch = 0; ch < cfg.channels; ++ch) {
      for (std::size_t p = 0; p < n * n; ++p) {
        const double clean = spectra.at(map.classes()[p], ch);
        img[ch * n * n + p] = static_cast<float>(clean * factor + rng.normal(0.0, cfg.noise_std));
      }
    }
    s.seasons.push_back(std::move(img));
  }
  return s;
}

inline Scene generate_scene(const GenConfig& cfg, std::uint32_t id) {
  cfg.validate();
  Rng rng(derive_seed({cfg.seed, id}));
  return generate_scene(rng, cfg, class_spectra(cfg), id);
}

inline Dataset generate_dataset(const GenConfig& cfg) {
  cfg.validate();
  const Tensor spectra = class_spectra(cfg);
  Dataset ds;
  ds.channels = cfg.channels;
  ds.size = cfg.size;
  ds.num_classes = cfg.num_classes;
  ds.scenes.reserve(cfg.num_scenes);
  for (std::size_t i = 0; i < cfg.num_scenes; ++i) {
    const auto id = static_cast<std::uint32_t>(i);
    Rng rng(derive_seed({cfg.seed, id}));
    ds.scenes.push_back(generate_scene(rng, cfg, spectra, id));
  }
  return ds;
}

// --- persistence ----------------------------------------------------------------

inline std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  ByteWriter w;
  w.bytes(kDatasetMagic);
  for (std::size_t v : {ds.scenes.size(), ds.channels, ds.size, ds.size, ds.num_classes}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  for (const auto& s : ds.scenes) {
    if (s.channels != ds.channels || s.size != ds.size) throw ShapeError("scene " + std::to_string(s.id) + " dims differ");
    if (s.seasons.empty() || s.seasons.size() > 255) throw ValidationError("scene season count out of range");
    w.u32(s.id);
    w.u8(static_cast<std::uint8_t>(s.seasons.size()));
    for (const auto& img : s.seasons) {
      for (float v : img) w.f32(v);
    }
    for (std::uint8_t c : s.map.classes()) w.u8(c);
    w.u16(static_cast<std::uint16_t>(s.label.mask()));
  }
  return w.take();
}

inline Dataset decode_dataset(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  if (r.bytes(std::min<std::size_t>(kDatasetMagic.size(), r.remaining()), "magic") != kDatasetMagic) {
    throw ParseError("not a dataset file (bad magic)", 0);
  }
  Dataset ds;
  const std::uint32_t count = r.u32();
  ds.channels = r.u32();
  const std::size_t h_off = r.offset();
  const std::uint32_t h = r.u32(), w = r.u32();
  ds.num_classes = r.u32();
  if (h != w || h == 0) throw ParseError("scenes must be square and nonempty", h_off);
  if (ds.channels == 0 || ds.num_classes == 0 || ds.num_classes > kMaxClasses) {
    throw ParseError("invalid channel or class count in header", h_off);
  }
  ds.size = h;
  const std::size_t pixels = ds.size * ds.size;
  for (std::uint32_t i = 0; i < count; ++i) {
    Scene s;
    s.id = r.u32();
    s.channels = ds.channels;
    s.size = ds.size;
    const std::size_t season_off = r.offset();
    const std::uint8_t seasons = r.u8();
    if (seasons == 0) throw ParseError("scene " + std::to_string(s.id) + " has no seasons", season_off);
    r.need(seasons * ds.channels * pixels * 4, "season images");
    for (std::uint8_t t = 0; t < seasons; ++t) {
      std::vector<float> img(ds.channels * pixels);
      for (float& v : img) v = r.f32();
      s.seasons.push_back(std::move(img));
    }
    const std::size_t map_off = r.offset();
    std::vector<std::uint8_t> cls(pixels);
    for (auto& c : cls) {
      c = r.u8();
      if (c >= ds.num_classes) throw ParseError("class id out of range", map_off);
    }
    s.map = PixelMap(ds.size, ds.size, std::move(cls));
    const std::size_t label_off = r.offset();
    const std::uint16_t bits = r.u16();
    if (bits == 0 || (bits >> ds.num_classes) != 0) throw ParseError("invalid label bits", label_off);
    s.label = MultiHot::from_mask(bits, ds.num_classes);
    ds.scenes.push_back(std::move(s));
  }
  if (r.remaining() != 0) throw ParseError("trailing bytes after last scene", r.offset());
  return ds;
}

inline std::string manifest_csv(const Dataset& ds) {
  std::string out = "id,num_labels,label_bits_hex,seasons,split\n";
  for (const auto& s : ds.scenes) {
    char hex[8];
    std::snprintf(hex, sizeof hex, "%04x", static_cast<unsigned>(s.label.mask()));
    out += std::to_string(s.id) + "," + std::to_string(s.label.count()) + "," + hex + "," +
           std::to_string(s.num_seasons()) + "," + std::string(split_name(split_of(s.id))) + "\n";
  }
  return out;
}

/// `data.scml` -> `data.manifest.csv`.
inline std::filesystem::path manifest_path(const std::filesystem::path& dataset) {
  auto p = dataset;
  p.replace_extension(".manifest.csv");
  return p;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  write_file(path, encode_dataset(ds));
  write_text(manifest_path(path), manifest_csv(ds));
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  try {
    return decode_dataset(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

// --- statistics -------------------------------------------------------------------

struct DatasetStats {
  std::size_t scenes = 0;
  std::vector<double> label_counts;  // [k] = fraction of scenes with k labels, k = 0..C
  std::vector<double> class_presence;  // [c] = fraction of scenes containing class c
  std::vector<double> season_counts;   // [s] = fraction of scenes with s seasons, s = 0..max
  std::size_t train = 0, test = 0;

  double single_label_fraction() const { return label_counts.size() > 1 ? label_counts[1] : 0.0; }
  double at_least_labels(std::size_t k) const {
    double f = 0.0;
    for (std::size_t i = k; i < label_counts.size(); ++i) f += label_counts[i];
    return f;
  }
  double at_least_seasons(std::size_t k) const {
    double f = 0.0;
    for (std::size_t i = k; i < season_counts.size(); ++i) f += season_counts[i];
    return f;
  }

  std::string to_text() const {
    std::ostringstream o;
    o << "scenes " << scenes << " (train " << train << ", test " << test << ")\n";
    o << "labels_per_scene";
    for (std::size_t k = 1; k < label_counts.size(); ++k) o << " " << k << ":" << format_double(label_counts[k]);
    o << "\nclass_presence";
    for (std::size_t c = 0; c < class_presence.size(); ++c) o << " " << c << ":" << format_double(class_presence[c]);
    o << "\nseasons";
    for (std::size_t s = 1; s < season_counts.size(); ++s) o << " " << s << ":" << format_double(season_counts[s]);
    o << "\nsingle_label " << format_double(single_label_fraction()) << "\nfour_or_more_labels "
      << format_double(at_least_labels(4)) << "\ntwo_or_more_seasons " << format_double(at_least_seasons(2)) << "\n";
    return o.str();
  }
};

inline DatasetStats dataset_stats(const Dataset& ds) {
  if (ds.scenes.empty()) throw ValidationError("dataset has no scenes");
  DatasetStats st;
  st.scenes = ds.scenes.size();
  st.label_counts.assign(ds.num_classes + 1, 0.0);
  st.class_presence.assign(ds.num_classes, 0.0);
  std::size_t max_seasons = 0;
  for (const auto& s : ds.scenes) max_seasons = std::max(max_seasons, s.num_seasons());
  st.season_counts.assign(max_seasons + 1, 0.0);
  for (const auto& s : ds.scenes) {
    st.label_counts[s.label.count()] += 1.0;
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
      if (s.label.test(c)) st.class_presence[c] += 1.0;
    }
    st.season_counts[s.num_seasons()] += 1.0;
    (split_of(s.id) == Split::kTrain ? st.train : st.test) += 1;
  }
  const double n = static_cast<double>(st.scenes);
  for (auto* v : {&st.label_counts, &st.class_presence, &st.season_counts}) {
    for (double& x : *v) x /= n;
  }
  return st;
}

}  // namespace softcon
