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

// Micro vision encoder with two projector heads.
//
// Images are cut into p x p patches, embedded by one affine map plus a learned
// position table, and run through either a pre-norm transformer or a stack of
// affine+ReLU layers. The scene feature is the mean of the final-normed
// tokens. Masked patches are removed before embedding, so the trunk only ever
// sees visible tokens and attention is |visible| x |visible|.
//
// Parameter names:
//   encoder.patch_embed.{weight,bias}   encoder.pos_embed
//   encoder.blocks.<i>.{ln1,ln2}.{gain,bias}
//   encoder.blocks.<i>.attn.{qkv,proj}.{weight,bias}
//   encoder.blocks.<i>.mlp.{fc1,fc2}.{weight,bias}     (transformer)
//   encoder.blocks.<i>.fc.{weight,bias}                (mlp trunk)
//   encoder.norm.{gain,bias}
//   <head>.{fc1,fc2}.{weight,bias}  for head in {proj_contrast, proj_soft}

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "softcon/checkpoint.hpp"
#include "softcon/error.hpp"
#include "softcon/graph.hpp"
#include "softcon/rng.hpp"
#include "softcon/tensor.hpp"

namespace softcon {

enum class EncoderKind { kTransformer, kMlp };

inline constexpr std::string_view kContrastHead = "proj_contrast";
inline constexpr std::string_view kSoftHead = "proj_soft";
inline constexpr double kPatchEmbedInitStd = 0.02;

struct Architecture {
  EncoderKind kind = EncoderKind::kTransformer;
  std::size_t channels = 4;
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t blocks = 4;
  std::size_t d_hidden = 128;
  std::size_t d_proj = 32;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t head_dim() const { return d_model / heads; }

  void validate() const {
    if (channels == 0 || image_size == 0 || patch_size == 0 || d_model == 0 || d_hidden == 0 || d_proj == 0) {
      throw ValidationError("architecture dimensions must be positive");
    }
    if (image_size % patch_size != 0) throw ValidationError("image size must be divisible by patch size");
    if (kind == EncoderKind::kTransformer && (heads == 0 || d_model % heads != 0)) {
      throw ValidationError("d_model must be divisible by the head count");
    }
  }

  std::map<std::string, std::string> to_metadata() const {
    return {{"arch.kind", kind == EncoderKind::kMlp ? "mlp" : "transformer"},
            {"arch.channels", std::to_string(channels)},
            {"arch.image_size", std::to_string(image_size)},
            {"arch.patch_size", std::to_string(patch_size)},
            {"arch.d_model", std::to_string(d_model)},
            {"arch.heads", std::to_string(heads)},
            {"arch.blocks", std::to_string(blocks)},
            {"arch.d_hidden", std::to_string(d_hidden)},
            {"arch.d_proj", std::to_string(d_proj)}};
  }

  static Architecture from_metadata(const Checkpoint& ckpt) {
    auto num = [&](const char* key) { return static_cast<std::size_t>(std::stoull(ckpt.meta(key))); };
    Architecture a;
    const std::string& k = ckpt.meta("arch.kind");
    if (k != "mlp" && k != "transformer") throw ValidationError("unknown encoder kind '" + k + "'");
    a.kind = k == "mlp" ? EncoderKind::kMlp : EncoderKind::kTransformer;
    a.channels = num("arch.channels");
    a.image_size = num("arch.image_size");
    a.patch_size = num("arch.patch_size");
    a.d_model = num("arch.d_model");
    a.heads = num("arch.heads");
    a.blocks = num("arch.blocks");
    a.d_hidden = num("arch.d_hidden");
    a.d_proj = num("arch.d_proj");
    a.validate();
    return a;
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

// --- parameters -------------------------------------------------------------

/// Name -> shape of every encoder tensor, plus the named projector heads.
inline std::map<std::string, Shape> parameter_shapes(const Architecture& a,
                                                     std::span<const std::string_view> heads = {}) {
  const std::size_t d = a.d_model;
  std::map<std::string, Shape> s;
  s["encoder.patch_embed.weight"] = {a.patch_dim(), d};
  s["encoder.patch_embed.bias"] = {d};
  s["encoder.pos_embed"] = {a.num_patches(), d};
  for (std::size_t b = 0; b < a.blocks; ++b) {
    const std::string p = "encoder.blocks." + std::to_string(b) + ".";
    if (a.kind == EncoderKind::kMlp) {
      s[p + "fc.weight"] = {d, d};
      s[p + "fc.bias"] = {d};
      continue;
    }
    s[p + "ln1.gain"] = {d};
    s[p + "ln1.bias"] = {d};
    s[p + "attn.qkv.weight"] = {d, 3 * d};
    s[p + "attn.qkv.bias"] = {3 * d};
    s[p + "attn.proj.weight"] = {d, d};
    s[p + "attn.proj.bias"] = {d};
    s[p + "ln2.gain"] = {d};
    s[p + "ln2.bias"] = {d};
    s[p + "mlp.fc1.weight"] = {d, a.d_hidden};
    s[p + "mlp.fc1.bias"] = {a.d_hidden};
    s[p + "mlp.fc2.weight"] = {a.d_hidden, d};
    s[p + "mlp.fc2.bias"] = {d};
  }
  s["encoder.norm.gain"] = {d};
  s["encoder.norm.bias"] = {d};
  for (auto h : heads) {
    const std::string p(h);
    s[p + ".fc1.weight"] = {d, a.d_hidden};
    s[p + ".fc1.bias"] = {a.d_hidden};
    s[p + ".fc2.weight"] = {a.d_hidden, a.d_proj};
    s[p + ".fc2.bias"] = {a.d_proj};
  }
  return s;
}

namespace encoder_detail {

inline bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

inline Tensor xavier(const Shape& dims, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(dims[0] + dims[1]));
  Tensor t(dims);
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

inline Tensor truncated_normal(const Shape& dims, double stddev, Rng& rng) {
  Tensor t(dims);
  for (double& v : t.values()) v = rng.truncated_normal(stddev);
  return t;
}

}  // namespace encoder_detail

/// Fresh patch-embedding weights: truncated normal (std 0.02), zero bias.
inline void init_patch_embed(const Architecture& a, Rng& rng, ParamSet& params) {
  params["encoder.patch_embed.weight"] =
      encoder_detail::truncated_normal({a.patch_dim(), a.d_model}, kPatchEmbedInitStd, rng);
  params["encoder.patch_embed.bias"] = Tensor({a.d_model}, 0.0);
}

/// Random initialization of encoder and heads. Draw order follows name order.
inline ParamSet init_params(const Architecture& a, Rng& rng,
                            std::span<const std::string_view> heads = {}) {
  a.validate();
  ParamSet params;
  for (const auto& [name, dims] : parameter_shapes(a, heads)) {
    using encoder_detail::ends_with;
    if (name == "encoder.patch_embed.weight" || name == "encoder.pos_embed") {
      params[name] = encoder_detail::truncated_normal(dims, kPatchEmbedInitStd, rng);
    } else if (ends_with(name, ".gain")) {
      params[name] = Tensor(dims, 1.0);
    } else if (ends_with(name, ".bias")) {
      params[name] = Tensor(dims, 0.0);
    } else {
      params[name] = encoder_detail::xavier(dims, rng);
    }
  }
  return params;
}

inline constexpr std::string_view kBothHeads[] = {kContrastHead, kSoftHead};

// --- masking ----------------------------------------------------------------

struct MaskPattern {
  std::vector<std::uint32_t> visible;  // sorted, unique
  std::size_t total = 0;
  double ratio = 0.0;

  static MaskPattern full(std::size_t patches) {
    MaskPattern m;
    m.total = patches;
    m.visible.resize(patches);
    for (std::size_t i = 0; i < patches; ++i) m.visible[i] = static_cast<std::uint32_t>(i);
    return m;
  }
};

/// Number of patches left visible at masking ratio r: P - floor(r * P).
inline std::size_t visible_count(std::size_t patches, double ratio) {
  // The nudge keeps e.g. 0.3 * 10 from flooring to 2.
  const auto masked = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(patches) + 1e-9));
  return patches - std::min(masked, patches);
}

inline MaskPattern sample_mask(std::size_t patches, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ValidationError("mask ratio must lie in [0,1)");
  const std::size_t keep = visible_count(patches, ratio);
  std::vector<std::uint32_t> idx(patches);
  for (std::size_t i = 0; i < patches; ++i) idx[i] = static_cast<std::uint32_t>(i);
  // Partial Fisher-Yates: the first `keep` slots are a uniform subset.
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.index(patches - i));
    std::swap(idx[i], idx[j]);
  }
  MaskPattern m;
  m.total = patches;
  m.ratio = ratio;
  m.visible.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep));
  std::sort(m.visible.begin(), m.visible.end());
  return m;
}

// --- tokenization -------------------------------------------------------------

/// C x H x W image -> P x (C p^2) patch rows. Patches are row-major over the
/// grid; each row is flattened as (channel, y, x).
inline Tensor patchify(const Tensor& image, std::size_t p) {
  if (image.rank() != 3) throw ShapeError("image must be C x H x W, got " + shape_string(image.dims()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw ShapeError("image " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by patch size " +
                     std::to_string(p));
  }
  const std::size_t gh = h / p, gw = w / p;
  Tensor out({gh * gw, c * p * p});
  for (std::size_t gy = 0; gy < gh; ++gy) {
    for (std::size_t gx = 0; gx < gw; ++gx) {
      double* row = out.data() + (gy * gw + gx) * out.cols();
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < p; ++y) {
          const double* src = image.data() + (ch * h + gy * p + y) * w + gx * p;
          std::copy(src, src + p, row + (ch * p + y) * p);
        }
      }
    }
  }
  return out;
}

/// Records what the trunk processed; used to inspect masking behaviour.
struct EncodeTrace {
  std::size_t tokens = 0;                // tokens per scene entering the trunk
  std::vector<Shape> attention;          // per block, one scene/head attention matrix
};

/// Memoizes graph inputs so each parameter enters a graph once.
class ParamScope {
 public:
  explicit ParamScope(ComputeGraph& g) : g_(g) {}
  NodeId operator()(const std::string& name) {
    auto it = ids_.find(name);
    if (it != ids_.end()) return it->second;
    const NodeId id = g_.input(name);
    ids_.emplace(name, id);
    return id;
  }
  ComputeGraph& graph() { return g_; }

 private:
  ComputeGraph& g_;
  std::map<std::string, NodeId> ids_;
};

namespace encoder_detail {

enum class HeadPart { kQuery = 0, kKey = 1, kValue = 2 };

// [B, V, 3d] -> [B*H, V, dh] for one of q/k/v.
inline std::shared_ptr<const GatherMap> split_heads_map(std::size_t b, std::size_t v, std::size_t h,
                                                        std::size_t dh, HeadPart part) {
  static thread_local std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, int>,
                               std::shared_ptr<const GatherMap>>
      cache;
  const auto key = std::make_tuple(b, v, h, dh, static_cast<int>(part));
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  auto m = std::make_shared<GatherMap>();
  const std::size_t d = h * dh;
  m->out_dims = {b * h, v, dh};
  m->offset.resize(b * h * v * dh);
  std::size_t i = 0;
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t hi = 0; hi < h; ++hi)
      for (std::size_t t = 0; t < v; ++t)
        for (std::size_t e = 0; e < dh; ++e)
          m->offset[i++] = static_cast<std::uint32_t>((bi * v + t) * 3 * d + static_cast<std::size_t>(part) * d +
                                                      hi * dh + e);
  cache.emplace(key, m);
  return m;
}

// [B*H, V, dh] -> [B, V, d].
inline std::shared_ptr<const GatherMap> merge_heads_map(std::size_t b, std::size_t v, std::size_t h,
                                                        std::size_t dh) {
  static thread_local std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>,
                               std::shared_ptr<const GatherMap>>
      cache;
  const auto key = std::make_tuple(b, v, h, dh);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  auto m = std::make_shared<GatherMap>();
  m->out_dims = {b, v, h * dh};
  m->offset.resize(b * v * h * dh);
  std::size_t i = 0;
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t t = 0; t < v; ++t)
      for (std::size_t hi = 0; hi < h; ++hi)
        for (std::size_t e = 0; e < dh; ++e)
          m->offset[i++] = static_cast<std::uint32_t>(((bi * h + hi) * v + t) * dh + e);
  cache.emplace(key, m);
  return m;
}

inline NodeId affine(ParamScope& p, NodeId x, const std::string& prefix) {
  ComputeGraph& g = p.graph();
  return g.add(g.matmul(x, p(prefix + ".weight")), p(prefix + ".bias"));
}

inline void check_masks(std::span<const MaskPattern> masks, std::size_t patches) {
  if (masks.empty()) throw ValidationError("no scenes to encode");
  const std::size_t v = masks.front().visible.size();
  for (const auto& m : masks) {
    if (m.visible.empty()) throw ValidationError("mask leaves no visible patches");
    if (m.visible.size() != v) throw ShapeError("masks in one batch must keep equal token counts");
    for (auto i : m.visible) {
      if (i >= patches) throw ValidationError("mask index " + std::to_string(i) + " >= patch count");
    }
  }
}

}  // namespace encoder_detail

/// Runs the trunk on visible tokens x: [B, V, d]. Returns [B, d] features.
inline NodeId build_trunk(ParamScope& p, const Architecture& a, NodeId x, std::size_t batch,
                          std::size_t visible, EncodeTrace* trace = nullptr) {
  using encoder_detail::affine;
  ComputeGraph& g = p.graph();
  if (trace) {
    trace->tokens = visible;
    trace->attention.clear();
  }
  for (std::size_t b = 0; b < a.blocks; ++b) {
    const std::string pre = "encoder.blocks." + std::to_string(b) + ".";
    if (a.kind == EncoderKind::kMlp) {
      x = g.relu(affine(p, x, pre + "fc"));
      continue;
    }
    const std::size_t h = a.heads, dh = a.head_dim();
    using encoder_detail::HeadPart;
    const NodeId hn = g.layer_norm(x, p(pre + "ln1.gain"), p(pre + "ln1.bias"));
    const NodeId qkv = affine(p, hn, pre + "attn.qkv");
    const NodeId q = g.gather({qkv}, encoder_detail::split_heads_map(batch, visible, h, dh, HeadPart::kQuery));
    const NodeId k = g.gather({qkv}, encoder_detail::split_heads_map(batch, visible, h, dh, HeadPart::kKey));
    const NodeId v = g.gather({qkv}, encoder_detail::split_heads_map(batch, visible, h, dh, HeadPart::kValue));
    const NodeId scores = g.scale(g.matmul(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh)));
    if (trace) trace->attention.push_back({visible, visible});
    const NodeId attn = g.softmax_rows(scores);
    const NodeId ctx = g.gather({g.matmul(attn, v)}, encoder_detail::merge_heads_map(batch, visible, h, dh));
    x = g.add(x, affine(p, ctx, pre + "attn.proj"));
    const NodeId hn2 = g.layer_norm(x, p(pre + "ln2.gain"), p(pre + "ln2.bias"));
    x = g.add(x, affine(p, g.relu(affine(p, hn2, pre + "mlp.fc1")), pre + "mlp.fc2"));
  }
  const NodeId normed = g.layer_norm(x, p("encoder.norm.gain"), p("encoder.norm.bias"));
  return g.mean(normed, 1);
}

/// Embeds the visible patches of a batch. patches: B host tensors of P x (C p^2).
/// Returns tokens [B, V, d] (patch affine map plus position embedding).
inline NodeId build_tokens(ParamScope& p, const Architecture& a, std::span<const Tensor> patches,
                           std::span<const MaskPattern> masks) {
  encoder_detail::check_masks(masks, a.num_patches());
  if (patches.size() != masks.size()) throw ShapeError("one mask per scene required");
  const std::size_t b = patches.size(), v = masks.front().visible.size(), pd = a.patch_dim(), d = a.d_model;
  Tensor vis({b, v, pd});
  auto pos = std::make_shared<GatherMap>();
  pos->out_dims = {b, v, d};
  pos->offset.resize(b * v * d);
  for (std::size_t s = 0; s < b; ++s) {
    if (patches[s].dims() != Shape{a.num_patches(), pd}) {
      throw ShapeError("scene " + std::to_string(s) + " patches " + shape_string(patches[s].dims()) +
                       " do not match the architecture");
    }
    for (std::size_t t = 0; t < v; ++t) {
      const std::size_t src = masks[s].visible[t];
      std::copy_n(patches[s].data() + src * pd, pd, vis.data() + (s * v + t) * pd);
      for (std::size_t e = 0; e < d; ++e) pos->offset[(s * v + t) * d + e] = static_cast<std::uint32_t>(src * d + e);
    }
  }
  ComputeGraph& g = p.graph();
  const NodeId emb = encoder_detail::affine(p, g.constant(std::move(vis)), "encoder.patch_embed");
  return g.add(emb, g.gather({p("encoder.pos_embed")}, std::move(pos)));
}

/// Projector head on features [B, d]: affine, ReLU, affine, row L2-normalize.
inline NodeId build_projector(ParamScope& p, NodeId features, std::string_view head) {
  using encoder_detail::affine;
  const std::string pre(head);
  ComputeGraph& g = p.graph();
  return g.normalize_rows(affine(p, g.relu(affine(p, features, pre + ".fc1")), pre + ".fc2"));
}

// --- eager single-scene operations ------------------------------------------

namespace encoder_detail {

inline double run_to_tensor(ComputeGraph& g, NodeId out, const ParamSet& params, Tensor& result) {
  // The output must be scalar for forward(); sum it and read the real node.
  g.set_output(g.sum(out));
  const double s = g.forward(params);
  result = g.value(out);
  return s;
}

}  // namespace encoder_detail

/// Tokens [P, d] of one image: affine map of each flattened patch plus position embedding.
inline Tensor patch_embed(const Tensor& image, std::size_t p, const ParamSet& params) {
  const Tensor patches = patchify(image, p);
  const Tensor& w = params.at("encoder.patch_embed.weight");
  const Tensor& pos = params.at("encoder.pos_embed");
  if (w.rank() != 2 || w.dim(0) != patches.cols()) {
    throw ShapeError("patch_embed weight " + shape_string(w.dims()) + " does not accept patches of width " +
                     std::to_string(patches.cols()));
  }
  if (pos.rank() != 2 || pos.dim(0) != patches.rows() || pos.dim(1) != w.dim(1)) {
    throw ShapeError("position table " + shape_string(pos.dims()) + " does not match " +
                     std::to_string(patches.rows()) + " tokens");
  }
  ComputeGraph g;
  const NodeId x = g.constant(patches);
  const NodeId tok = g.add(g.add(g.matmul(x, g.input("encoder.patch_embed.weight")),
                                 g.input("encoder.patch_embed.bias")),
                           g.input("encoder.pos_embed"));
  Tensor out;
  encoder_detail::run_to_tensor(g, tok, params, out);
  return out;
}

/// Encodes one token sequence [P, d]. Only the mask's visible tokens enter the
/// trunk; without a mask all tokens are used. Returns the [d] feature.
inline Tensor encode(const Tensor& tokens, const ParamSet& params, const Architecture& a,
                     const MaskPattern* mask = nullptr, EncodeTrace* trace = nullptr) {
  if (tokens.rank() != 2 || tokens.cols() != a.d_model) {
    throw ShapeError("tokens must be P x d_model, got " + shape_string(tokens.dims()));
  }
  const MaskPattern m = mask ? *mask : MaskPattern::full(tokens.rows());
  const MaskPattern masks[] = {m};
  encoder_detail::check_masks(masks, tokens.rows());
  const std::size_t v = m.visible.size(), d = a.d_model;
  Tensor vis({1, v, d});
  for (std::size_t t = 0; t < v; ++t) std::copy_n(tokens.data() + m.visible[t] * d, d, vis.data() + t * d);
  ComputeGraph g;
  ParamScope p(g);
  const NodeId feat = build_trunk(p, a, g.constant(std::move(vis)), 1, v, trace);
  Tensor out;
  encoder_detail::run_to_tensor(g, feat, params, out);
  return out.reshaped({d});
}

/// Projects one feature [d] to a unit-norm embedding [d_proj].
inline Tensor project(const Tensor& feature, const ParamSet& params, std::string_view head) {
  if (!feature.all_finite()) throw NumericError("project: feature is not finite");
  ComputeGraph g;
  ParamScope p(g);
  const NodeId z = build_projector(p, g.constant(feature.reshaped({1, feature.size()})), head);
  Tensor out;
  encoder_detail::run_to_tensor(g, z, params, out);
  return out.reshaped({out.size()});
}

/// Unmasked features [N, d] for a list of C x H x W images, computed in chunks.
inline Tensor encode_images(const ParamSet& params, const Architecture& a, std::span<const Tensor> images,
                            std::size_t chunk = 128) {
  Tensor out({std::max<std::size_t>(images.size(), 1), a.d_model});
  const MaskPattern full = MaskPattern::full(a.num_patches());
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t n = std::min(chunk, images.size() - start);
    std::vector<Tensor> patches;
    patches.reserve(n);
    for (std::size_t i = 0; i < n; ++i) patches.push_back(patchify(images[start + i], a.patch_size));
    const std::vector<MaskPattern> masks(n, full);
    ComputeGraph g;
    ParamScope p(g);
    const NodeId feat = build_trunk(p, a, build_tokens(p, a, patches, masks), n, a.num_patches());
    Tensor f;
    encoder_detail::run_to_tensor(g, feat, params, f);
    std::copy_n(f.data(), f.size(), out.data() + start * a.d_model);
  }
  return out;
}

// --- momentum pairing ---------------------------------------------------------

struct MomentumPair {
  ParamSet base;
  ParamSet momentum;
  double m = 0.99;
};

/// momentum <- m * momentum + (1 - m) * base, tensor by tensor.
inline void ema_update(ParamSet& momentum, const ParamSet& base, double m) {
  if (!(m >= 0.0 && m < 1.0)) throw ValidationError("momentum coefficient must lie in [0,1)");
  if (momentum.size() != base.size()) throw ShapeError("ema_update: parameter sets differ in size");
  for (auto& [name, t] : momentum) {
    auto it = base.find(name);
    if (it == base.end() || it->second.dims() != t.dims()) {
      throw ShapeError("ema_update: no shape-matching base tensor for '" + name + "'");
    }
    const Tensor& b = it->second;
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = m * t[i] + (1.0 - m) * b[i];
  }
}

inline void ema_update(MomentumPair& pair) { ema_update(pair.momentum, pair.base, pair.m); }

// --- continual initialization -------------------------------------------------

/// Builds target parameters from a source checkpoint. Everything is copied
/// except the patch embedding, which is redrawn from `rng` when the channel
/// counts differ. Heads present in the source are carried over.
inline ParamSet init_continual(const Checkpoint& source, const Architecture& target, Rng& rng) {
  target.validate();
  const Architecture src = Architecture::from_metadata(source);
  std::vector<std::string_view> heads;
  for (auto h : kBothHeads) {
    if (source.tensors.count(std::string(h) + ".fc1.weight")) heads.push_back(h);
  }
  const auto expected = parameter_shapes(target, heads);
  const bool reinit_input = src.channels != target.channels;
  std::string offending;
  ParamSet out;
  for (const auto& [name, dims] : expected) {
    const bool is_input = name == "encoder.patch_embed.weight" || name == "encoder.patch_embed.bias";
    if (is_input && reinit_input) continue;
    auto it = source.tensors.find(name);
    if (it == source.tensors.end()) {
      offending += " " + name + "(missing)";
    } else if (it->second.dims() != dims) {
      offending += " " + name + shape_string(it->second.dims()) + "!=" + shape_string(dims);
    } else {
      out[name] = it->second;
    }
  }
  if (!offending.empty()) throw ValidationError("architecture mismatch beyond the input layer:" + offending);
  if (reinit_input) init_patch_embed(target, rng, out);
  return out;
}

inline ParamSet init_continual(const Checkpoint& source, std::size_t target_channels, Rng& rng) {
  Architecture target = Architecture::from_metadata(source);
  target.channels = target_channels;
  return init_continual(source, target, rng);
}

}  // namespace softcon
