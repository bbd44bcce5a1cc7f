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

// Checkpoint file layout (all integers little-endian):
//
//   "SOFTCKP1"                      8-byte magic
//   u32 version                     currently 1
//   u32 tensor count
//   per tensor, in name order:
//     u16 name length, UTF-8 name
//     u8 rank, rank x u32 dims
//     f32 data, row-major
//   u32 metadata length, then that many bytes of "key=value\n" lines
//
// Tensors are held as doubles in memory and rounded to f32 on save, so a
// loaded checkpoint re-saves to identical bytes.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "softcon/binio.hpp"
#include "softcon/error.hpp"
#include "softcon/tensor.hpp"

namespace softcon {

inline constexpr std::string_view kCheckpointMagic = "SOFTCKP1";

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ParamSet tensors;
  std::map<std::string, std::string> metadata;

  const std::string& meta(const std::string& key) const {
    auto it = metadata.find(key);
    if (it == metadata.end()) throw ValidationError("checkpoint metadata lacks '" + key + "'");
    return it->second;
  }
};

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(Checkpoint::kVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw ValidationError("tensor name too long");
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw ValidationError("tensor rank too large");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.dims()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.values()) w.f32(static_cast<float>(v));
  }
  std::string meta;
  for (const auto& [k, v] : ckpt.metadata) {
    if (k.empty() || k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ValidationError("metadata entry '" + k + "' is not a single key=value line");
    }
    meta += k + "=" + v + "\n";
  }
  w.u32(static_cast<std::uint32_t>(meta.size()));
  w.bytes(meta);
  return w.take();
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  if (r.bytes(kCheckpointMagic.size(), "magic") != kCheckpointMagic) throw ParseError("bad checkpoint magic", 0);
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kVersion) throw UnsupportedVersionError(version, version_at);
  Checkpoint ckpt;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16();
    std::string name = r.bytes(len, "tensor name");
    const std::uint8_t rank = r.u8();
    Shape dims(rank);
    for (auto& d : dims) {
      const std::size_t at = r.offset();
      d = r.u32();
      if (d == 0) throw ParseError("zero extent in tensor '" + name + "'", at);
    }
    const std::size_t n = shape_size(dims);
    r.need(n * 4, "tensor data");
    std::vector<double> values(n);
    for (auto& v : values) v = static_cast<double>(r.f32());
    if (!ckpt.tensors.emplace(name, Tensor(std::move(dims), std::move(values))).second) {
      throw ParseError("duplicate tensor '" + name + "'", r.offset());
    }
  }
  const std::uint32_t meta_len = r.u32();
  const std::size_t meta_at = r.offset();
  const std::string meta = r.bytes(meta_len, "metadata");
  std::size_t pos = 0;
  while (pos < meta.size()) {
    const std::size_t nl = meta.find('\n', pos);
    const std::size_t eq = meta.find('=', pos);
    if (nl == std::string::npos || eq == std::string::npos || eq > nl) {
      throw ParseError("malformed metadata line", meta_at + pos);
    }
    ckpt.metadata[meta.substr(pos, eq - pos)] = meta.substr(eq + 1, nl - eq - 1);
    pos = nl + 1;
  }
  if (r.remaining() != 0) throw ParseError("trailing bytes after checkpoint", r.offset());
  return ckpt;
}

/// Writes the checkpoint and returns the number of bytes written.
inline std::size_t save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  write_file(path, bytes);
  return bytes.size();
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace softcon
