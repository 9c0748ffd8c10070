// Copyright 2026 The hetfl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Checkpoint container, all integers little-endian:
//
//   "HFLCKPT1"                 8-byte magic
//   u32 version                currently 1
//   u32 activation             0 tanh, 1 relu, 2 identity
//   u32 len, bytes             tier id
//   u32 entry count
//   per entry:
//     u32 len, bytes           name, e.g. "layer.3.weight", "head.pool.bias"
//     u32 rank, u64 dims[rank]
//     f64 data[prod(dims)]     row-major
//
// Entries appear in model order: layers bottom to top, then head input,
// pool, classifier (weight before bias).

#pragma once

#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "hetfl/binary_io.hpp"
#include "hetfl/error.hpp"
#include "hetfl/model.hpp"

namespace hetfl {

inline constexpr std::string_view kCheckpointMagic = "HFLCKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<char> encode_checkpoint(const LayeredModel& model) {
  binary::Writer w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(model.activation));
  w.u32(static_cast<std::uint32_t>(model.tier.size()));
  w.bytes(model.tier);
  w.u32(static_cast<std::uint32_t>(2 * model.layers.size() + 6));
  for_each_named_tensor(model, [&](const std::string& name, const Tensor& t) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    for (double v : t.data()) w.f64(v);
  });
  return w.buffer();
}

inline LayeredModel decode_checkpoint(std::vector<char> bytes) {
  binary::Reader r(std::move(bytes));
  if (r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw IoError("not a checkpoint file");
  }
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(v));
  }
  const auto act = r.u32();
  if (act > 2) throw IoError("checkpoint has an unknown activation code");
  LayeredModel model;
  model.activation = static_cast<Activation>(act);
  model.tier = r.bytes(r.u32());

  std::map<std::string, Tensor> entries;
  const auto count = r.u32();
  for (std::uint32_t e = 0; e < count; ++e) {
    auto name = r.bytes(r.u32());
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    std::vector<double> data(shape.empty() ? 0 : shape_numel(shape));
    for (auto& v : data) v = r.f64();
    entries.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.at_end()) throw IoError("trailing bytes after checkpoint entries");

  auto take = [&](const std::string& name) {
    auto it = entries.find(name);
    if (it == entries.end()) throw IoError("checkpoint is missing '" + name + "'");
    Tensor t = std::move(it->second);
    entries.erase(it);
    return t;
  };
  for (std::size_t l = 1; entries.count("layer." + std::to_string(l) + ".weight"); ++l) {
    const auto prefix = "layer." + std::to_string(l) + ".";
    model.layers.push_back({take(prefix + "weight"), take(prefix + "bias")});
  }
  model.head.input = {take("head.input.weight"), take("head.input.bias")};
  model.head.pool = {take("head.pool.weight"), take("head.pool.bias")};
  model.head.classifier = {take("head.classifier.weight"), take("head.classifier.bias")};
  if (!entries.empty()) throw IoError("checkpoint has unexpected entry '" + entries.begin()->first + "'");
  return model;
}

inline void save_checkpoint(const std::string& path, const LayeredModel& model) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline LayeredModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(std::move(buf));
}

}  // namespace hetfl
