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

// Synthetic datasets and client partitioning.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hetfl/binary_io.hpp"
#include "hetfl/error.hpp"
#include "hetfl/rng.hpp"
#include "hetfl/tensor.hpp"
#include "hetfl/topology.hpp"

namespace hetfl {

struct Dataset {
  std::string name;
  Tensor inputs;                    // [N x d_in]
  std::vector<std::size_t> labels;  // N entries in [0, classes)
  std::size_t classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t input_dim() const { return inputs.cols(); }

  void validate() const {
    if (labels.empty()) throw DataError("dataset '" + name + "' is empty");
    if (classes < 2) throw DataError("dataset '" + name + "' needs at least 2 classes");
    if (inputs.rank() != 2 || inputs.rows() != labels.size()) {
      throw DataError("dataset '" + name + "' inputs do not match label count");
    }
    for (auto y : labels) {
      if (y >= classes) throw DataError("dataset '" + name + "' label out of range");
    }
  }
};

// Indices into one dataset. `eval` may be empty when evaluation happens on a
// shared held-out set.
struct Partition {
  std::size_t dataset = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};

struct ClientSpec {
  std::size_t id = 0;
  std::size_t tier = 0;  // index into the topology
  Partition partition;

  std::size_t sample_count() const noexcept { return partition.train.size(); }
};

struct SyntheticSpec {
  std::size_t samples = 0;
  std::size_t input_dim = 0;
  std::size_t classes = 0;
  double spread = 1.0;      // per-coordinate std of each class cluster
  double label_noise = 0.0; // probability a label is flipped to another class
  std::size_t warp_depth = 0;
  double warp_gain = 2.0;
  std::size_t modes = 1;    // clusters per class
  double swirl = 0.0;       // > 0: radial blobs in a latent plane, twisted
  std::string name = "synthetic";
};

// Fixed random nonlinear warp: each stage is x <- tanh(gain * x A_k + b_k).
struct InputWarp {
  std::vector<Tensor> mixes;  // [d_in x d_in] each
  std::vector<Tensor> phases; // [d_in] each
  double gain = 1.0;

  void apply(std::span<double> row) const {
    const std::size_t d = row.size();
    std::vector<double> next(d);
    for (std::size_t k = 0; k < mixes.size(); ++k) {
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) acc += row[i] * mixes[k].at(i, j);
        next[j] = std::tanh(gain * acc + phases[k][j]);
      }
      std::copy(next.begin(), next.end(), row.begin());
    }
  }
};

// Gaussian class clusters, optionally warped.
//
// swirl == 0: cluster means ~ N(0, I) in R^d_in, samples mean + spread * eps.
// swirl > 0:  cluster k is a ray at angle phi0 + 2 pi k / (c * modes) in a
//             latent plane (class = k mod c); a sample is rho * dir + spread *
//             eps with rho ~ U(0, 1), rotated by 2 pi * swirl * |p| and
//             embedded into R^d_in by a fixed Gaussian map. Classes become
//             interleaved spiral arms.
//
// Draw order: means (or phi0 and the embedding), warp, then per sample
// (label, cluster when modes > 1, features, flip).
inline Dataset make_synthetic(const SyntheticSpec& spec, Rng& rng) {
  if (spec.classes < 2) throw DataError("synthetic data needs at least 2 classes");
  if (spec.input_dim == 0) throw DataError("synthetic data needs a positive input dimension");
  if (spec.samples < spec.classes) {
    throw DataError("synthetic data needs at least one sample per class (N >= c)");
  }
  if (!(spec.spread > 0.0)) throw DataError("cluster spread must be positive");
  if (spec.label_noise < 0.0 || spec.label_noise >= 1.0) {
    throw DataError("label noise must lie in [0, 1)");
  }
  if (spec.modes == 0) throw DataError("synthetic data needs at least one cluster per class");
  if (spec.swirl < 0.0) throw DataError("swirl must be non-negative");
  const std::size_t d = spec.input_dim, c = spec.classes, modes = spec.modes;
  const bool swirled = spec.swirl > 0.0;
  Tensor means = Tensor::zeros({1});
  Tensor embed = Tensor::zeros({1});
  double phi0 = 0.0;
  if (swirled) {
    phi0 = 2.0 * std::numbers::pi * rng.uniform();
    embed = randn({2, d}, 1.0, rng);
  } else {
    means = randn({c * modes, d}, 1.0, rng);
  }

  InputWarp warp;
  warp.gain = spec.warp_gain;
  for (std::size_t k = 0; k < spec.warp_depth; ++k) {
    warp.mixes.push_back(randn({d, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng));
    auto phase = Tensor::zeros({d});
    for (auto& v : phase.data()) v = 2.0 * rng.uniform() - 1.0;
    warp.phases.push_back(std::move(phase));
  }

  Dataset ds;
  ds.name = spec.name;
  ds.classes = c;
  ds.inputs = Tensor::zeros({spec.samples, d});
  ds.labels.resize(spec.samples);
  for (std::size_t n = 0; n < spec.samples; ++n) {
    const auto y = static_cast<std::size_t>(rng.below(c));
    const std::size_t mode = modes > 1 ? static_cast<std::size_t>(rng.below(modes)) : 0;
    auto row = ds.inputs.data().subspan(n * d, d);
    if (swirled) {
      const double phi = phi0 + 2.0 * std::numbers::pi * static_cast<double>(mode * c + y) /
                                    static_cast<double>(c * modes);
      const double rho = rng.uniform();
      const double px = rho * std::cos(phi) + spec.spread * rng.normal();
      const double py = rho * std::sin(phi) + spec.spread * rng.normal();
      const double a = 2.0 * std::numbers::pi * spec.swirl * std::hypot(px, py);
      const double qx = std::cos(a) * px - std::sin(a) * py;
      const double qy = std::sin(a) * px + std::cos(a) * py;
      for (std::size_t j = 0; j < d; ++j) row[j] = qx * embed.at(0, j) + qy * embed.at(1, j);
    } else {
      const std::size_t cluster = y * modes + mode;
      for (std::size_t j = 0; j < d; ++j) row[j] = means.at(cluster, j) + spec.spread * rng.normal();
    }
    warp.apply(row);
    std::size_t label = y;
    if (spec.label_noise > 0.0 && rng.uniform() < spec.label_noise) {
      label = (y + 1 + static_cast<std::size_t>(rng.below(c - 1))) % c;
    }
    ds.labels[n] = label;
  }
  return ds;
}

// Rows of `ds` at `indices`, in order.
inline std::pair<Tensor, std::vector<std::size_t>> gather(const Dataset& ds,
                                                          std::span<const std::size_t> indices) {
  const std::size_t d = ds.input_dim();
  if (indices.empty()) throw DataError("gather: empty index list");
  Tensor x = Tensor::zeros({indices.size(), d});
  std::vector<std::size_t> y(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto i = indices[r];
    if (i >= ds.size()) throw DataError("gather: index out of range");
    for (std::size_t j = 0; j < d; ++j) x.at(r, j) = ds.inputs.at(i, j);
    y[r] = ds.labels[i];
  }
  return {std::move(x), std::move(y)};
}

// Seeded shuffle of `indices` then contiguous chunks; the first
// (N mod K) chunks get one extra element.
inline std::vector<Partition> iid_split(std::vector<std::size_t> indices, std::size_t clients,
                                        Rng& rng, std::size_t dataset = 0) {
  const std::size_t n = indices.size();
  if (clients == 0) throw DataError("iid_split: need at least one client");
  if (clients > n) {
    throw DataError("iid_split: " + std::to_string(clients) + " clients for " +
                    std::to_string(n) + " samples");
  }
  rng.shuffle(std::span<std::size_t>(indices));
  std::vector<Partition> parts(clients);
  const std::size_t base = n / clients, extra = n % clients;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < clients; ++k) {
    const std::size_t len = base + (k < extra ? 1 : 0);
    parts[k].dataset = dataset;
    parts[k].train.assign(indices.begin() + static_cast<std::ptrdiff_t>(pos),
                          indices.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return parts;
}

inline std::vector<Partition> iid_split(const Dataset& ds, std::size_t clients, Rng& rng,
                                        std::size_t dataset = 0) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return iid_split(std::move(all), clients, rng, dataset);
}

// Seeded shuffle, then the first floor(4N/5) indices train and the rest
// evaluate.
inline Partition train_eval_split(std::size_t dataset, std::size_t n, Rng& rng) {
  if (n < 2) throw DataError("train/eval split needs at least 2 samples");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(idx));
  const std::size_t n_train = (n * 4) / 5;
  Partition p;
  p.dataset = dataset;
  p.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  p.eval.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  return p;
}

// Tier index for dataset i under a rotation r: (i + r) mod T.
inline std::vector<std::size_t> rotation_mapping(std::size_t tiers, std::size_t rotation) {
  std::vector<std::size_t> m(tiers);
  for (std::size_t i = 0; i < tiers; ++i) m[i] = (i + rotation) % tiers;
  return m;
}

// Cross-silo assignment: dataset i becomes the whole local data of client i,
// which sits in tier mapping[i] (identity by default, so the first dataset
// goes to the weakest tier). Each silo gets its own 80/20 split.
inline std::vector<ClientSpec> silo_assign(std::span<const Dataset> datasets,
                                           const TierTopology& topology,
                                           std::span<const std::size_t> mapping, Rng& rng) {
  std::vector<std::size_t> tiers(mapping.begin(), mapping.end());
  if (tiers.empty()) {
    if (datasets.size() != topology.size()) {
      throw ConfigError("cross-silo needs one dataset per tier (" +
                        std::to_string(datasets.size()) + " datasets, " +
                        std::to_string(topology.size()) + " tiers)");
    }
    tiers = rotation_mapping(topology.size(), 0);
  }
  if (tiers.size() != datasets.size()) {
    throw ConfigError("silo mapping must name a tier for every dataset");
  }
  std::vector<ClientSpec> clients;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    if (tiers[i] >= topology.size()) throw ConfigError("silo mapping names an unknown tier");
    Rng split = Rng::derive(rng.next_u64(), {i});
    clients.push_back({i, tiers[i], train_eval_split(i, datasets[i].size(), split)});
  }
  return clients;
}

// ---------------------------------------------------------------------------
// Dataset file: "HFLDATA1", u64 N, u64 d_in, u64 c, N*d_in f64 (row-major),
// N u32 labels. All little-endian.

inline constexpr std::string_view kDatasetMagic = "HFLDATA1";

inline void write_dataset(const std::string& path, const Dataset& ds) {
  ds.validate();
  binary::Writer w;
  w.bytes(kDatasetMagic);
  w.u64(ds.size());
  w.u64(ds.input_dim());
  w.u64(ds.classes);
  for (double v : ds.inputs.data()) w.f64(v);
  for (auto y : ds.labels) w.u32(static_cast<std::uint32_t>(y));
  w.save(path);
}

inline Dataset read_dataset(const std::string& path) {
  auto r = binary::Reader::load(path);
  if (r.bytes(kDatasetMagic.size()) != kDatasetMagic) {
    throw IoError("'" + path + "' is not a dataset file");
  }
  const auto n = r.u64(), d = r.u64(), c = r.u64();
  if (n == 0 || d == 0 || r.remaining() != n * d * 8 + n * 4) {
    throw IoError("'" + path + "' has an inconsistent dataset header");
  }
  Dataset ds;
  ds.name = path;
  ds.classes = c;
  ds.inputs = Tensor::zeros({n, d});
  for (auto& v : ds.inputs.data()) v = r.f64();
  ds.labels.resize(n);
  for (auto& y : ds.labels) y = r.u32();
  ds.validate();
  return ds;
}

}  // namespace hetfl
