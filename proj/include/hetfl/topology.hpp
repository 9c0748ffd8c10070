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

#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hetfl/error.hpp"

namespace hetfl {

struct DeviceTier {
  std::string id;
  std::size_t depth = 0;    // encoder layers L_j
  double proportion = 0.0;  // probability a client is assigned this tier
};

// Tiers ordered weakest to strongest. Depths strictly increase, so tier
// index order and depth order coincide.
struct TierTopology {
  std::vector<DeviceTier> tiers;

  std::size_t size() const noexcept { return tiers.size(); }
  const DeviceTier& operator[](std::size_t i) const { return tiers.at(i); }
  const DeviceTier& largest() const { return tiers.back(); }
  std::size_t largest_index() const { return tiers.size() - 1; }

  std::size_t index_of(const std::string& id) const {
    for (std::size_t i = 0; i < tiers.size(); ++i) {
      if (tiers[i].id == id) return i;
    }
    throw TopologyError("unknown tier id '" + id + "'");
  }

  void validate() const {
    if (tiers.empty()) throw TopologyError("topology has no tiers");
    if (tiers.front().depth < 2) {
      throw TopologyError("smallest tier depth must be at least 2, got " +
                          std::to_string(tiers.front().depth));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < tiers.size(); ++i) {
      if (i > 0 && tiers[i].depth <= tiers[i - 1].depth) {
        throw TopologyError("tier depths must be strictly increasing");
      }
      if (tiers[i].proportion < 0.0) throw TopologyError("negative tier proportion");
      for (std::size_t j = 0; j < i; ++j) {
        if (tiers[j].id == tiers[i].id) {
          throw TopologyError("duplicate tier id '" + tiers[i].id + "'");
        }
      }
      total += tiers[i].proportion;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw TopologyError("tier proportions must sum to 1");
    }
  }
};

// Builds a topology from depths and unnormalized ratios such as 1:2:7.
// Ids default to a, b, c, ...
inline TierTopology make_topology(const std::vector<std::size_t>& depths,
                                  std::vector<double> ratios = {},
                                  std::vector<std::string> ids = {}) {
  if (ratios.empty()) ratios.assign(depths.size(), 1.0);
  if (ratios.size() != depths.size()) {
    throw TopologyError("proportion count does not match tier count");
  }
  if (!ids.empty() && ids.size() != depths.size()) {
    throw TopologyError("tier id count does not match tier count");
  }
  double total = 0.0;
  for (double r : ratios) {
    if (r < 0.0) throw TopologyError("negative tier proportion");
    total += r;
  }
  if (!(total > 0.0)) throw TopologyError("tier proportions sum to zero");
  TierTopology topo;
  for (std::size_t i = 0; i < depths.size(); ++i) {
    std::string id = ids.empty() ? std::string(1, static_cast<char>('a' + i)) : ids[i];
    topo.tiers.push_back({std::move(id), depths[i], ratios[i] / total});
  }
  topo.validate();
  return topo;
}

}  // namespace hetfl
