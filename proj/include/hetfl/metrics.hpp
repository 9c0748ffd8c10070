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

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hetfl/data.hpp"
#include "hetfl/error.hpp"
#include "hetfl/model.hpp"

namespace hetfl {

struct EvalResult {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

// Accuracy and the unweighted mean of per-class F1 over all `classes`
// classes; a class with no true and no predicted samples scores 0.
inline EvalResult classification_metrics(std::span<const std::size_t> predicted,
                                         std::span<const std::size_t> truth,
                                         std::size_t classes) {
  if (predicted.size() != truth.size()) {
    throw DataError("prediction and label counts differ");
  }
  if (truth.empty()) throw DataError("cannot score an empty evaluation set");
  std::vector<std::size_t> tp(classes), fp(classes), fn(classes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] >= classes || truth[i] >= classes) throw DataError("class out of range");
    if (predicted[i] == truth[i]) {
      ++correct;
      ++tp[truth[i]];
    } else {
      ++fp[predicted[i]];
      ++fn[truth[i]];
    }
  }
  double f1_sum = 0.0;
  for (std::size_t k = 0; k < classes; ++k) {
    const auto denom = 2 * tp[k] + fp[k] + fn[k];
    if (denom > 0) f1_sum += 2.0 * static_cast<double>(tp[k]) / static_cast<double>(denom);
  }
  return {static_cast<double>(correct) / static_cast<double>(truth.size()),
          f1_sum / static_cast<double>(classes)};
}

// Argmax predictions (lowest index wins ties).
inline std::vector<std::size_t> predict(const LayeredModel& model, const Tensor& inputs) {
  const Tensor logits = forward(model, inputs);
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.cols(); ++k) {
      if (logits.at(r, k) > logits.at(r, best)) best = k;
    }
    out[r] = best;
  }
  return out;
}

inline EvalResult evaluate(const LayeredModel& model, const Dataset& ds,
                           std::span<const std::size_t> indices) {
  if (indices.empty()) throw DataError("evaluation set is empty");
  if (model.classes() != ds.classes) {
    throw DimensionError("model has " + std::to_string(model.classes()) +
                         " classes, evaluation data has " + std::to_string(ds.classes));
  }
  constexpr std::size_t kChunk = 512;
  std::vector<std::size_t> predicted, truth;
  predicted.reserve(indices.size());
  truth.reserve(indices.size());
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const auto chunk = indices.subspan(start, std::min(kChunk, indices.size() - start));
    auto [x, y] = gather(ds, chunk);
    const auto p = predict(model, x);
    predicted.insert(predicted.end(), p.begin(), p.end());
    truth.insert(truth.end(), y.begin(), y.end());
  }
  return classification_metrics(predicted, truth, ds.classes);
}

inline EvalResult evaluate(const LayeredModel& model, const Dataset& ds) {
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return evaluate(model, ds, all);
}

// ---------------------------------------------------------------------------
// Run records.

inline constexpr double kNoLoss = std::numeric_limits<double>::quiet_NaN();

struct TierMetrics {
  std::string tier;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double train_loss = kNoLoss;  // NaN when no client of the tier trained
};

struct RoundRecord {
  std::size_t round = 0;
  std::vector<TierMetrics> tiers;

  const TierMetrics* find(const std::string& tier) const {
    for (const auto& m : tiers) {
      if (m.tier == tier) return &m;
    }
    return nullptr;
  }
};

struct RunReport {
  std::string method;
  std::string large_tier;  // id of the deepest tier: the global-inference model
  std::vector<RoundRecord> rounds;
  std::vector<LayeredModel> final_models;
  double wall_seconds = 0.0;
};

struct BestTracker {
  double best_accuracy = -1.0;
  std::size_t best_accuracy_round = 0;
  double best_macro_f1 = -1.0;
  std::size_t best_macro_f1_round = 0;
  double final_accuracy = 0.0;
  double final_macro_f1 = 0.0;
  std::size_t evaluations = 0;
};

// Best-so-far over the evaluated rounds of one tier; ties keep the earlier
// round. Returns nullopt when the tier never appears.
inline std::optional<BestTracker> track_best(const RunReport& report, const std::string& tier) {
  BestTracker b;
  for (const auto& rec : report.rounds) {
    const auto* m = rec.find(tier);
    if (!m) continue;
    if (m->accuracy > b.best_accuracy) {
      b.best_accuracy = m->accuracy;
      b.best_accuracy_round = rec.round;
    }
    if (m->macro_f1 > b.best_macro_f1) {
      b.best_macro_f1 = m->macro_f1;
      b.best_macro_f1_round = rec.round;
    }
    b.final_accuracy = m->accuracy;
    b.final_macro_f1 = m->macro_f1;
    ++b.evaluations;
  }
  if (b.evaluations == 0) return std::nullopt;
  return b;
}

// First evaluated round whose accuracy reaches `fraction` of the tier's best.
inline std::optional<std::size_t> rounds_to_fraction_of_best(const RunReport& report,
                                                             const std::string& tier,
                                                             double fraction) {
  const auto best = track_best(report, tier);
  if (!best) return std::nullopt;
  const double target = fraction * best->best_accuracy;
  for (const auto& rec : report.rounds) {
    const auto* m = rec.find(tier);
    if (m && m->accuracy >= target) return rec.round;
  }
  return std::nullopt;
}

}  // namespace hetfl
