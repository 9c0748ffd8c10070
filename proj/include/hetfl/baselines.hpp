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

// Reference training methods: one shared model (AllLarge, AllSmall,
// ExclusiveFL), purely local models (Local), and width-cropped models with
// overlapped-entry averaging (HeteroFL).

#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hetfl/error.hpp"
#include "hetfl/fed.hpp"
#include "hetfl/metrics.hpp"
#include "hetfl/model.hpp"
#include "hetfl/tensor.hpp"

namespace hetfl {

enum class BaselineKind { kAllLarge, kAllSmall, kExclusive, kLocal, kHeteroFL };

inline std::string baseline_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::kAllLarge: return "alllarge";
    case BaselineKind::kAllSmall: return "allsmall";
    case BaselineKind::kExclusive: return "exclusivefl";
    case BaselineKind::kLocal: return "local";
    case BaselineKind::kHeteroFL: return "heterofl";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Width cropping.

// Top-left rows x cols block of a matrix, or the first `rows` entries of a
// vector (cols is ignored for vectors).
inline Tensor heterofl_crop(const Tensor& w, std::size_t rows, std::size_t cols) {
  if (w.rank() == 1) {
    if (rows == 0 || rows > w.size()) {
      throw DimensionError("crop of " + shape_string(w.shape()) + " to " + std::to_string(rows));
    }
    return Tensor({rows}, std::vector<double>(w.data().begin(), w.data().begin() +
                                                                    static_cast<std::ptrdiff_t>(rows)));
  }
  if (w.rank() != 2 || rows == 0 || cols == 0 || rows > w.rows() || cols > w.cols()) {
    throw DimensionError("crop of " + shape_string(w.shape()) + " to " + std::to_string(rows) +
                         "x" + std::to_string(cols));
  }
  auto out = Tensor::zeros({rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out.at(i, j) = w.at(i, j);
  }
  return out;
}

// Copy of `big` with `small` written over its top-left corner.
inline Tensor embed_top_left(const Tensor& small, Tensor big) {
  if (small.rank() != big.rank() || small.rows() > big.rows() || small.cols() > big.cols()) {
    throw DimensionError("cannot embed " + shape_string(small.shape()) + " into " +
                         shape_string(big.shape()));
  }
  for (std::size_t i = 0; i < small.rows(); ++i) {
    for (std::size_t j = 0; j < small.cols(); ++j) big.at(i, j) = small.at(i, j);
  }
  return big;
}

// Every entry covered by at least one local tensor becomes the weighted mean
// over the covering tensors; uncovered entries keep their global value.
inline Tensor heterofl_aggregate(const Tensor& global, std::span<const Tensor* const> locals,
                                 std::span<const double> weights) {
  if (weights.size() != locals.size()) throw DimensionError("one weight per local tensor");
  Tensor sum = Tensor::zeros_like(global);
  Tensor mass = Tensor::zeros_like(global);
  const std::size_t gcols = global.cols();
  for (std::size_t k = 0; k < locals.size(); ++k) {
    const Tensor& l = *locals[k];
    if (l.rank() != global.rank() || l.rows() > global.rows() || l.cols() > gcols) {
      throw DimensionError("local " + shape_string(l.shape()) + " is not a crop of " +
                           shape_string(global.shape()));
    }
    for (std::size_t i = 0; i < l.rows(); ++i) {
      for (std::size_t j = 0; j < l.cols(); ++j) {
        sum[i * gcols + j] += weights[k] * l.at(i, j);
        mass[i * gcols + j] += weights[k];
      }
    }
  }
  Tensor out = global;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mass[i] > 0.0) out[i] = sum[i] / mass[i];
  }
  return out;
}

// The hidden width d is cropped wherever it appears; the input dimension and
// the class count are kept.
inline LayeredModel crop_model(const LayeredModel& global, std::size_t width) {
  const std::size_t d = global.width();
  if (width == 0 || width > d) throw DimensionError("crop width must lie in [1, d]");
  auto crop_dense = [](const Dense& dense, std::size_t rows, std::size_t cols) {
    return Dense{heterofl_crop(dense.weight, rows, cols), heterofl_crop(dense.bias, cols, 0)};
  };
  LayeredModel out;
  out.tier = global.tier;
  out.activation = global.activation;
  for (const auto& l : global.layers) out.layers.push_back(crop_dense(l, width, width));
  out.head.input = crop_dense(global.head.input, global.input_dim(), width);
  out.head.pool = crop_dense(global.head.pool, width, width);
  out.head.classifier = {heterofl_crop(global.head.classifier.weight, width, global.classes()),
                         global.head.classifier.bias};
  return out;
}

inline LayeredModel heterofl_aggregate(const LayeredModel& global,
                                       std::span<const LayeredModel> locals,
                                       std::span<const double> weights) {
  LayeredModel out = global;
  for (const auto& l : locals) detail::require_same_structure(global, l);
  std::size_t slot = 0;
  std::vector<std::vector<const Tensor*>> per_tensor;
  zip_tensors([&](const Tensor&) { per_tensor.emplace_back(); }, global);
  for (const auto& l : locals) {
    slot = 0;
    zip_tensors([&](const Tensor& t) { per_tensor[slot++].push_back(&t); }, l);
  }
  slot = 0;
  zip_tensors([&](Tensor& o) {
    o = heterofl_aggregate(o, per_tensor[slot], weights);
    ++slot;
  }, out);
  return out;
}

// Per-tier hidden widths for the width-scaled method.
struct WidthPlan {
  std::vector<std::size_t> widths;   // per tier
  std::vector<std::size_t> targets;  // parameter count of the depth-scaled tier model
  std::vector<std::size_t> counts;   // parameter count at the chosen width
};

// Parameters of a model with `depth` encoder layers of width `width`.
inline std::size_t layered_parameter_count(std::size_t input_dim, std::size_t width,
                                           std::size_t depth, std::size_t classes) {
  return input_dim * width + width + depth * (width * width + width) + width * width + width +
         width * classes + classes;
}

// Width whose full-depth model has the parameter count closest to the
// depth-scaled model of the same tier (ties go to the narrower width); the
// largest tier keeps d.
inline WidthPlan solve_widths(const TierTopology& topology, const ModelSpec& spec,
                              std::size_t classes) {
  topology.validate();
  const std::size_t full_depth = topology.largest().depth;
  auto gap = [](std::size_t a, std::size_t b) { return a > b ? a - b : b - a; };
  WidthPlan plan;
  for (std::size_t j = 0; j < topology.size(); ++j) {
    const auto target =
        layered_parameter_count(spec.input_dim, spec.width, topology[j].depth, classes);
    std::size_t w = 1;
    for (std::size_t cand = 2; cand <= spec.width; ++cand) {
      if (gap(layered_parameter_count(spec.input_dim, cand, full_depth, classes), target) <
          gap(layered_parameter_count(spec.input_dim, w, full_depth, classes), target)) {
        w = cand;
      }
    }
    plan.widths.push_back(w);
    plan.targets.push_back(target);
    plan.counts.push_back(layered_parameter_count(spec.input_dim, w, full_depth, classes));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Drivers.

namespace detail {

inline std::size_t common_class_count(const Federation& fed, std::string_view method) {
  const auto c = fed.tier_classes.front();
  for (auto k : fed.tier_classes) {
    if (k != c) {
      throw ConfigError(std::string(method) +
                        " trains one shared model and needs equal class counts in every tier");
    }
  }
  return c;
}

inline TierMetrics score(const LayeredModel& model, const Federation& fed, std::size_t tier) {
  const auto& part = fed.tier_eval[tier];
  const auto r = evaluate(model, fed.datasets.at(part.dataset), part.eval);
  return {fed.topology[tier].id, r.accuracy, r.macro_f1, kNoLoss};
}

}  // namespace detail

// One model trained with FedAdam by the participating tiers' clients.
// AllLarge: deepest model, everybody. AllSmall: shallowest, everybody.
// ExclusiveFL: deepest, strongest tier only (others are dropped after
// sampling) and deployable only there.
class HomogeneousTrainer final : public RoundDriver {
 public:
  HomogeneousTrainer(const Federation& fed, const TrainingConfig& cfg, BaselineKind kind)
      : fed_(fed), cfg_(cfg), kind_(kind) {
    fed_.validate();
    cfg_.server.validate();
    const auto& topo = fed_.topology;
    const auto classes = detail::common_class_count(fed_, baseline_name(kind));
    const std::size_t model_tier =
        kind == BaselineKind::kAllSmall ? 0 : topo.largest_index();
    model_ = init_model(cfg_.model, topo[model_tier].id, topo[model_tier].depth, classes,
                        cfg_.seed);
    opt_ = ServerOptState::fresh(model_, cfg_.server);
    if (kind == BaselineKind::kExclusive) {
      participating_.assign(topo.size(), false);
      participating_.back() = true;
      const bool any = std::any_of(fed_.clients.begin(), fed_.clients.end(), [&](const auto& c) {
        return c.tier == topo.largest_index();
      });
      if (!any) throw ConfigError("exclusivefl needs at least one client in the strongest tier");
    } else if (kind == BaselineKind::kAllLarge || kind == BaselineKind::kAllSmall) {
      participating_.assign(topo.size(), true);
    } else {
      throw ConfigError("HomogeneousTrainer handles alllarge, allsmall and exclusivefl only");
    }
  }

  std::string method() const override { return baseline_name(kind_); }
  const TierTopology& topology() const override { return fed_.topology; }

  std::vector<double> step(std::size_t t) override {
    const auto& topo = fed_.topology;
    const auto plan = sample_round(fed_.clients, topo.size(), cfg_.sample_fraction, cfg_.seed, t);
    std::vector<ClientJob> jobs;
    for (auto id : plan.sampled) {
      if (participating_[fed_.client(id).tier]) jobs.push_back({id, 0});
    }
    std::vector<double> losses(topo.size(), kNoLoss);
    if (jobs.empty()) return losses;
    const auto results =
        run_local_updates(fed_, std::span<const LayeredModel>(&model_, 1), jobs, cfg_, t);
    std::vector<ModelDelta> deltas;
    std::vector<std::vector<double>> tier_losses(topo.size());
    for (std::size_t k = 0; k < jobs.size(); ++k) {
      deltas.push_back(results[k].delta);
      tier_losses[fed_.client(jobs[k].client).tier].push_back(results[k].mean_loss);
    }
    const auto mean = homomorphic_average(deltas);
    fedadam_step(opt_, *mean, model_);
    for (std::size_t j = 0; j < topo.size(); ++j) losses[j] = mean_or_nan(tier_losses[j]);
    return losses;
  }

  std::vector<TierMetrics> evaluate_tiers() const override {
    std::vector<TierMetrics> out;
    for (std::size_t j = 0; j < fed_.topology.size(); ++j) {
      if (kind_ == BaselineKind::kExclusive && j != fed_.topology.largest_index()) continue;
      out.push_back(detail::score(model_, fed_, j));
    }
    return out;
  }

  std::vector<LayeredModel> final_models() const override { return {model_}; }
  const LayeredModel& model() const noexcept { return model_; }

 private:
  Federation fed_;
  TrainingConfig cfg_;
  BaselineKind kind_;
  LayeredModel model_;
  ServerOptState opt_;
  std::vector<bool> participating_;
};

// Every client keeps its own model at its tier's depth and trains it with
// plain local SGD when sampled; nothing is aggregated. A tier's metric is
// the mean over its clients' models.
class LocalTrainer final : public RoundDriver {
 public:
  LocalTrainer(const Federation& fed, const TrainingConfig& cfg) : fed_(fed), cfg_(cfg) {
    fed_.validate();
    const auto& topo = fed_.topology;
    for (const auto& c : fed_.clients) {
      models_.push_back(init_model(cfg_.model, topo[c.tier].id, topo[c.tier].depth,
                                   fed_.tier_classes[c.tier], cfg_.seed));
    }
  }

  std::string method() const override { return "local"; }
  const TierTopology& topology() const override { return fed_.topology; }

  std::vector<double> step(std::size_t t) override {
    const auto& topo = fed_.topology;
    const auto plan = sample_round(fed_.clients, topo.size(), cfg_.sample_fraction, cfg_.seed, t);
    std::vector<std::size_t> slots;
    for (auto id : plan.sampled) slots.push_back(slot_of(id));
    std::vector<LocalTraining> results(slots.size());
    parallel_for(slots.size(), cfg_.workers, [&](std::size_t k) {
      const auto& c = fed_.clients[slots[k]];
      Rng rng = Rng::derive(cfg_.seed, {stream::kClient, c.id, t});
      results[k] = train_local(models_[slots[k]], fed_.dataset_of(c), c.partition.train,
                               cfg_.local, rng);
    });
    std::vector<std::vector<double>> tier_losses(topo.size());
    for (std::size_t k = 0; k < slots.size(); ++k) {
      models_[slots[k]] = std::move(results[k].model);
      tier_losses[fed_.clients[slots[k]].tier].push_back(results[k].mean_loss);
    }
    std::vector<double> losses(topo.size(), kNoLoss);
    for (std::size_t j = 0; j < topo.size(); ++j) losses[j] = mean_or_nan(tier_losses[j]);
    return losses;
  }

  std::vector<TierMetrics> evaluate_tiers() const override {
    const auto& topo = fed_.topology;
    std::vector<TierMetrics> out;
    for (std::size_t j = 0; j < topo.size(); ++j) {
      double acc = 0.0, f1 = 0.0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < fed_.clients.size(); ++i) {
        const auto& c = fed_.clients[i];
        if (c.tier != j) continue;
        const auto& part = c.partition.eval.empty() ? fed_.tier_eval[j] : c.partition;
        const auto r = evaluate(models_[i], fed_.datasets.at(part.dataset), part.eval);
        acc += r.accuracy;
        f1 += r.macro_f1;
        ++n;
      }
      if (n == 0) continue;
      out.push_back({topo[j].id, acc / static_cast<double>(n), f1 / static_cast<double>(n),
                     kNoLoss});
    }
    return out;
  }

  // One model per client, in client order.
  std::vector<LayeredModel> final_models() const override { return models_; }

 private:
  std::size_t slot_of(std::size_t id) const {
    return static_cast<std::size_t>(&fed_.client(id) - fed_.clients.data());
  }

  Federation fed_;
  TrainingConfig cfg_;
  std::vector<LayeredModel> models_;
};

// Full-depth models of reduced width. Sampled clients train the top-left
// crop of the global model at their tier's width; the server averages every
// entry over the crops covering it and feeds the resulting change to FedAdam.
class HeteroFLTrainer final : public RoundDriver {
 public:
  HeteroFLTrainer(const Federation& fed, const TrainingConfig& cfg) : fed_(fed), cfg_(cfg) {
    fed_.validate();
    cfg_.server.validate();
    const auto& topo = fed_.topology;
    const auto classes = detail::common_class_count(fed_, "heterofl");
    plan_ = solve_widths(topo, cfg_.model, classes);
    global_ = init_model(cfg_.model, topo.largest().id, topo.largest().depth, classes, cfg_.seed);
    opt_ = ServerOptState::fresh(global_, cfg_.server);
  }

  std::string method() const override { return "heterofl"; }
  const TierTopology& topology() const override { return fed_.topology; }
  const WidthPlan& width_plan() const noexcept { return plan_; }

  std::vector<double> step(std::size_t t) override {
    const auto& topo = fed_.topology;
    const auto plan = sample_round(fed_.clients, topo.size(), cfg_.sample_fraction, cfg_.seed, t);
    const auto crops = tier_models();
    std::vector<ClientJob> jobs;
    for (auto id : plan.sampled) jobs.push_back({id, fed_.client(id).tier});
    std::vector<LocalTraining> results(jobs.size());
    parallel_for(jobs.size(), cfg_.workers, [&](std::size_t k) {
      const auto& c = fed_.client(jobs[k].client);
      Rng rng = Rng::derive(cfg_.seed, {stream::kClient, c.id, t});
      results[k] = train_local(crops[jobs[k].model], fed_.dataset_of(c), c.partition.train,
                               cfg_.local, rng);
    });
    std::vector<LayeredModel> locals;
    std::vector<std::vector<double>> tier_losses(topo.size());
    for (std::size_t k = 0; k < jobs.size(); ++k) {
      locals.push_back(std::move(results[k].model));
      tier_losses[jobs[k].model].push_back(results[k].mean_loss);
    }
    const std::vector<double> weights(locals.size(), 1.0);
    const auto merged = heterofl_aggregate(global_, locals, weights);
    fedadam_step(opt_, delta_between(merged, global_), global_);
    std::vector<double> losses(topo.size(), kNoLoss);
    for (std::size_t j = 0; j < topo.size(); ++j) losses[j] = mean_or_nan(tier_losses[j]);
    return losses;
  }

  std::vector<TierMetrics> evaluate_tiers() const override {
    std::vector<TierMetrics> out;
    const auto crops = tier_models();
    for (std::size_t j = 0; j < crops.size(); ++j) out.push_back(detail::score(crops[j], fed_, j));
    return out;
  }

  // Crop per tier; the largest tier's entry is the full global model.
  std::vector<LayeredModel> tier_models() const {
    std::vector<LayeredModel> out;
    for (std::size_t j = 0; j < fed_.topology.size(); ++j) {
      auto m = crop_model(global_, plan_.widths[j]);
      m.tier = fed_.topology[j].id;
      out.push_back(std::move(m));
    }
    return out;
  }

  std::vector<LayeredModel> final_models() const override { return tier_models(); }
  const LayeredModel& global_model() const noexcept { return global_; }

 private:
  Federation fed_;
  TrainingConfig cfg_;
  WidthPlan plan_;
  LayeredModel global_;
  ServerOptState opt_;
};

inline RunReport run_baseline(BaselineKind kind, const Federation& fed, const TrainingConfig& cfg) {
  switch (kind) {
    case BaselineKind::kAllLarge:
    case BaselineKind::kAllSmall:
    case BaselineKind::kExclusive: {
      HomogeneousTrainer trainer(fed, cfg, kind);
      return run_rounds(trainer, cfg.rounds, cfg.eval_interval);
    }
    case BaselineKind::kLocal: {
      LocalTrainer trainer(fed, cfg);
      return run_rounds(trainer, cfg.rounds, cfg.eval_interval);
    }
    case BaselineKind::kHeteroFL: {
      HeteroFLTrainer trainer(fed, cfg);
      return run_rounds(trainer, cfg.rounds, cfg.eval_interval);
    }
  }
  throw ConfigError("unknown baseline");
}

}  // namespace hetfl
