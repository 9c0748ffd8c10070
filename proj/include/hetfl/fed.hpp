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

// Server side of layer-wise heterogeneous federated training.
//
// Each round: sample clients, run local SGD per client from its tier's
// sub-global model, average the uploaded deltas within each tier, inject
// the next larger tier's momentum into the top encoder layer of each
// smaller tier's mean, apply FedAdam per tier, refresh the momentum bank,
// then average the shared encoder layers across tiers weighted by this
// round's per-tier client counts and rebuild the smaller tiers' prefixes
// from the largest model.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "hetfl/data.hpp"
#include "hetfl/error.hpp"
#include "hetfl/metrics.hpp"
#include "hetfl/model.hpp"
#include "hetfl/rng.hpp"
#include "hetfl/tensor.hpp"
#include "hetfl/topology.hpp"

namespace hetfl {

namespace stream {
inline constexpr std::uint64_t kSample = 0x5a11;
inline constexpr std::uint64_t kClient = 0xc11e;
inline constexpr std::uint64_t kTierAssign = 0x7e1a;
}  // namespace stream

// ---------------------------------------------------------------------------
// Client sampling.

struct RoundPlan {
  std::size_t round = 0;
  std::vector<std::size_t> sampled;              // client ids, ascending
  std::vector<std::vector<std::size_t>> groups;  // per tier, ascending ids
  std::vector<std::size_t> counts;               // per tier, |group|
};

// ceil(fraction * K) clients, guarded against representation error in the
// product (0.1 * 30 must give 3, not 4).
inline std::size_t sample_size(double fraction, std::size_t pool) {
  const double raw = fraction * static_cast<double>(pool);
  auto m = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::clamp<std::size_t>(m, 1, pool);
}

// Uniform sample without replacement, deterministic in (seed, round).
inline RoundPlan sample_round(std::span<const ClientSpec> clients, std::size_t tier_count,
                              double fraction, std::uint64_t seed, std::size_t round) {
  if (clients.empty()) throw ConfigError("client pool is empty");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("sample fraction must lie in (0, 1]");
  }
  std::vector<std::size_t> order(clients.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = Rng::derive(seed, {stream::kSample, round});
  rng.shuffle(std::span<std::size_t>(order));
  order.resize(sample_size(fraction, clients.size()));

  RoundPlan plan;
  plan.round = round;
  plan.groups.resize(tier_count);
  for (auto pos : order) plan.sampled.push_back(clients[pos].id);
  std::sort(plan.sampled.begin(), plan.sampled.end());
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return clients[a].id < clients[b].id; });
  for (auto pos : order) {
    const auto& c = clients[pos];
    if (c.tier >= tier_count) throw ConfigError("client assigned to an unknown tier");
    plan.groups[c.tier].push_back(c.id);
  }
  for (const auto& g : plan.groups) plan.counts.push_back(g.size());
  return plan;
}

// Independent draw per client: tier j with probability proportion_j.
inline std::vector<std::size_t> assign_tiers(std::size_t clients, const TierTopology& topology,
                                             std::uint64_t seed) {
  std::vector<std::size_t> out(clients);
  for (std::size_t i = 0; i < clients; ++i) {
    Rng rng = Rng::derive(seed, {stream::kTierAssign, i});
    const double u = rng.uniform();
    double cum = 0.0;
    std::size_t tier = topology.largest_index();
    for (std::size_t j = 0; j < topology.size(); ++j) {
      cum += topology[j].proportion;
      if (u < cum) {
        tier = j;
        break;
      }
    }
    out[i] = tier;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Local update.

struct LocalSgdConfig {
  std::size_t steps = 5;
  std::size_t batch_size = 64;
  double lr = 0.05;
};

// Without replacement when the partition holds at least `batch` samples,
// with replacement otherwise.
inline std::vector<std::size_t> draw_batch(std::span<const std::size_t> train, std::size_t batch,
                                           Rng& rng) {
  const std::size_t n = train.size();
  std::vector<std::size_t> out(batch);
  if (n >= batch) {
    std::vector<std::size_t> pool(train.begin(), train.end());
    for (std::size_t i = 0; i < batch; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(n - i));
      std::swap(pool[i], pool[j]);
      out[i] = pool[i];
    }
  } else {
    for (auto& v : out) v = train[static_cast<std::size_t>(rng.below(n))];
  }
  return out;
}

struct LocalTraining {
  LayeredModel model;
  double mean_loss = 0.0;
};

// `steps` mini-batch SGD steps on a copy of `start`.
inline LocalTraining train_local(const LayeredModel& start, const Dataset& ds,
                                 std::span<const std::size_t> train,
                                 const LocalSgdConfig& cfg, Rng& rng) {
  if (train.empty()) throw DataError("local partition is empty");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
  LocalTraining out{start, 0.0};
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const auto idx = draw_batch(train, cfg.batch_size, rng);
    auto [x, y] = gather(ds, idx);
    ForwardCache cache;
    const Tensor logits = forward(out.model, x, &cache);
    auto lg = loss_and_backward(out.model, cache, logits, y);
    sgd_step(out.model, lg.gradient, cfg.lr);
    out.mean_loss += lg.loss;
  }
  if (cfg.steps > 0) out.mean_loss /= static_cast<double>(cfg.steps);
  return out;
}

struct LocalUpdate {
  ModelDelta delta;  // w_after - w_start
  double mean_loss = 0.0;
};

inline LocalUpdate local_update(const LayeredModel& start, const Dataset& ds,
                                std::span<const std::size_t> train, const LocalSgdConfig& cfg,
                                Rng& rng) {
  auto trained = train_local(start, ds, train, cfg, rng);
  return {delta_between(trained.model, start), trained.mean_loss};
}

// ---------------------------------------------------------------------------
// Aggregation within a tier.

// Unweighted mean, summed in the given order. nullopt when the group is
// empty: that tier skips the round.
inline std::optional<ModelDelta> homomorphic_average(std::span<const ModelDelta> deltas) {
  if (deltas.empty()) return std::nullopt;
  ModelDelta sum = deltas.front();
  for (std::size_t i = 1; i < deltas.size(); ++i) add_scaled(sum, 1.0, deltas[i]);
  const double n = static_cast<double>(deltas.size());
  if (deltas.size() > 1) {
    zip_tensors([n](Tensor& t) {
      for (auto& v : t.data()) v /= n;
    }, sum);
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Momentum distillation.

// One encoder-layer-shaped momentum per tier; the smallest tier has none.
struct MomentumBank {
  std::vector<std::optional<EncoderLayer>> entries;

  static MomentumBank zeros(const std::vector<LayeredModel>& models) {
    MomentumBank bank;
    for (std::size_t j = 0; j < models.size(); ++j) {
      if (j == 0) {
        bank.entries.emplace_back();
      } else {
        bank.entries.emplace_back(zeros_like(models[j].layers.back()));
      }
    }
    return bank;
  }

  friend bool operator==(const MomentumBank&, const MomentumBank&) = default;
};

inline void require_beta(double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("momentum factor must lie in [0, 1]");
}

// Top encoder-layer slice becomes beta * momentum + (1 - beta) * slice;
// every other tensor is left untouched.
inline ModelDelta distill_momentum(ModelDelta group_mean, const EncoderLayer& momentum,
                                   double beta) {
  require_beta(beta);
  if (group_mean.layers.empty()) throw TopologyError("group mean has no encoder layers");
  auto& top = group_mean.layers.back();
  auto blend = [beta](Tensor& g, const Tensor& m) {
    detail::require_same_shape(g, m, "distill_momentum");
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = beta * m[i] + (1.0 - beta) * g[i];
  };
  blend(top.weight, momentum.weight);
  blend(top.bias, momentum.bias);
  return group_mean;
}

// Mean of encoder-layer slices lower..upper (1-based, inclusive), where
// `lower` is the depth of the next smaller tier and `upper` this tier's depth.
inline EncoderLayer compute_layer_momentum(const ModelDelta& group_mean, std::size_t lower,
                                           std::size_t upper) {
  if (lower >= upper) {
    throw TopologyError("momentum range needs lower depth < upper depth (" +
                        std::to_string(lower) + " vs " + std::to_string(upper) + ")");
  }
  if (lower == 0 || upper > group_mean.layers.size()) {
    throw TopologyError("momentum range outside the encoder stack");
  }
  EncoderLayer m = group_mean.layers[lower - 1];
  for (std::size_t l = lower + 1; l <= upper; ++l) {
    axpy_inplace(1.0, group_mean.layers[l - 1].weight, m.weight);
    axpy_inplace(1.0, group_mean.layers[l - 1].bias, m.bias);
  }
  const double n = static_cast<double>(upper - lower + 1);
  for (auto& v : m.weight.data()) v /= n;
  for (auto& v : m.bias.data()) v /= n;
  return m;
}

// ---------------------------------------------------------------------------
// FedAdam.

struct FedAdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eta = 0.01;
  double tau = 1e-8;

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("FedAdam betas must lie in [0, 1)");
    }
    if (!(tau > 0.0)) throw ConfigError("FedAdam tau must be positive");
    if (!(eta > 0.0)) throw ConfigError("FedAdam eta must be positive");
  }
};

struct ServerOptState {
  ModelDelta m;
  ModelDelta v;
  FedAdamConfig config;

  static ServerOptState fresh(const ParameterSet& model, const FedAdamConfig& config) {
    config.validate();
    return {zeros_like(model), zeros_like(model), config};
  }
};

// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;  w <- w + eta m / (sqrt(v) + tau)
inline void fedadam_update(Tensor& w, Tensor& m, Tensor& v, const Tensor& g,
                           const FedAdamConfig& c) {
  detail::require_same_shape(w, g, "fedadam");
  detail::require_same_shape(m, g, "fedadam");
  detail::require_same_shape(v, g, "fedadam");
  for (std::size_t i = 0; i < g.size(); ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
    w[i] = w[i] + c.eta * m[i] / (std::sqrt(v[i]) + c.tau);
  }
}

// Validates the whole update before touching any state, so a non-finite
// entry leaves model and moments as they were.
inline void fedadam_step(ServerOptState& state, const ParameterSet& update, ParameterSet& model) {
  std::size_t index = 0;
  zip_tensors([&](const Tensor& g) {
    for (double x : g.data()) {
      if (!std::isfinite(x)) {
        throw NumericError("non-finite aggregated update at flat parameter index " +
                           std::to_string(index));
      }
      ++index;
    }
  }, update);
  zip_tensors([&](Tensor& w, Tensor& m, Tensor& v, const Tensor& g) {
    fedadam_update(w, m, v, g, state.config);
  }, model, state.m, state.v, update);
}

// ---------------------------------------------------------------------------
// Cross-tier aggregation.

// n-weighted mean of equal-shape tensors, anchored at the first one:
// x_0 + sum_j w_j (x_j - x_0). A single contributor or identical inputs come
// back bit-exact.
inline void weighted_mean_into(Tensor& out, std::span<const Tensor* const> xs,
                               std::span<const double> weights) {
  const Tensor& anchor = *xs.front();
  for (const auto* x : xs) detail::require_same_shape(anchor, *x, "weighted mean");
  out = anchor;
  for (std::size_t j = 1; j < xs.size(); ++j) {
    const Tensor& x = *xs[j];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += weights[j] * (x[i] - anchor[i]);
  }
}

// For each layer l, tiers with l <= L_j - 1 and a nonzero count are averaged
// into the largest model; each smaller tier then takes the largest model's
// layers 1..L_j-1 and keeps its own top layer L_j. Heads are never touched.
inline void heterogeneous_aggregate(std::vector<LayeredModel>& models,
                                    std::span<const std::size_t> counts,
                                    const TierTopology& topology) {
  if (models.size() != topology.size() || counts.size() != topology.size()) {
    throw TopologyError("need one model and one count per tier");
  }
  for (std::size_t j = 0; j < models.size(); ++j) {
    if (models[j].layers.size() != topology[j].depth) {
      throw TopologyError("model depth does not match tier '" + topology[j].id + "'");
    }
  }
  if (std::all_of(counts.begin(), counts.end(), [](std::size_t n) { return n == 0; })) return;

  auto& big = models.back();
  const std::size_t shared_layers = big.layers.size() - 1;
  for (std::size_t l = 0; l < shared_layers; ++l) {
    std::vector<std::size_t> members;
    double total = 0.0;
    for (std::size_t j = 0; j < models.size(); ++j) {
      if (counts[j] > 0 && l + 1 < topology[j].depth) {
        members.push_back(j);
        total += static_cast<double>(counts[j]);
      }
    }
    if (members.empty()) continue;
    std::vector<double> weights;
    std::vector<const Tensor*> ws, bs;
    for (auto j : members) {
      weights.push_back(static_cast<double>(counts[j]) / total);
      ws.push_back(&models[j].layers[l].weight);
      bs.push_back(&models[j].layers[l].bias);
    }
    EncoderLayer merged;
    weighted_mean_into(merged.weight, ws, weights);
    weighted_mean_into(merged.bias, bs, weights);
    big.layers[l] = std::move(merged);
  }
  for (std::size_t j = 0; j + 1 < models.size(); ++j) {
    for (std::size_t l = 0; l + 1 < topology[j].depth; ++l) models[j].layers[l] = big.layers[l];
  }
}

// ---------------------------------------------------------------------------
// Federation setup shared by every training method.

struct Federation {
  TierTopology topology;
  std::vector<Dataset> datasets;
  std::vector<ClientSpec> clients;         // ascending id
  std::vector<Partition> tier_eval;        // per tier: where its model is scored
  std::vector<std::size_t> tier_classes;   // per tier: head output size

  const Dataset& dataset_of(const ClientSpec& c) const {
    return datasets.at(c.partition.dataset);
  }

  const ClientSpec& client(std::size_t id) const {
    auto it = std::lower_bound(clients.begin(), clients.end(), id,
                               [](const ClientSpec& c, std::size_t v) { return c.id < v; });
    if (it == clients.end() || it->id != id) {
      throw ConfigError("unknown client id " + std::to_string(id));
    }
    return *it;
  }

  void validate() const {
    topology.validate();
    if (clients.empty()) throw ConfigError("federation has no clients");
    if (tier_eval.size() != topology.size() || tier_classes.size() != topology.size()) {
      throw ConfigError("need evaluation data and a class count for every tier");
    }
    for (std::size_t i = 0; i < clients.size(); ++i) {
      const auto& c = clients[i];
      if (i > 0 && clients[i - 1].id >= c.id) throw ConfigError("clients must be sorted by id");
      if (c.tier >= topology.size()) throw ConfigError("client assigned to an unknown tier");
      if (c.partition.dataset >= datasets.size()) throw ConfigError("client dataset missing");
      if (c.sample_count() == 0) {
        throw DataError("client " + std::to_string(c.id) + " has no training samples");
      }
      if (datasets[c.partition.dataset].classes != tier_classes[c.tier]) {
        throw ConfigError("client " + std::to_string(c.id) +
                          " data class count differs from its tier head");
      }
    }
  }
};

struct TrainingConfig {
  ModelSpec model;
  LocalSgdConfig local;
  FedAdamConfig server;
  double beta = 0.2;
  double sample_fraction = 1.0;
  std::size_t rounds = 10;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  std::size_t eval_interval = 1;
};

// Runs fn(i) for i in [0, n) on up to `workers` threads. Results must be
// written to slot i, so the reduction order downstream stays fixed.
template <class F>
void parallel_for(std::size_t n, std::size_t workers, F&& fn) {
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

struct ClientJob {
  std::size_t client = 0;
  std::size_t model = 0;  // which model the client starts from
};

// Local updates for every job, each with its own (seed, client, round)
// stream. Slot k of the result belongs to jobs[k].
inline std::vector<LocalUpdate> run_local_updates(const Federation& fed,
                                                  std::span<const LayeredModel> models,
                                                  std::span<const ClientJob> jobs,
                                                  const TrainingConfig& cfg, std::size_t round) {
  std::vector<LocalUpdate> out(jobs.size());
  parallel_for(jobs.size(), cfg.workers, [&](std::size_t k) {
    const auto& c = fed.client(jobs[k].client);
    Rng rng = Rng::derive(cfg.seed, {stream::kClient, c.id, round});
    out[k] = local_update(models[jobs[k].model], fed.dataset_of(c), c.partition.train,
                          cfg.local, rng);
  });
  return out;
}

inline double mean_or_nan(std::span<const double> xs) {
  if (xs.empty()) return kNoLoss;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// ---------------------------------------------------------------------------
// Round drivers.

class RoundDriver {
 public:
  virtual ~RoundDriver() = default;
  virtual std::string method() const = 0;
  // Executes round t (1-based) and returns per-tier training loss, NaN for
  // tiers that did not train.
  virtual std::vector<double> step(std::size_t t) = 0;
  // One entry per deployable tier.
  virtual std::vector<TierMetrics> evaluate_tiers() const = 0;
  virtual std::vector<LayeredModel> final_models() const = 0;
  virtual const TierTopology& topology() const = 0;
};

// Initial evaluation, then `rounds` rounds, evaluating every
// `eval_interval` rounds and after the last one.
inline RunReport run_rounds(RoundDriver& driver, std::size_t rounds, std::size_t eval_interval) {
  if (eval_interval == 0) throw ConfigError("eval interval must be positive");
  const auto start = std::chrono::steady_clock::now();
  RunReport report;
  report.method = driver.method();
  report.large_tier = driver.topology().largest().id;
  const auto& topo = driver.topology();
  auto record = [&](std::size_t t, const std::vector<double>& losses) {
    RoundRecord rec{t, driver.evaluate_tiers()};
    for (auto& m : rec.tiers) m.train_loss = losses.at(topo.index_of(m.tier));
    report.rounds.push_back(std::move(rec));
  };
  record(0, std::vector<double>(topo.size(), kNoLoss));
  for (std::size_t t = 1; t <= rounds; ++t) {
    const auto losses = driver.step(t);
    if (t % eval_interval == 0 || t == rounds) record(t, losses);
  }
  report.final_models = driver.final_models();
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

enum class InclusiveMode {
  kFull,       // distillation and layer sharing
  kNoMomentum, // layer sharing only
  kStar,       // distillation only, no cross-tier layer sharing
};

inline std::string inclusive_method_name(InclusiveMode mode) {
  switch (mode) {
    case InclusiveMode::kFull: return "inclusivefl";
    case InclusiveMode::kNoMomentum: return "inclusivefl-no-md";
    case InclusiveMode::kStar: return "inclusivefl-star";
  }
  return "inclusivefl";
}

// Intermediate values of the most recent round, kept for inspection.
struct RoundTrace {
  RoundPlan plan;
  std::vector<std::optional<ModelDelta>> group_means;  // before distillation
  std::vector<std::optional<ModelDelta>> updates;      // what FedAdam consumed
  MomentumBank bank_before;
  MomentumBank bank_after;
};

class InclusiveTrainer final : public RoundDriver {
 public:
  InclusiveTrainer(const Federation& fed, const TrainingConfig& cfg, InclusiveMode mode)
      : fed_(fed), cfg_(cfg), mode_(mode) {
    fed_.validate();
    require_beta(cfg_.beta);
    cfg_.server.validate();
    models_ = build_tier_models(fed_.topology, cfg_.model, fed_.tier_classes, cfg_.seed);
    for (const auto& m : models_) opt_.push_back(ServerOptState::fresh(m, cfg_.server));
    bank_ = MomentumBank::zeros(models_);
  }

  std::string method() const override { return inclusive_method_name(mode_); }
  const TierTopology& topology() const override { return fed_.topology; }

  std::vector<double> step(std::size_t t) override {
    const auto& topo = fed_.topology;
    const std::size_t tiers = topo.size();
    RoundTrace trace;
    trace.plan = sample_round(fed_.clients, tiers, cfg_.sample_fraction, cfg_.seed, t);
    trace.bank_before = bank_;

    std::vector<ClientJob> jobs;
    for (std::size_t j = 0; j < tiers; ++j) {
      for (auto id : trace.plan.groups[j]) jobs.push_back({id, j});
    }
    const auto results = run_local_updates(fed_, models_, jobs, cfg_, t);

    std::vector<double> losses(tiers, kNoLoss);
    std::size_t k = 0;
    for (std::size_t j = 0; j < tiers; ++j) {
      std::vector<ModelDelta> deltas;
      std::vector<double> group_losses;
      for (std::size_t n = 0; n < trace.plan.groups[j].size(); ++n, ++k) {
        deltas.push_back(results[k].delta);
        group_losses.push_back(results[k].mean_loss);
      }
      trace.group_means.push_back(homomorphic_average(deltas));
      losses[j] = mean_or_nan(group_losses);
    }

    // Phase 1 reads the previous round's bank; phase 2 writes the new one.
    trace.updates = trace.group_means;
    if (mode_ != InclusiveMode::kNoMomentum) {
      for (std::size_t j = 0; j + 1 < tiers; ++j) {
        if (trace.updates[j]) {
          trace.updates[j] = distill_momentum(std::move(*trace.updates[j]),
                                              *bank_.entries[j + 1], cfg_.beta);
        }
      }
    }
    for (std::size_t j = 0; j < tiers; ++j) {
      if (trace.updates[j]) fedadam_step(opt_[j], *trace.updates[j], models_[j]);
    }
    for (std::size_t j = 1; j < tiers; ++j) {
      if (trace.updates[j]) {
        bank_.entries[j] =
            compute_layer_momentum(*trace.updates[j], topo[j - 1].depth, topo[j].depth);
      }
    }
    trace.bank_after = bank_;

    if (mode_ != InclusiveMode::kStar) {
      heterogeneous_aggregate(models_, trace.plan.counts, topo);
    }
    trace_ = std::move(trace);
    return losses;
  }

  std::vector<TierMetrics> evaluate_tiers() const override {
    std::vector<TierMetrics> out;
    for (std::size_t j = 0; j < models_.size(); ++j) {
      const auto& part = fed_.tier_eval[j];
      const auto r = evaluate(models_[j], fed_.datasets.at(part.dataset), part.eval);
      out.push_back({models_[j].tier, r.accuracy, r.macro_f1, kNoLoss});
    }
    return out;
  }

  std::vector<LayeredModel> final_models() const override { return models_; }

  const std::vector<LayeredModel>& models() const noexcept { return models_; }
  const MomentumBank& bank() const noexcept { return bank_; }
  const std::vector<ServerOptState>& optimizer_states() const noexcept { return opt_; }
  const RoundTrace& last_trace() const noexcept { return trace_; }

 private:
  Federation fed_;
  TrainingConfig cfg_;
  InclusiveMode mode_;
  std::vector<LayeredModel> models_;
  std::vector<ServerOptState> opt_;
  MomentumBank bank_;
  RoundTrace trace_;
};

inline RunReport run_training(const Federation& fed, const TrainingConfig& cfg,
                              InclusiveMode mode) {
  InclusiveTrainer trainer(fed, cfg, mode);
  return run_rounds(trainer, cfg.rounds, cfg.eval_interval);
}

}  // namespace hetfl
