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

#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "hetfl/checkpoint.hpp"
#include "hetfl/fed.hpp"
#include "hetfl/harness.hpp"
#include "test_support.hpp"

namespace hetfl {
namespace {

Dense scalar_dense(double v) { return {Tensor({1, 1}, {v}), Tensor({1}, {v})}; }

LayeredModel scalar_model(std::vector<double> layer_values, double head = 0.0) {
  LayeredModel m;
  for (double v : layer_values) m.layers.push_back(scalar_dense(v));
  m.head = {scalar_dense(head), scalar_dense(head), scalar_dense(head)};
  return m;
}

ModelDelta scalar_delta(double v, std::size_t depth = 2) {
  ModelDelta d;
  static_cast<ParameterSet&>(d) = scalar_model(std::vector<double>(depth, v), v);
  return d;
}

std::vector<ClientSpec> pool(std::size_t n, std::size_t tiers) {
  std::vector<ClientSpec> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({i, i % tiers, {0, {0}, {}}});
  return out;
}

// ---------------------------------------------------------------------------
// Sampling.

TEST(SampleRound, FractionOfLargePool) {
  EXPECT_EQ(sample_size(0.02, 1000), 20u);
  EXPECT_EQ(sample_size(0.1, 30), 3u);
  EXPECT_EQ(sample_size(0.2, 30), 6u);
  EXPECT_EQ(sample_size(0.001, 30), 1u);
  const auto clients = pool(1000, 3);
  const auto plan = sample_round(clients, 3, 0.02, 5, 1);
  EXPECT_EQ(plan.sampled.size(), 20u);
  std::size_t total = 0;
  for (auto c : plan.counts) total += c;
  EXPECT_EQ(total, 20u);
}

TEST(SampleRound, FullParticipationPartitionsPool) {
  const auto clients = pool(30, 3);
  const auto plan = sample_round(clients, 3, 1.0, 5, 1);
  ASSERT_EQ(plan.sampled.size(), 30u);
  std::set<std::size_t> seen;
  for (std::size_t j = 0; j < 3; ++j) {
    for (auto id : plan.groups[j]) {
      EXPECT_EQ(clients[id].tier, j);
      EXPECT_TRUE(seen.insert(id).second);
    }
    EXPECT_TRUE(std::is_sorted(plan.groups[j].begin(), plan.groups[j].end()));
  }
  EXPECT_EQ(seen.size(), 30u);
}

TEST(SampleRound, DeterministicInSeedAndRound) {
  const auto clients = pool(100, 3);
  const auto a = sample_round(clients, 3, 0.1, 9, 4);
  const auto b = sample_round(clients, 3, 0.1, 9, 4);
  EXPECT_EQ(a.sampled, b.sampled);
  EXPECT_EQ(a.groups, b.groups);
  EXPECT_NE(a.sampled, sample_round(clients, 3, 0.1, 9, 5).sampled);
}

TEST(SampleRound, Errors) {
  const std::vector<ClientSpec> none;
  EXPECT_THROW(sample_round(none, 3, 0.5, 1, 1), ConfigError);
  const auto clients = pool(10, 3);
  EXPECT_THROW(sample_round(clients, 3, 0.0, 1, 1), ConfigError);
  EXPECT_THROW(sample_round(clients, 3, 1.5, 1, 1), ConfigError);
}

TEST(AssignTiers, FollowsProportions) {
  const auto topo = make_topology({2, 4, 6}, {1, 2, 7});
  const auto tiers = assign_tiers(20000, topo, 3);
  std::vector<double> freq(3, 0.0);
  for (auto t : tiers) freq[t] += 1.0 / 20000.0;
  EXPECT_NEAR(freq[0], 0.1, 0.01);
  EXPECT_NEAR(freq[1], 0.2, 0.01);
  EXPECT_NEAR(freq[2], 0.7, 0.01);
}

// ---------------------------------------------------------------------------
// Local update.

struct LocalFixture : ::testing::Test {
  void SetUp() override {
    Rng gen(1);
    ds = make_synthetic({200, 4, 3, 0.5, 0.0, 0, 2.0, 1, 0.0, "d"}, gen);
    for (std::size_t i = 0; i < 100; ++i) train.push_back(i);
    model = init_model({4, 5, Activation::kTanh}, "t", 2, 3, 7);
  }
  Dataset ds;
  std::vector<std::size_t> train;
  LayeredModel model;
};

TEST_F(LocalFixture, ZeroLearningRateGivesZeroDelta) {
  Rng rng(3);
  const auto up = local_update(model, ds, train, {5, 16, 0.0}, rng);
  zip_tensors([](const Tensor& t) {
    for (double v : t.data()) EXPECT_EQ(v, 0.0);
  }, up.delta);
  EXPECT_GT(up.mean_loss, 0.0);
}

TEST_F(LocalFixture, OneStepIsNegativeScaledGradient) {
  const double lr = 0.05;
  Rng rng(3);
  const auto up = local_update(model, ds, train, {1, 8, lr}, rng);

  Rng replay(3);
  const auto idx = draw_batch(train, 8, replay);
  auto [x, y] = gather(ds, idx);
  ForwardCache cache;
  const auto logits = forward(model, x, &cache);
  const auto g = loss_and_backward(model, cache, logits, y).gradient;
  zip_tensors([lr](const Tensor& d, const Tensor& gt) {
    for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(d[i], -lr * gt[i], 1e-15);
  }, up.delta, g);
}

TEST_F(LocalFixture, FiveStepsOfSixtyFour) {
  Rng rng(4);
  const auto up = local_update(model, ds, train, {5, 64, 0.1}, rng);
  EXPECT_TRUE(std::isfinite(up.mean_loss));
  EXPECT_EQ(up.delta.depth(), 2u);
}

TEST_F(LocalFixture, OversizedBatchSamplesWithReplacement) {
  const std::vector<std::size_t> few{3, 5, 9};
  Rng rng(5);
  const auto idx = draw_batch(few, 10, rng);
  EXPECT_EQ(idx.size(), 10u);
  for (auto i : idx) EXPECT_TRUE(i == 3 || i == 5 || i == 9);
  Rng rng2(5);
  EXPECT_NO_THROW(local_update(model, ds, few, {2, 10, 0.1}, rng2));
}

TEST_F(LocalFixture, BatchWithoutReplacementHasNoRepeats) {
  Rng rng(6);
  const auto idx = draw_batch(train, 64, rng);
  EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 64u);
}

TEST_F(LocalFixture, EmptyPartition) {
  Rng rng(1);
  const std::vector<std::size_t> none;
  EXPECT_THROW(local_update(model, ds, none, {1, 4, 0.1}, rng), DataError);
}

// ---------------------------------------------------------------------------
// Homomorphic average, distillation, momentum.

TEST(HomomorphicAverage, Examples) {
  const std::vector<ModelDelta> one{scalar_delta(1.5)};
  EXPECT_EQ(*homomorphic_average(one), one[0]);

  const std::vector<ModelDelta> opposite{scalar_delta(0.7), scalar_delta(-0.7)};
  const auto zero = *homomorphic_average(opposite);
  zip_tensors([](const Tensor& t) { EXPECT_EQ(t[0], 0.0); }, zero);

  const std::vector<ModelDelta> three{scalar_delta(1), scalar_delta(2), scalar_delta(6)};
  const auto mean = *homomorphic_average(three);
  zip_tensors([](const Tensor& t) { EXPECT_EQ(t[0], 3.0); }, mean);
}

TEST(HomomorphicAverage, EmptyGroupIsNoUpdate) {
  const std::vector<ModelDelta> none;
  EXPECT_FALSE(homomorphic_average(none).has_value());
}

TEST(DistillMomentum, Examples) {
  const auto g = scalar_delta(2.0, 3);
  const auto m = scalar_dense(4.0);
  EXPECT_EQ(distill_momentum(g, m, 0.0), g);

  const auto full = distill_momentum(g, m, 1.0);
  EXPECT_EQ(full.layers.back(), m);

  const auto half = distill_momentum(g, m, 0.5);
  EXPECT_EQ(half.layers.back().weight[0], 3.0);
  EXPECT_EQ(half.layers.back().bias[0], 3.0);
  for (std::size_t l = 0; l + 1 < half.layers.size(); ++l) EXPECT_EQ(half.layers[l], g.layers[l]);
  EXPECT_EQ(half.head, g.head);
}

TEST(DistillMomentum, BetaOutOfRange) {
  const auto g = scalar_delta(2.0);
  EXPECT_THROW(distill_momentum(g, scalar_dense(1.0), -0.1), ConfigError);
  EXPECT_THROW(distill_momentum(g, scalar_dense(1.0), 1.1), ConfigError);
}

TEST(LayerMomentum, Examples) {
  ModelDelta g = scalar_delta(0.0, 3);
  g.layers[1] = scalar_dense(2.0);
  g.layers[2] = scalar_dense(5.0);
  const auto m = compute_layer_momentum(g, 2, 3);
  EXPECT_EQ(m.weight[0], 3.5);

  EXPECT_EQ(compute_layer_momentum(scalar_delta(0.0, 4), 2, 4), scalar_dense(0.0));
  EXPECT_EQ(compute_layer_momentum(scalar_delta(0.25, 6), 4, 6), scalar_dense(0.25));
}

TEST(LayerMomentum, RangeErrors) {
  const auto g = scalar_delta(1.0, 4);
  EXPECT_THROW(compute_layer_momentum(g, 3, 3), TopologyError);
  EXPECT_THROW(compute_layer_momentum(g, 4, 2), TopologyError);
  EXPECT_THROW(compute_layer_momentum(g, 2, 5), TopologyError);
}

// ---------------------------------------------------------------------------
// FedAdam.

TEST(FedAdam, ZeroUpdateLeavesWeights) {
  Tensor w({2}, {0.3, -1.0}), m = Tensor::zeros({2}), v = Tensor::zeros({2});
  fedadam_update(w, m, v, Tensor::zeros({2}), {});
  EXPECT_EQ(w, Tensor({2}, {0.3, -1.0}));
}

TEST(FedAdam, FirstScalarStep) {
  Tensor w({1}, {0.0}), m({1}, {0.0}), v({1}, {0.0});
  fedadam_update(w, m, v, Tensor({1}, {1.0}), {0.9, 0.99, 0.1, 1e-8});
  EXPECT_NEAR(m[0], 0.1, 1e-16);
  EXPECT_NEAR(v[0], 0.01, 1e-17);
  EXPECT_NEAR(w[0], 0.1 * 0.1 / (0.1 + 1e-8), 1e-16);
  EXPECT_NEAR(w[0], 0.0999999900, 1e-10);
}

TEST(FedAdam, DegenerateMomentsGiveSignStep) {
  Tensor w = Tensor::zeros({3}), m = Tensor::zeros({3}), v = Tensor::zeros({3});
  const Tensor g({3}, {2.0, -0.5, 1e-3});
  const FedAdamConfig c{0.0, 0.0, 0.1, 1e-8};
  fedadam_update(w, m, v, g, c);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(w[i], c.eta * g[i] / (std::abs(g[i]) + c.tau), 1e-16);
  }
}

TEST(FedAdam, NonFiniteUpdateLeavesStateUntouched) {
  auto model = scalar_model({1.0, 2.0});
  auto state = ServerOptState::fresh(model, {});
  auto update = scalar_delta(0.5);
  update.head.pool.bias[0] = std::numeric_limits<double>::quiet_NaN();
  const auto before = model;
  try {
    fedadam_step(state, update, model);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("index"), std::string::npos);
  }
  EXPECT_EQ(static_cast<const ParameterSet&>(model), static_cast<const ParameterSet&>(before));
  EXPECT_EQ(state.m, zeros_like(model));
}

TEST(FedAdam, ConfigValidation) {
  EXPECT_THROW((FedAdamConfig{1.0, 0.9, 0.1, 1e-8}.validate()), ConfigError);
  EXPECT_THROW((FedAdamConfig{0.9, 0.9, 0.1, 0.0}.validate()), ConfigError);
  EXPECT_THROW((FedAdamConfig{0.9, 0.9, 0.0, 1e-8}.validate()), ConfigError);
}

// ---------------------------------------------------------------------------
// Heterogeneous aggregation.

TEST(HeterogeneousAggregate, WeightedLayerMeans) {
  const auto topo = make_topology({2, 3, 4});
  std::vector<LayeredModel> models{scalar_model({1, 10}), scalar_model({2, 2, 20}),
                                   scalar_model({3, 3, 3, 30})};
  const std::vector<std::size_t> counts{1, 1, 2};
  heterogeneous_aggregate(models, counts, topo);
  const auto& c = models[2];
  EXPECT_NEAR(c.layers[0].weight[0], 2.25, 1e-15);
  EXPECT_NEAR(c.layers[1].weight[0], 8.0 / 3.0, 1e-15);
  EXPECT_EQ(c.layers[2].weight[0], 3.0);
  EXPECT_EQ(c.layers[3].weight[0], 30.0);
  EXPECT_EQ(models[0].layers[0], c.layers[0]);
  EXPECT_EQ(models[0].layers[1].weight[0], 10.0);
  EXPECT_EQ(models[1].layers[0], c.layers[0]);
  EXPECT_EQ(models[1].layers[1], c.layers[1]);
  EXPECT_EQ(models[1].layers[2].weight[0], 20.0);
}

TEST(HeterogeneousAggregate, IdenticalSharedLayersUnchanged) {
  const auto topo = make_topology({2, 3, 4});
  std::vector<LayeredModel> models{scalar_model({0.1, 7}), scalar_model({0.1, 0.2, 8}),
                                   scalar_model({0.1, 0.2, 0.3, 9})};
  const auto before = models;
  const std::vector<std::size_t> counts{3, 1, 5};
  heterogeneous_aggregate(models, counts, topo);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(static_cast<const ParameterSet&>(models[j]),
              static_cast<const ParameterSet&>(before[j]));
  }
}

TEST(HeterogeneousAggregate, ZeroCountsAreNoOp) {
  const auto topo = make_topology({2, 3});
  std::vector<LayeredModel> models{scalar_model({1, 2}), scalar_model({3, 4, 5})};
  const auto before = models;
  const std::vector<std::size_t> counts{0, 0};
  heterogeneous_aggregate(models, counts, topo);
  EXPECT_EQ(models[0].layers, before[0].layers);
  EXPECT_EQ(models[1].layers, before[1].layers);
}

TEST(HeterogeneousAggregate, AbsentTierDoesNotContribute) {
  const auto topo = make_topology({2, 3});
  std::vector<LayeredModel> models{scalar_model({9, 9}), scalar_model({1, 2, 3})};
  const std::vector<std::size_t> counts{0, 4};
  heterogeneous_aggregate(models, counts, topo);
  EXPECT_EQ(models[1].layers[0].weight[0], 1.0);
  EXPECT_EQ(models[0].layers[0].weight[0], 1.0);
  EXPECT_EQ(models[0].layers[1].weight[0], 9.0);
}

TEST(HeterogeneousAggregate, DepthMismatch) {
  const auto topo = make_topology({2, 3});
  std::vector<LayeredModel> models{scalar_model({1, 2, 3}), scalar_model({3, 4, 5})};
  const std::vector<std::size_t> counts{1, 1};
  EXPECT_THROW(heterogeneous_aggregate(models, counts, topo), TopologyError);
}

// ---------------------------------------------------------------------------
// Rounds.

struct RoundFixture : ::testing::Test {
  void SetUp() override {
    cfg = testing::tiny_config();
    fed = build_federation(cfg);
    tc = training_config(cfg, fed.datasets.front().input_dim());
  }
  ExperimentConfig cfg;
  Federation fed;
  TrainingConfig tc;
};

TEST_F(RoundFixture, ZeroRoundsReportsInitialEvaluationOnly) {
  tc.rounds = 0;
  const auto rep = run_training(fed, tc, InclusiveMode::kFull);
  ASSERT_EQ(rep.rounds.size(), 1u);
  EXPECT_EQ(rep.rounds[0].round, 0u);
  EXPECT_EQ(rep.rounds[0].tiers.size(), 3u);
}

TEST_F(RoundFixture, MomentumTouchesOnlyTopSliceOfSmallerTiers) {
  tc.sample_fraction = 1.0;
  InclusiveTrainer trainer(fed, tc, InclusiveMode::kFull);
  trainer.step(1);
  trainer.step(2);  // bank is non-zero from round 1 on
  const auto& tr = trainer.last_trace();
  for (std::size_t j = 0; j < 3; ++j) {
    const auto& before = *tr.group_means[j];
    const auto& after = *tr.updates[j];
    EXPECT_EQ(before.head, after.head);
    for (std::size_t l = 0; l < before.layers.size(); ++l) {
      const bool top_of_smaller = j < 2 && l + 1 == before.layers.size();
      if (top_of_smaller) {
        EXPECT_NE(before.layers[l], after.layers[l]) << "tier " << j << " layer " << l + 1;
      } else {
        EXPECT_EQ(before.layers[l], after.layers[l]) << "tier " << j << " layer " << l + 1;
      }
    }
  }
}

TEST_F(RoundFixture, BankAfterFirstRound) {
  tc.sample_fraction = 1.0;
  InclusiveTrainer trainer(fed, tc, InclusiveMode::kFull);
  EXPECT_EQ(trainer.bank(), MomentumBank::zeros(trainer.models()));
  trainer.step(1);
  const auto& tr = trainer.last_trace();
  EXPECT_FALSE(trainer.bank().entries[0].has_value());
  // Round 1 reads a zero bank, so the larger tiers' updates are plain means.
  EXPECT_EQ(*trainer.bank().entries[1], compute_layer_momentum(*tr.updates[1], 2, 3));
  EXPECT_EQ(*trainer.bank().entries[2], compute_layer_momentum(*tr.group_means[2], 3, 4));
}

TEST_F(RoundFixture, BetaZeroMatchesNoMomentum) {
  tc.beta = 0.0;
  tc.rounds = 5;
  const auto a = run_training(fed, tc, InclusiveMode::kFull);
  const auto b = run_training(fed, tc, InclusiveMode::kNoMomentum);
  EXPECT_EQ(metrics_csv(a), metrics_csv(b));
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(encode_checkpoint(a.final_models[j]), encode_checkpoint(b.final_models[j]));
  }
}

TEST_F(RoundFixture, WorkerCountDoesNotChangeResults) {
  tc.rounds = 3;
  const auto a = run_training(fed, tc, InclusiveMode::kFull);
  tc.workers = 4;
  const auto b = run_training(fed, tc, InclusiveMode::kFull);
  EXPECT_EQ(metrics_csv(a), metrics_csv(b));
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(encode_checkpoint(a.final_models[j]), encode_checkpoint(b.final_models[j]));
  }
}

TEST_F(RoundFixture, StarSkipsLayerSharing) {
  tc.sample_fraction = 1.0;
  InclusiveTrainer trainer(fed, tc, InclusiveMode::kStar);
  trainer.step(1);
  const auto& models = trainer.models();
  EXPECT_NE(models[0].layers[0], models[2].layers[0]);
  InclusiveTrainer shared(fed, tc, InclusiveMode::kFull);
  shared.step(1);
  EXPECT_EQ(shared.models()[0].layers[0], shared.models()[2].layers[0]);
  EXPECT_EQ(shared.models()[1].layers[1], shared.models()[2].layers[1]);
}

TEST(Rounds, EmptyTierSkipsTheRound) {
  auto cfg = testing::tiny_config();
  cfg.proportions = {0, 1, 1};
  const auto fed = build_federation(cfg);
  const auto tc = training_config(cfg, fed.datasets.front().input_dim());
  InclusiveTrainer trainer(fed, tc, InclusiveMode::kFull);
  const auto top_before = trainer.models()[0].layers.back();
  const auto losses = trainer.step(1);
  EXPECT_TRUE(std::isnan(losses[0]));
  EXPECT_FALSE(trainer.last_trace().group_means[0].has_value());
  EXPECT_EQ(trainer.models()[0].layers.back(), top_before);
  EXPECT_EQ(trainer.optimizer_states()[0].m, zeros_like(trainer.models()[0]));
}

TEST(Rounds, SingleTierMatchesHomogeneousFedAdam) {
  auto cfg = testing::tiny_config();
  cfg.depths = {3};
  cfg.proportions = {1};
  cfg.rounds = 5;
  const auto fed = build_federation(cfg);
  const auto tc = training_config(cfg, fed.datasets.front().input_dim());
  const auto a = run_training(fed, tc, InclusiveMode::kFull);
  InclusiveTrainer probe(fed, tc, InclusiveMode::kFull);
  EXPECT_EQ(probe.bank().entries.size(), 1u);

  // Plain FedAdam on one model, written out here.
  auto model = init_model(tc.model, "a", 3, fed.tier_classes[0], tc.seed);
  auto opt = ServerOptState::fresh(model, tc.server);
  for (std::size_t t = 1; t <= tc.rounds; ++t) {
    const auto plan = sample_round(fed.clients, 1, tc.sample_fraction, tc.seed, t);
    std::vector<ModelDelta> deltas;
    for (auto id : plan.sampled) {
      const auto& c = fed.client(id);
      Rng rng = Rng::derive(tc.seed, {stream::kClient, c.id, t});
      deltas.push_back(local_update(model, fed.dataset_of(c), c.partition.train, tc.local, rng).delta);
    }
    fedadam_step(opt, *homomorphic_average(deltas), model);
  }
  EXPECT_EQ(encode_checkpoint(a.final_models[0]), encode_checkpoint(model));
}

}  // namespace
}  // namespace hetfl
