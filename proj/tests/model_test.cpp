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
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "hetfl/checkpoint.hpp"
#include "hetfl/model.hpp"
#include "hetfl/rng.hpp"
#include "hetfl/topology.hpp"
#include "test_support.hpp"

namespace hetfl {
namespace {

LayeredModel small_model(std::size_t depth, Activation act = Activation::kTanh,
                         std::size_t classes = 3, std::uint64_t seed = 1) {
  return init_model({5, 8, act}, "t", depth, classes, seed);
}

Tensor batch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  return randn({rows, cols}, 1.0, rng);
}

TEST(Topology, RejectsNonIncreasingDepths) {
  EXPECT_THROW(make_topology({2, 2, 4}), TopologyError);
  EXPECT_THROW(make_topology({4, 3}), TopologyError);
  EXPECT_THROW(make_topology({1, 3}), TopologyError);
  EXPECT_NO_THROW(make_topology({2, 3, 4}, {1, 2, 7}));
}

TEST(Topology, NormalizesRatios) {
  const auto t = make_topology({2, 4, 6}, {1, 2, 7});
  EXPECT_DOUBLE_EQ(t[0].proportion, 0.1);
  EXPECT_DOUBLE_EQ(t[2].proportion, 0.7);
  EXPECT_EQ(t[1].id, "b");
}

TEST(BuildTierModels, SmallerTiersCopyThePrefix) {
  const auto topo = make_topology({2, 3, 4});
  const std::vector<std::size_t> classes(3, 3);
  const auto models = build_tier_models(topo, {5, 6, Activation::kTanh}, classes, 9);
  ASSERT_EQ(models.size(), 3u);
  EXPECT_EQ(models[0].depth(), 2u);
  EXPECT_EQ(models[1].depth(), 3u);
  EXPECT_EQ(models[2].depth(), 4u);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(models[0].layers[l], models[2].layers[l]);
  for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ(models[1].layers[l], models[2].layers[l]);
}

TEST(BuildTierModels, SingleTier) {
  const auto topo = make_topology({4});
  const std::vector<std::size_t> classes{3};
  const auto models = build_tier_models(topo, {5, 6, Activation::kTanh}, classes, 9);
  ASSERT_EQ(models.size(), 1u);
  EXPECT_EQ(models[0].depth(), 4u);
}

TEST(BuildTierModels, HeadsDifferBetweenTiers) {
  const auto topo = make_topology({2, 3, 4});
  const std::vector<std::size_t> classes(3, 3);
  const auto models = build_tier_models(topo, {5, 6, Activation::kTanh}, classes, 9);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = i + 1; j < 3; ++j) {
      EXPECT_NE(models[i].head.pool, models[j].head.pool);
      EXPECT_NE(models[i].head.classifier, models[j].head.classifier);
    }
}

TEST(Forward, ZeroParametersGiveZeroLogits) {
  auto m = small_model(3);
  scale_inplace(m, 0.0);
  const auto logits = forward(m, batch(4, 5, 2));
  for (double v : logits.data()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, IdentityLayerIsTransparent) {
  const auto shallow = small_model(1, Activation::kIdentity);
  auto deep = small_model(2, Activation::kIdentity);
  deep.layers[0] = shallow.layers[0];
  deep.head = shallow.head;
  auto eye = Tensor::zeros({8, 8});
  for (std::size_t i = 0; i < 8; ++i) eye.at(i, i) = 1.0;
  deep.layers[1] = {eye, Tensor::zeros({8})};
  const auto x = batch(6, 5, 3);
  EXPECT_EQ(forward(shallow, x), forward(deep, x));
}

TEST(Forward, MatchesStraightLineEvaluation) {
  const auto m = small_model(2);
  const auto x = batch(3, 5, 4);
  auto dense = [](const Dense& d, const std::vector<double>& in) {
    std::vector<double> out(d.bias.size());
    for (std::size_t j = 0; j < out.size(); ++j) {
      double s = d.bias[j];
      for (std::size_t i = 0; i < in.size(); ++i) s += in[i] * d.weight.at(i, j);
      out[j] = s;
    }
    return out;
  };
  auto tanh_all = [](std::vector<double> v) {
    for (auto& e : v) e = std::tanh(e);
    return v;
  };
  const auto logits = forward(m, x);
  for (std::size_t r = 0; r < 3; ++r) {
    std::vector<double> h(x.data().begin() + r * 5, x.data().begin() + r * 5 + 5);
    h = dense(m.head.input, h);
    for (const auto& l : m.layers) h = tanh_all(dense(l, h));
    h = tanh_all(dense(m.head.pool, h));
    h = dense(m.head.classifier, h);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(logits.at(r, k), h[k], 1e-12);
  }
}

TEST(Forward, InputErrors) {
  const auto m = small_model(2);
  EXPECT_THROW(forward(m, Tensor{}), DataError);
  EXPECT_THROW(forward(m, batch(2, 4, 1)), DimensionError);
}

TEST(Loss, UniformLogitsGiveLogC) {
  const auto m = small_model(2, Activation::kTanh, 4);
  ForwardCache cache;
  const auto x = batch(5, 5, 5);
  forward(m, x, &cache);
  const auto logits = Tensor::zeros({5, 4});
  const std::vector<std::size_t> y{0, 1, 2, 3, 0};
  EXPECT_NEAR(loss_and_backward(m, cache, logits, y).loss, std::log(4.0), 1e-15);
  EXPECT_NEAR(std::log(4.0), 1.3862944, 1e-7);
}

TEST(Loss, ConfidentCorrectLogitsGiveNearZeroLoss) {
  const auto m = small_model(2, Activation::kTanh, 3);
  ForwardCache cache;
  forward(m, batch(3, 5, 6), &cache);
  auto logits = Tensor::filled({3, 3}, -50.0);
  const std::vector<std::size_t> y{2, 0, 1};
  for (std::size_t r = 0; r < 3; ++r) logits.at(r, y[r]) = 50.0;
  EXPECT_LT(loss_and_backward(m, cache, logits, y).loss, 1e-10);
}

TEST(Loss, LabelOutOfRange) {
  const auto m = small_model(2);
  ForwardCache cache;
  const auto logits = forward(m, batch(2, 5, 7), &cache);
  const std::vector<std::size_t> y{0, 3};
  EXPECT_THROW(loss_and_backward(m, cache, logits, y), DataError);
}

TEST(Backward, MatchesFiniteDifferences) {
  const auto m = init_model({8, 8, Activation::kTanh}, "t", 3, 3, 17);
  const auto x = batch(6, 8, 18);
  const std::vector<std::size_t> y{0, 1, 2, 2, 1, 0};
  const auto r = testing::check_gradient(m, x, y);
  EXPECT_EQ(r.parameters, parameter_count(m));
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Backward, ReluMatchesFiniteDifferences) {
  const auto m = init_model({4, 6, Activation::kRelu}, "t", 2, 3, 21);
  const auto x = batch(5, 4, 22);
  const std::vector<std::size_t> y{0, 1, 2, 1, 0};
  EXPECT_LT(testing::check_gradient(m, x, y).max_rel_error, 1e-4);
}

TEST(Sgd, Examples) {
  auto m = small_model(2);
  const auto before = m;
  auto g = zeros_like(m);
  zip_tensors([](Tensor& t) { for (auto& v : t.data()) v = 3.0; }, g);
  sgd_step(m, g, 0.0);
  EXPECT_EQ(static_cast<const ParameterSet&>(m), static_cast<const ParameterSet&>(before));

  ParameterSet scalar;
  scalar.layers.push_back({Tensor({1, 1}, {1.0}), Tensor({1}, {1.0})});
  scalar.head = {{Tensor({1, 1}, {1.0}), Tensor({1}, {1.0})},
                 {Tensor({1, 1}, {1.0}), Tensor({1}, {1.0})},
                 {Tensor({1, 1}, {1.0}), Tensor({1}, {1.0})}};
  auto grad = scalar;
  scale_inplace(grad, 2.0);
  sgd_step(scalar, grad, 0.1);
  EXPECT_DOUBLE_EQ(scalar.layers[0].weight[0], 0.8);
}

TEST(Sgd, ShapeMismatch) {
  auto m = small_model(2);
  auto g = zeros_like(m);
  g.layers[0].bias = Tensor::zeros({3});
  EXPECT_THROW(sgd_step(m, g, 0.1), DimensionError);
  EXPECT_THROW(sgd_step(m, zeros_like(small_model(3)), 0.1), DimensionError);
}

TEST(Checkpoint, RoundTripIsExact) {
  auto m = small_model(3, Activation::kRelu);
  m.tier = "strong";
  const auto bytes = encode_checkpoint(m);
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back.tier, "strong");
  EXPECT_EQ(back.activation, Activation::kRelu);
  EXPECT_EQ(static_cast<const ParameterSet&>(back), static_cast<const ParameterSet&>(m));
  EXPECT_EQ(encode_checkpoint(back), bytes);

  testing::TempDir dir;
  const auto path = (dir / "m.bin").string();
  save_checkpoint(path, m);
  EXPECT_EQ(encode_checkpoint(load_checkpoint(path)), bytes);
}

TEST(Checkpoint, RejectsCorruptInput) {
  auto bytes = encode_checkpoint(small_model(2));
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes), IoError);
  auto truncated = encode_checkpoint(small_model(2));
  truncated.resize(truncated.size() - 3);
  EXPECT_THROW(decode_checkpoint(truncated), IoError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/m.bin"), IoError);
}

}  // namespace
}  // namespace hetfl
