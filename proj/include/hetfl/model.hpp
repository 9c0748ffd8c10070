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

// Layered model family: a stack of uniform d x d encoder layers (the part
// that can be shared across tiers) topped by a tier-owned task head.
//
//   h0     = x W_in + b_in                     (input projection, linear)
//   h_l    = act(h_{l-1} W_l + b_l)            l = 1..L
//   p      = tanh(h_L W_pool + b_pool)
//   logits = p W_cls + b_cls
//
// Gradients are written out by hand; there is no autodiff tape.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hetfl/error.hpp"
#include "hetfl/rng.hpp"
#include "hetfl/tensor.hpp"
#include "hetfl/topology.hpp"

namespace hetfl {

enum class Activation { kTanh, kRelu, kIdentity };

inline std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kIdentity: return "identity";
  }
  return "?";
}

inline Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  if (name == "identity" || name == "linear") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

struct Dense {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  friend bool operator==(const Dense&, const Dense&) = default;
};

using EncoderLayer = Dense;

struct TaskHead {
  Dense input;       // d_in -> d
  Dense pool;        // d -> d
  Dense classifier;  // d -> c

  friend bool operator==(const TaskHead&, const TaskHead&) = default;
};

// Common parameter structure of models, deltas, gradients and optimizer
// moments. layers[0] is encoder layer 1.
struct ParameterSet {
  std::vector<EncoderLayer> layers;
  TaskHead head;

  std::size_t depth() const noexcept { return layers.size(); }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;
};

// w_after - w_before, or a gradient; same structure as the model.
struct ModelDelta : ParameterSet {};

struct LayeredModel : ParameterSet {
  std::string tier;
  Activation activation = Activation::kTanh;

  std::size_t input_dim() const { return head.input.weight.rows(); }
  std::size_t width() const { return head.input.weight.cols(); }
  std::size_t classes() const { return head.classifier.bias.size(); }
};

// ---------------------------------------------------------------------------
// Structural traversal.

namespace detail {

inline void require_same_structure(const ParameterSet& a, const ParameterSet& b) {
  if (a.layers.size() != b.layers.size()) {
    throw DimensionError("parameter sets differ in depth: " +
                         std::to_string(a.layers.size()) + " vs " +
                         std::to_string(b.layers.size()));
  }
}

template <class F, class... Ps>
void visit_dense(F& f, Ps&... dense) {
  f(dense.weight...);
  f(dense.bias...);
}

}  // namespace detail

// Calls f(t0, t1, ...) on corresponding tensors of every set, encoder
// layers first (bottom to top) then head input, pool, classifier.
template <class F, class P0, class... Ps>
void zip_tensors(F&& f, P0& p0, Ps&... ps) {
  (detail::require_same_structure(p0, ps), ...);
  for (std::size_t l = 0; l < p0.layers.size(); ++l) {
    detail::visit_dense(f, p0.layers[l], ps.layers[l]...);
  }
  detail::visit_dense(f, p0.head.input, ps.head.input...);
  detail::visit_dense(f, p0.head.pool, ps.head.pool...);
  detail::visit_dense(f, p0.head.classifier, ps.head.classifier...);
}

// Calls f(name, tensor) with checkpoint names: "layer.{l}.weight" (l is
// 1-based), "head.input.weight", "head.pool.bias", ...
template <class P, class F>
void for_each_named_tensor(P& p, F&& f) {
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto prefix = "layer." + std::to_string(l + 1) + ".";
    f(prefix + "weight", p.layers[l].weight);
    f(prefix + "bias", p.layers[l].bias);
  }
  f(std::string("head.input.weight"), p.head.input.weight);
  f(std::string("head.input.bias"), p.head.input.bias);
  f(std::string("head.pool.weight"), p.head.pool.weight);
  f(std::string("head.pool.bias"), p.head.pool.bias);
  f(std::string("head.classifier.weight"), p.head.classifier.weight);
  f(std::string("head.classifier.bias"), p.head.classifier.bias);
}

inline std::size_t parameter_count(const ParameterSet& p) {
  std::size_t n = 0;
  zip_tensors([&](const Tensor& t) { n += t.size(); }, p);
  return n;
}

inline Dense zeros_like(const Dense& d) {
  return {Tensor::zeros_like(d.weight), Tensor::zeros_like(d.bias)};
}

inline ModelDelta zeros_like(const ParameterSet& p) {
  ModelDelta out;
  out.layers.reserve(p.layers.size());
  for (const auto& l : p.layers) out.layers.push_back(zeros_like(l));
  out.head = {zeros_like(p.head.input), zeros_like(p.head.pool),
              zeros_like(p.head.classifier)};
  return out;
}

// after - before, tensor by tensor.
inline ModelDelta delta_between(const ParameterSet& after, const ParameterSet& before) {
  ModelDelta out = zeros_like(after);
  zip_tensors([](Tensor& o, const Tensor& a, const Tensor& b) { o = sub(a, b); }, out,
              after, before);
  return out;
}

// target += alpha * src
inline void add_scaled(ParameterSet& target, double alpha, const ParameterSet& src) {
  zip_tensors([alpha](Tensor& t, const Tensor& s) { axpy_inplace(alpha, s, t); }, target,
              src);
}

inline void scale_inplace(ParameterSet& p, double s) {
  zip_tensors([s](Tensor& t) {
    for (auto& v : t.data()) v *= s;
  }, p);
}

// ---------------------------------------------------------------------------
// Construction.

struct ModelSpec {
  std::size_t input_dim = 0;
  std::size_t width = 0;  // d, shared by every encoder layer
  Activation activation = Activation::kTanh;
};

namespace init_stream {
inline constexpr std::uint64_t kRoot = 0x1417;
inline constexpr std::uint64_t kLayer = 1;
inline constexpr std::uint64_t kInput = 2;
inline constexpr std::uint64_t kPool = 3;
inline constexpr std::uint64_t kClassifier = 4;
inline constexpr std::uint64_t kWeight = 0;
inline constexpr std::uint64_t kBias = 1;
}  // namespace init_stream

namespace detail {

// Weights N(0, gain / in), biases N(0, 0.01^2).
inline Dense init_dense(std::size_t in, std::size_t out, std::uint64_t seed,
                        std::uint64_t part, std::uint64_t k1, std::uint64_t k2,
                        double gain = 1.0) {
  using namespace init_stream;
  Rng wr = Rng::derive(seed, {kRoot, part, k1, k2, kWeight});
  Rng br = Rng::derive(seed, {kRoot, part, k1, k2, kBias});
  return {randn({in, out}, std::sqrt(gain / static_cast<double>(in)), wr),
          randn({out}, 0.01, br)};
}

// Variance gain that keeps activations from shrinking with depth.
inline double init_gain(Activation a) { return a == Activation::kRelu ? 2.0 : 1.0; }

}  // namespace detail

// Encoder layer l (1-based) drawn from its own stream, so any depth-L model
// built from `seed` has the same bottom layers as a deeper one.
inline EncoderLayer init_encoder_layer(const ModelSpec& spec, std::size_t l,
                                       std::uint64_t seed) {
  return detail::init_dense(spec.width, spec.width, seed, init_stream::kLayer, l, 0,
                            detail::init_gain(spec.activation));
}

// Input projection stream is common to all tiers (a shared starting
// embedding); pool and classifier streams are keyed by the tier depth, so
// they differ between tiers.
inline TaskHead init_head(const ModelSpec& spec, std::size_t depth, std::size_t classes,
                          std::uint64_t seed) {
  using namespace init_stream;
  return {detail::init_dense(spec.input_dim, spec.width, seed, kInput, 0, 0),
          detail::init_dense(spec.width, spec.width, seed, kPool, depth, 0),
          detail::init_dense(spec.width, classes, seed, kClassifier, depth, classes)};
}

inline LayeredModel init_model(const ModelSpec& spec, std::string tier, std::size_t depth,
                               std::size_t classes, std::uint64_t seed) {
  if (spec.input_dim == 0 || spec.width == 0) {
    throw DimensionError("model input dimension and width must be positive");
  }
  if (classes < 2) throw DimensionError("a model needs at least 2 classes");
  if (depth == 0) throw TopologyError("model depth must be positive");
  LayeredModel m;
  m.tier = std::move(tier);
  m.activation = spec.activation;
  for (std::size_t l = 1; l <= depth; ++l) m.layers.push_back(init_encoder_layer(spec, l, seed));
  m.head = init_head(spec, depth, classes, seed);
  return m;
}

// One sub-global model per tier. The deepest tier's encoder stack is drawn
// fresh and every smaller tier takes a copy of its bottom L_j layers; heads
// are tier-owned.
inline std::vector<LayeredModel> build_tier_models(const TierTopology& topology,
                                                   const ModelSpec& spec,
                                                   std::span<const std::size_t> class_counts,
                                                   std::uint64_t seed) {
  topology.validate();
  if (class_counts.size() != topology.size()) {
    throw ConfigError("need one class count per tier");
  }
  const auto& big = topology.largest();
  LayeredModel largest = init_model(spec, big.id, big.depth,
                                    class_counts[topology.largest_index()], seed);
  std::vector<LayeredModel> out;
  for (std::size_t j = 0; j + 1 < topology.size(); ++j) {
    LayeredModel m;
    m.tier = topology[j].id;
    m.activation = spec.activation;
    m.layers.assign(largest.layers.begin(),
                    largest.layers.begin() + static_cast<std::ptrdiff_t>(topology[j].depth));
    m.head = init_head(spec, topology[j].depth, class_counts[j], seed);
    out.push_back(std::move(m));
  }
  out.push_back(std::move(largest));
  return out;
}

// ---------------------------------------------------------------------------
// Forward / backward.

struct ForwardCache {
  Tensor inputs;                    // x
  std::vector<Tensor> hidden;       // h_0 .. h_L
  std::vector<Tensor> pre;          // z_1 .. z_L
  Tensor pooled;                    // p
};

namespace detail {

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::kTanh: return std::tanh(z);
    case Activation::kRelu: return z > 0.0 ? z : 0.0;
    case Activation::kIdentity: return z;
  }
  return z;
}

// d act / dz, given the pre-activation z and the output h.
inline double activate_grad(Activation a, double z, double h) {
  switch (a) {
    case Activation::kTanh: return 1.0 - h * h;
    case Activation::kRelu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::kIdentity: return 1.0;
  }
  return 1.0;
}

inline Tensor dense_forward(const Dense& d, const Tensor& x) {
  return add_row_vector(matmul(x, d.weight), d.bias);
}

}  // namespace detail

inline Tensor forward(const LayeredModel& model, const Tensor& inputs, ForwardCache* cache) {
  if (inputs.rank() != 2 || inputs.empty()) throw DataError("forward: empty batch");
  if (inputs.cols() != model.input_dim()) {
    throw DimensionError("forward: input has " + std::to_string(inputs.cols()) +
                         " features, model expects " + std::to_string(model.input_dim()));
  }
  Tensor h = detail::dense_forward(model.head.input, inputs);
  if (cache) {
    cache->inputs = inputs;
    cache->hidden.clear();
    cache->pre.clear();
    cache->hidden.push_back(h);
  }
  for (const auto& layer : model.layers) {
    Tensor z = detail::dense_forward(layer, h);
    h = map(z, [a = model.activation](double v) { return detail::activate(a, v); });
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->hidden.push_back(h);
    }
  }
  Tensor p = map(detail::dense_forward(model.head.pool, h), [](double v) { return std::tanh(v); });
  Tensor logits = detail::dense_forward(model.head.classifier, p);
  if (cache) cache->pooled = std::move(p);
  return logits;
}

inline Tensor forward(const LayeredModel& model, const Tensor& inputs) {
  return forward(model, inputs, nullptr);
}

struct LossAndGradient {
  double loss = 0.0;
  ModelDelta gradient;
};

// Mean cross-entropy over the batch and its gradient w.r.t. every parameter.
inline LossAndGradient loss_and_backward(const LayeredModel& model, const ForwardCache& cache,
                                         const Tensor& logits,
                                         std::span<const std::size_t> labels) {
  const std::size_t b = logits.rows(), c = logits.cols();
  if (labels.size() != b) throw DataError("label count does not match batch size");
  const double inv_b = 1.0 / static_cast<double>(b);

  Tensor dlogits = Tensor::zeros({b, c});
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    if (labels[r] >= c) {
      throw DataError("label " + std::to_string(labels[r]) + " out of range for " +
                      std::to_string(c) + " classes");
    }
    double mx = logits.at(r, 0);
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, logits.at(r, k));
    double denom = 0.0;
    for (std::size_t k = 0; k < c; ++k) denom += std::exp(logits.at(r, k) - mx);
    loss += (mx + std::log(denom)) - logits.at(r, labels[r]);
    for (std::size_t k = 0; k < c; ++k) {
      const double prob = std::exp(logits.at(r, k) - mx) / denom;
      dlogits.at(r, k) = (prob - (k == labels[r] ? 1.0 : 0.0)) * inv_b;
    }
  }

  LossAndGradient out;
  out.loss = loss * inv_b;
  auto& g = out.gradient;
  g.layers.resize(model.layers.size());

  g.head.classifier = {matmul_tn(cache.pooled, dlogits), sum_rows(dlogits)};
  Tensor dp = matmul_nt(dlogits, model.head.classifier.weight);
  for (std::size_t i = 0; i < dp.size(); ++i) {
    dp[i] *= 1.0 - cache.pooled[i] * cache.pooled[i];
  }
  g.head.pool = {matmul_tn(cache.hidden.back(), dp), sum_rows(dp)};
  Tensor dh = matmul_nt(dp, model.head.pool.weight);

  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const Tensor& z = cache.pre[l];
    const Tensor& h = cache.hidden[l + 1];
    for (std::size_t i = 0; i < dh.size(); ++i) {
      dh[i] *= detail::activate_grad(model.activation, z[i], h[i]);
    }
    g.layers[l] = {matmul_tn(cache.hidden[l], dh), sum_rows(dh)};
    dh = matmul_nt(dh, model.layers[l].weight);
  }
  g.head.input = {matmul_tn(cache.inputs, dh), sum_rows(dh)};
  return out;
}

// p <- p - lr * grad(p)
inline void sgd_step(ParameterSet& model, const ParameterSet& gradient, double lr) {
  if (lr < 0.0) throw ConfigError("learning rate must be non-negative");
  zip_tensors([lr](Tensor& p, const Tensor& g) {
    detail::require_same_shape(p, g, "sgd_step");
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
  }, model, gradient);
}

}  // namespace hetfl
