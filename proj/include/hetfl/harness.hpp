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

// Experiment configuration, orchestration and result files.

#pragma once

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hetfl/baselines.hpp"
#include "hetfl/checkpoint.hpp"
#include "hetfl/data.hpp"
#include "hetfl/error.hpp"
#include "hetfl/fed.hpp"
#include "hetfl/metrics.hpp"

namespace hetfl {

// ---------------------------------------------------------------------------
// Text helpers.

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  if (out.size() == 1 && out[0].empty()) out.clear();
  return out;
}

// Shortest round-trip decimal form; "nan" for NaN.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ConfigError("'" + key + "' expects a number, got '" + text + "'");
  }
  return v;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + text + "'");
  }
  return v;
}

template <class T, class F>
std::vector<T> parse_list(const std::string& text, F&& parse_one) {
  std::vector<T> out;
  for (const auto& item : split(text, ',')) out.push_back(parse_one(item));
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& xs, F&& fmt, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += sep;
    out += fmt(xs[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration.

enum class Setting { kCrossDevice, kCrossSilo };

struct ExperimentConfig {
  std::string method = "inclusivefl";
  Setting setting = Setting::kCrossDevice;
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds;  // non-empty: one run per seed plus an aggregate
  std::size_t rounds = 200;
  std::size_t clients = 30;
  double sample_fraction = 0.2;
  std::size_t eval_interval = 1;
  std::size_t workers = 1;

  std::vector<std::size_t> depths = {2, 4, 6};
  std::vector<double> proportions = {1, 1, 1};
  std::vector<std::string> tier_ids;
  std::vector<std::string> exclude;

  std::size_t width = 16;
  Activation activation = Activation::kTanh;

  LocalSgdConfig local{5, 32, 0.1};
  double beta = 0.2;
  FedAdamConfig fedadam{0.9, 0.999, 0.01, 1e-8};

  std::string data_file;
  std::uint64_t data_seed = 0;  // 0: follow `seed`
  SyntheticSpec data{3000, 8, 4, 0.6, 0.0, 2, 2.0, 1, 0.0, "synthetic"};
  double eval_fraction = 0.2;

  std::vector<std::size_t> silo_samples = {400, 600, 800};
  std::vector<std::size_t> silo_classes = {4, 4, 4};
  std::size_t silo_rotation = 0;

  std::string output_dir;

  void set(const std::string& key, const std::string& value);
  std::map<std::string, std::string> to_map() const;
  void validate() const;

  TierTopology topology() const { return make_topology(depths, proportions, tier_ids); }
  std::uint64_t effective_data_seed() const { return data_seed == 0 ? seed : data_seed; }
};

namespace detail {

struct ConfigKey {
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

inline std::string fmt_size(std::size_t v) { return std::to_string(v); }
inline std::string fmt_str(const std::string& s) { return s; }

inline std::size_t parse_size(const std::string& key, const std::string& text) {
  return static_cast<std::size_t>(parse_uint(key, text));
}

inline const std::map<std::string, ConfigKey>& config_keys() {
  using C = ExperimentConfig;
  using S = const std::string&;
  static const std::map<std::string, ConfigKey> keys = {
      {"method", {[](C& c, S, S v) { c.method = v; }, [](const C& c) { return c.method; }}},
      {"setting",
       {[](C& c, S k, S v) {
          if (v == "cross-device") c.setting = Setting::kCrossDevice;
          else if (v == "cross-silo") c.setting = Setting::kCrossSilo;
          else throw ConfigError("'" + k + "' must be cross-device or cross-silo");
        },
        [](const C& c) {
          return std::string(c.setting == Setting::kCrossDevice ? "cross-device" : "cross-silo");
        }}},
      {"seed", {[](C& c, S k, S v) { c.seed = parse_uint(k, v); },
                [](const C& c) { return std::to_string(c.seed); }}},
      {"seeds", {[](C& c, S k, S v) {
                   c.seeds = parse_list<std::uint64_t>(v, [&](S x) { return parse_uint(k, x); });
                 },
                 [](const C& c) {
                   return join(c.seeds, [](std::uint64_t s) { return std::to_string(s); });
                 }}},
      {"rounds", {[](C& c, S k, S v) { c.rounds = parse_size(k, v); },
                  [](const C& c) { return fmt_size(c.rounds); }}},
      {"clients", {[](C& c, S k, S v) { c.clients = parse_size(k, v); },
                   [](const C& c) { return fmt_size(c.clients); }}},
      {"sample_fraction", {[](C& c, S k, S v) { c.sample_fraction = parse_double(k, v); },
                           [](const C& c) { return format_double(c.sample_fraction); }}},
      {"eval_interval", {[](C& c, S k, S v) { c.eval_interval = parse_size(k, v); },
                         [](const C& c) { return fmt_size(c.eval_interval); }}},
      {"workers", {[](C& c, S k, S v) { c.workers = parse_size(k, v); },
                   [](const C& c) { return fmt_size(c.workers); }}},
      {"topology.depths",
       {[](C& c, S k, S v) { c.depths = parse_list<std::size_t>(v, [&](S x) { return parse_size(k, x); }); },
        [](const C& c) { return join(c.depths, fmt_size); }}},
      {"topology.proportions",
       {[](C& c, S k, S v) {
          // Accept both "1,2,7" and "1:2:7".
          std::string t = v;
          for (auto& ch : t) if (ch == ':') ch = ',';
          c.proportions = parse_list<double>(t, [&](S x) { return parse_double(k, x); });
        },
        [](const C& c) { return join(c.proportions, format_double); }}},
      {"topology.ids", {[](C& c, S, S v) { c.tier_ids = split(v, ','); },
                        [](const C& c) { return join(c.tier_ids, fmt_str); }}},
      {"topology.exclude", {[](C& c, S, S v) { c.exclude = split(v, ','); },
                            [](const C& c) { return join(c.exclude, fmt_str); }}},
      {"model.width", {[](C& c, S k, S v) { c.width = parse_size(k, v); },
                       [](const C& c) { return fmt_size(c.width); }}},
      {"model.activation",
       {[](C& c, S, S v) { c.activation = parse_activation(v); },
        [](const C& c) { return std::string(activation_name(c.activation)); }}},
      {"local.steps", {[](C& c, S k, S v) { c.local.steps = parse_size(k, v); },
                       [](const C& c) { return fmt_size(c.local.steps); }}},
      {"local.batch_size", {[](C& c, S k, S v) { c.local.batch_size = parse_size(k, v); },
                            [](const C& c) { return fmt_size(c.local.batch_size); }}},
      {"local.lr", {[](C& c, S k, S v) { c.local.lr = parse_double(k, v); },
                    [](const C& c) { return format_double(c.local.lr); }}},
      {"beta", {[](C& c, S k, S v) { c.beta = parse_double(k, v); },
                [](const C& c) { return format_double(c.beta); }}},
      {"fedadam.beta1", {[](C& c, S k, S v) { c.fedadam.beta1 = parse_double(k, v); },
                         [](const C& c) { return format_double(c.fedadam.beta1); }}},
      {"fedadam.beta2", {[](C& c, S k, S v) { c.fedadam.beta2 = parse_double(k, v); },
                         [](const C& c) { return format_double(c.fedadam.beta2); }}},
      {"fedadam.eta", {[](C& c, S k, S v) { c.fedadam.eta = parse_double(k, v); },
                       [](const C& c) { return format_double(c.fedadam.eta); }}},
      {"fedadam.tau", {[](C& c, S k, S v) { c.fedadam.tau = parse_double(k, v); },
                       [](const C& c) { return format_double(c.fedadam.tau); }}},
      {"data.file", {[](C& c, S, S v) { c.data_file = v; },
                     [](const C& c) { return c.data_file; }}},
      {"data.seed", {[](C& c, S k, S v) { c.data_seed = parse_uint(k, v); },
                     [](const C& c) { return std::to_string(c.data_seed); }}},
      {"data.samples", {[](C& c, S k, S v) { c.data.samples = parse_size(k, v); },
                        [](const C& c) { return fmt_size(c.data.samples); }}},
      {"data.input_dim", {[](C& c, S k, S v) { c.data.input_dim = parse_size(k, v); },
                          [](const C& c) { return fmt_size(c.data.input_dim); }}},
      {"data.classes", {[](C& c, S k, S v) { c.data.classes = parse_size(k, v); },
                        [](const C& c) { return fmt_size(c.data.classes); }}},
      {"data.spread", {[](C& c, S k, S v) { c.data.spread = parse_double(k, v); },
                       [](const C& c) { return format_double(c.data.spread); }}},
      {"data.noise", {[](C& c, S k, S v) { c.data.label_noise = parse_double(k, v); },
                      [](const C& c) { return format_double(c.data.label_noise); }}},
      {"data.warp_depth", {[](C& c, S k, S v) { c.data.warp_depth = parse_size(k, v); },
                           [](const C& c) { return fmt_size(c.data.warp_depth); }}},
      {"data.warp_gain", {[](C& c, S k, S v) { c.data.warp_gain = parse_double(k, v); },
                          [](const C& c) { return format_double(c.data.warp_gain); }}},
      {"data.modes", {[](C& c, S k, S v) { c.data.modes = parse_size(k, v); },
                      [](const C& c) { return fmt_size(c.data.modes); }}},
      {"data.swirl", {[](C& c, S k, S v) { c.data.swirl = parse_double(k, v); },
                      [](const C& c) { return format_double(c.data.swirl); }}},
      {"data.eval_fraction", {[](C& c, S k, S v) { c.eval_fraction = parse_double(k, v); },
                              [](const C& c) { return format_double(c.eval_fraction); }}},
      {"silo.samples",
       {[](C& c, S k, S v) { c.silo_samples = parse_list<std::size_t>(v, [&](S x) { return parse_size(k, x); }); },
        [](const C& c) { return join(c.silo_samples, fmt_size); }}},
      {"silo.classes",
       {[](C& c, S k, S v) { c.silo_classes = parse_list<std::size_t>(v, [&](S x) { return parse_size(k, x); }); },
        [](const C& c) { return join(c.silo_classes, fmt_size); }}},
      {"silo.rotation", {[](C& c, S k, S v) { c.silo_rotation = parse_size(k, v); },
                         [](const C& c) { return fmt_size(c.silo_rotation); }}},
      {"output.dir", {[](C& c, S, S v) { c.output_dir = v; },
                      [](const C& c) { return c.output_dir; }}},
  };
  return keys;
}

}  // namespace detail

inline std::vector<std::string> config_key_names() {
  std::vector<std::string> out;
  for (const auto& [k, _] : detail::config_keys()) out.push_back(k);
  return out;
}

inline void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const auto& keys = detail::config_keys();
  auto it = keys.find(key);
  if (it == keys.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, key, trim(value));
}

inline std::map<std::string, std::string> ExperimentConfig::to_map() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, entry] : detail::config_keys()) out[k] = entry.get(*this);
  return out;
}

inline const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names = {
      "inclusivefl", "inclusivefl-no-md", "inclusivefl-star", "alllarge",
      "allsmall",    "exclusivefl",       "local",            "heterofl"};
  return names;
}

inline void ExperimentConfig::validate() const {
  if (std::find(method_names().begin(), method_names().end(), method) == method_names().end()) {
    throw ConfigError("unknown method '" + method + "'");
  }
  const auto topo = topology();
  for (const auto& id : exclude) topo.index_of(id);
  if (exclude.size() >= topo.size()) throw ConfigError("cannot exclude every tier");
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) {
    throw ConfigError("sample_fraction must lie in (0, 1]");
  }
  require_beta(beta);
  fedadam.validate();
  if (local.batch_size == 0) throw ConfigError("local.batch_size must be positive");
  if (local.lr < 0.0) throw ConfigError("local.lr must be non-negative");
  if (width == 0) throw ConfigError("model.width must be positive");
  if (eval_interval == 0) throw ConfigError("eval_interval must be positive");
  if (workers == 0) throw ConfigError("workers must be positive");
  if (setting == Setting::kCrossDevice) {
    if (clients == 0) throw ConfigError("clients must be positive");
    if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
      throw ConfigError("data.eval_fraction must lie in (0, 1)");
    }
  } else {
    if (silo_samples.size() != topo.size() || silo_classes.size() != topo.size()) {
      throw ConfigError("cross-silo needs silo.samples and silo.classes for every tier");
    }
    if (!data_file.empty()) throw ConfigError("data.file is only used in the cross-device setting");
  }
}

inline ExperimentConfig parse_config_text(const std::string& text,
                                          ExperimentConfig base = ExperimentConfig{}) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    base.set(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
  }
  return base;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

inline std::string render_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg.to_map()) out += k + " = " + v + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Federation construction.

namespace data_stream {
inline constexpr std::uint64_t kGenerate = 0xda7a;
inline constexpr std::uint64_t kHoldout = 0x401d;
inline constexpr std::uint64_t kPartition = 0xa27;
inline constexpr std::uint64_t kSilo = 0x5110;
}  // namespace data_stream

// Drops the named tiers and their clients; the remaining clients keep their
// ids (and therefore their random streams).
inline Federation exclude_tiers(Federation fed, const std::vector<std::string>& ids) {
  if (ids.empty()) return fed;
  std::vector<bool> drop(fed.topology.size(), false);
  for (const auto& id : ids) drop[fed.topology.index_of(id)] = true;
  std::vector<std::size_t> remap(fed.topology.size(), 0);
  Federation out;
  out.datasets = std::move(fed.datasets);
  double total = 0.0;
  for (std::size_t j = 0; j < fed.topology.size(); ++j) {
    if (drop[j]) continue;
    remap[j] = out.topology.tiers.size();
    out.topology.tiers.push_back(fed.topology.tiers[j]);
    out.tier_eval.push_back(fed.tier_eval[j]);
    out.tier_classes.push_back(fed.tier_classes[j]);
    total += fed.topology.tiers[j].proportion;
  }
  if (out.topology.tiers.empty()) throw ConfigError("cannot exclude every tier");
  for (auto& t : out.topology.tiers) {
    t.proportion = total > 0.0 ? t.proportion / total : 1.0 / static_cast<double>(out.topology.size());
  }
  for (auto& c : fed.clients) {
    if (drop[c.tier]) continue;
    c.tier = remap[c.tier];
    out.clients.push_back(std::move(c));
  }
  if (out.clients.empty()) throw ConfigError("no clients left after tier exclusion");
  return out;
}

inline Federation build_federation(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto topo = cfg.topology();
  const auto data_seed = cfg.effective_data_seed();
  Federation fed;
  fed.topology = topo;
  if (cfg.setting == Setting::kCrossDevice) {
    Dataset ds;
    if (!cfg.data_file.empty()) {
      ds = read_dataset(cfg.data_file);
    } else {
      Rng gen = Rng::derive(data_seed, {data_stream::kGenerate});
      ds = make_synthetic(cfg.data, gen);
    }
    const std::size_t n = ds.size();
    const auto n_eval = static_cast<std::size_t>(std::floor(cfg.eval_fraction * static_cast<double>(n) + 1e-9));
    if (n_eval == 0 || n_eval >= n) throw DataError("held-out split leaves no train or eval data");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng holdout = Rng::derive(data_seed, {data_stream::kHoldout});
    holdout.shuffle(std::span<std::size_t>(idx));
    Partition eval{0, {}, std::vector<std::size_t>(idx.end() - static_cast<std::ptrdiff_t>(n_eval), idx.end())};
    idx.resize(n - n_eval);
    Rng part_rng = Rng::derive(data_seed, {data_stream::kPartition});
    auto parts = iid_split(std::move(idx), cfg.clients, part_rng, 0);
    const auto tiers = assign_tiers(cfg.clients, topo, cfg.seed);
    for (std::size_t i = 0; i < cfg.clients; ++i) {
      fed.clients.push_back({i, tiers[i], std::move(parts[i])});
    }
    fed.tier_eval.assign(topo.size(), eval);
    fed.tier_classes.assign(topo.size(), ds.classes);
    fed.datasets.push_back(std::move(ds));
  } else {
    for (std::size_t i = 0; i < topo.size(); ++i) {
      SyntheticSpec spec = cfg.data;
      spec.samples = cfg.silo_samples[i];
      spec.classes = cfg.silo_classes[i];
      spec.name = "silo-" + std::to_string(i);
      Rng gen = Rng::derive(data_seed, {data_stream::kSilo, i});
      fed.datasets.push_back(make_synthetic(spec, gen));
    }
    const auto mapping = rotation_mapping(topo.size(), cfg.silo_rotation);
    Rng split_rng = Rng::derive(data_seed, {data_stream::kPartition});
    fed.clients = silo_assign(fed.datasets, topo, mapping, split_rng);
    fed.tier_eval.resize(topo.size());
    fed.tier_classes.resize(topo.size());
    for (const auto& c : fed.clients) {
      fed.tier_eval[c.tier] = c.partition;
      fed.tier_classes[c.tier] = fed.datasets[c.partition.dataset].classes;
    }
  }
  return exclude_tiers(std::move(fed), cfg.exclude);
}

inline TrainingConfig training_config(const ExperimentConfig& cfg, std::size_t input_dim) {
  TrainingConfig t;
  t.model = {input_dim, cfg.width, cfg.activation};
  t.local = cfg.local;
  t.server = cfg.fedadam;
  t.beta = cfg.beta;
  t.sample_fraction = cfg.sample_fraction;
  t.rounds = cfg.rounds;
  t.seed = cfg.seed;
  t.workers = cfg.workers;
  t.eval_interval = cfg.eval_interval;
  return t;
}

inline RunReport train(const ExperimentConfig& cfg, const Federation& fed) {
  const auto tc = training_config(cfg, fed.datasets.front().input_dim());
  const auto& m = cfg.method;
  if (m == "inclusivefl") return run_training(fed, tc, InclusiveMode::kFull);
  if (m == "inclusivefl-no-md") return run_training(fed, tc, InclusiveMode::kNoMomentum);
  if (m == "inclusivefl-star") return run_training(fed, tc, InclusiveMode::kStar);
  if (m == "alllarge") return run_baseline(BaselineKind::kAllLarge, fed, tc);
  if (m == "allsmall") return run_baseline(BaselineKind::kAllSmall, fed, tc);
  if (m == "exclusivefl") return run_baseline(BaselineKind::kExclusive, fed, tc);
  if (m == "local") return run_baseline(BaselineKind::kLocal, fed, tc);
  if (m == "heterofl") return run_baseline(BaselineKind::kHeteroFL, fed, tc);
  throw ConfigError("unknown method '" + m + "'");
}

inline RunReport train(const ExperimentConfig& cfg) { return train(cfg, build_federation(cfg)); }

// ---------------------------------------------------------------------------
// Result files.

inline std::string metrics_csv(const RunReport& report) {
  std::string out = "round,tier,eval_accuracy,eval_macro_f1,train_loss\n";
  for (const auto& rec : report.rounds) {
    for (const auto& m : rec.tiers) {
      out += std::to_string(rec.round) + "," + m.tier + "," + format_double(m.accuracy) + "," +
             format_double(m.macro_f1) + "," + format_double(m.train_loss) + "\n";
    }
  }
  return out;
}

inline std::string curve_csv(const RunReport& report, const std::string& tier) {
  std::string out = "round,eval_accuracy,eval_macro_f1\n";
  for (const auto& rec : report.rounds) {
    if (const auto* m = rec.find(tier)) {
      out += std::to_string(rec.round) + "," + format_double(m->accuracy) + "," +
             format_double(m->macro_f1) + "\n";
    }
  }
  return out;
}

inline std::vector<std::string> report_tiers(const RunReport& report) {
  std::vector<std::string> tiers;
  for (const auto& rec : report.rounds) {
    for (const auto& m : rec.tiers) {
      if (std::find(tiers.begin(), tiers.end(), m.tier) == tiers.end()) tiers.push_back(m.tier);
    }
  }
  return tiers;
}

inline nlohmann::ordered_json tier_summary(const RunReport& report, const std::string& tier) {
  nlohmann::ordered_json j;
  const auto best = track_best(report, tier);
  if (!best) return j;
  j["best_accuracy"] = best->best_accuracy;
  j["best_accuracy_round"] = best->best_accuracy_round;
  const auto r95 = rounds_to_fraction_of_best(report, tier, 0.95);
  j["rounds_to_95pct_best"] = r95 ? nlohmann::ordered_json(*r95) : nlohmann::ordered_json();
  j["best_macro_f1"] = best->best_macro_f1;
  j["best_macro_f1_round"] = best->best_macro_f1_round;
  j["final_accuracy"] = best->final_accuracy;
  j["final_macro_f1"] = best->final_macro_f1;
  return j;
}

inline nlohmann::ordered_json summary_json(const RunReport& report, const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["method"] = report.method;
  j["seed"] = cfg.seed;
  j["rounds"] = cfg.rounds;
  j["large_tier"] = report.large_tier;
  j["large_model"] = tier_summary(report, report.large_tier);
  nlohmann::ordered_json tiers = nlohmann::ordered_json::object();
  for (const auto& t : report_tiers(report)) tiers[t] = tier_summary(report, t);
  j["tiers"] = tiers;
  nlohmann::ordered_json echo = nlohmann::ordered_json::object();
  for (const auto& [k, v] : cfg.to_map()) {
    if (k != "output.dir") echo[k] = v;  // location, not a parameter
  }
  j["config"] = echo;
  return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline std::filesystem::path default_output_dir(const ExperimentConfig& cfg) {
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  const char* root = std::getenv("HETFL_OUTPUT_ROOT");
  std::filesystem::path base = root && *root ? root : "runs";
  return base / (cfg.method + "-seed" + std::to_string(cfg.seed));
}

// Creates the directory and writes the resolved config; fails before any
// training when the location is not writable.
inline void prepare_output(const std::filesystem::path& dir, const ExperimentConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
  write_text(dir / "config.txt", render_config(cfg));
}

inline void write_report(const std::filesystem::path& dir, const RunReport& report,
                         const ExperimentConfig& cfg) {
  write_text(dir / "metrics.csv", metrics_csv(report));
  write_text(dir / "summary.json", summary_json(report, cfg).dump(2) + "\n");
  std::filesystem::create_directories(dir / "curves");
  for (const auto& t : report_tiers(report)) {
    write_text(dir / "curves" / ("curve_" + t + ".csv"), curve_csv(report, t));
  }
  if (report.method != "local") {
    for (const auto& m : report.final_models) {
      save_checkpoint((dir / ("checkpoint_" + m.tier + ".bin")).string(), m);
    }
  }
  nlohmann::ordered_json timing;
  timing["wall_seconds"] = report.wall_seconds;
  write_text(dir / "timing.json", timing.dump(2) + "\n");
}

struct ExperimentResult {
  std::filesystem::path dir;
  std::vector<RunReport> reports;  // one per seed
};

inline nlohmann::ordered_json mean_std(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
  nlohmann::ordered_json j;
  j["mean"] = mean;
  j["std"] = sd;
  j["values"] = xs;
  return j;
}

// One run, or one run per entry of `seeds` in seed_<s>/ subdirectories plus
// aggregate.json (mean and sample standard deviation over seeds).
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult result;
  result.dir = default_output_dir(cfg);
  prepare_output(result.dir, cfg);
  if (cfg.seeds.empty()) {
    result.reports.push_back(train(cfg));
    write_report(result.dir, result.reports.back(), cfg);
    return result;
  }
  std::vector<double> final_acc, best_acc, best_round;
  for (auto s : cfg.seeds) {
    ExperimentConfig one = cfg;
    one.seed = s;
    one.seeds.clear();
    const auto dir = result.dir / ("seed_" + std::to_string(s));
    prepare_output(dir, one);
    result.reports.push_back(train(one));
    const auto& rep = result.reports.back();
    write_report(dir, rep, one);
    const auto best = track_best(rep, rep.large_tier);
    final_acc.push_back(best->final_accuracy);
    best_acc.push_back(best->best_accuracy);
    best_round.push_back(static_cast<double>(best->best_accuracy_round));
  }
  nlohmann::ordered_json agg;
  agg["method"] = cfg.method;
  agg["seeds"] = cfg.seeds;
  agg["large_tier"] = result.reports.front().large_tier;
  agg["final_accuracy"] = mean_std(final_acc);
  agg["best_accuracy"] = mean_std(best_acc);
  agg["best_accuracy_round"] = mean_std(best_round);
  write_text(result.dir / "aggregate.json", agg.dump(2) + "\n");
  return result;
}

// ---------------------------------------------------------------------------
// Sweeps.

inline const std::vector<std::string>& default_sweep_values(const std::string& parameter) {
  static const std::vector<std::string> beta = {"0", "0.2", "0.5", "0.8", "1"};
  static const std::vector<std::string> proportion = {"1:1:1", "1:2:7", "7:2:1"};
  if (parameter == "beta") return beta;
  if (parameter == "proportion") return proportion;
  throw ConfigError("sweep parameter must be beta or proportion");
}

struct SweepCell {
  std::string value;
  RunReport report;
};

// One experiment per value, same seed schedule, each in its own
// subdirectory; comparison.csv is keyed by value and tier.
inline std::vector<SweepCell> sweep(const ExperimentConfig& base, const std::string& parameter,
                                    const std::vector<std::string>& values) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  const std::string key = parameter == "beta"         ? "beta"
                          : parameter == "proportion" ? "topology.proportions"
                                                      : "";
  if (key.empty()) throw ConfigError("sweep parameter must be beta or proportion");
  base.validate();
  const auto root = default_output_dir(base);
  prepare_output(root, base);
  std::vector<SweepCell> cells;
  std::string table = "value,tier,best_accuracy,best_accuracy_round,final_accuracy,final_macro_f1\n";
  for (const auto& v : values) {
    ExperimentConfig cfg = base;
    cfg.set(key, v);
    cfg.seeds.clear();
    std::string tag = v;
    for (auto& ch : tag) if (ch == ':' || ch == ',') ch = '-';
    cfg.output_dir = (root / (parameter + "_" + tag)).string();
    cfg.validate();
    prepare_output(cfg.output_dir, cfg);
    auto report = train(cfg);
    write_report(cfg.output_dir, report, cfg);
    for (const auto& t : report_tiers(report)) {
      const auto b = track_best(report, t);
      table += v + "," + t + "," + format_double(b->best_accuracy) + "," +
               std::to_string(b->best_accuracy_round) + "," + format_double(b->final_accuracy) +
               "," + format_double(b->final_macro_f1) + "\n";
    }
    cells.push_back({v, std::move(report)});
  }
  write_text(root / "comparison.csv", table);
  return cells;
}

}  // namespace hetfl
