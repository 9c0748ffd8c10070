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

// hetfl: run, sweep, gen-data, eval.
//
// Every config key is also a flag (`--rounds 50`, `--topology.depths 2,4,6`);
// `--config FILE` loads key = value lines first and `--set key=value` may be
// repeated. Failures print one line to stderr:
//
//   error kind=<kind> message="<text>"
//
// and exit with 2 (config), 3 (data/dimension/topology), 4 (io) or 1.

#include <cstdio>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hetfl/harness.hpp"

namespace {

struct ConfigFlags {
  std::string config_file;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> values;  // key, value (empty = unset)

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "key = value config file")->check(CLI::ExistingFile);
    app.add_option("--set", sets, "override, key=value (repeatable)");
    const auto keys = hetfl::config_key_names();
    values.reserve(keys.size());
    for (const auto& k : keys) {
      values.emplace_back(k, std::string());
      app.add_option("--" + k, values.back().second, "config key " + k);
    }
  }

  hetfl::ExperimentConfig resolve() const {
    hetfl::ExperimentConfig cfg = config_file.empty() ? hetfl::ExperimentConfig{}
                                                      : hetfl::load_config(config_file);
    for (const auto& [k, v] : values) {
      if (!v.empty()) cfg.set(k, v);
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw hetfl::ConfigError("--set expects key=value, got '" + s + "'");
      cfg.set(hetfl::trim(s.substr(0, eq)), s.substr(eq + 1));
    }
    return cfg;
  }
};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out;
}

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << "error kind=" << kind << " message=\"" << escape(message) << "\"\n";
  return code;
}

int exit_code(const std::string& kind) {
  if (kind == "config") return 2;
  if (kind == "data" || kind == "dimension" || kind == "topology") return 3;
  if (kind == "io") return 4;
  return 1;
}

void print_run(const hetfl::ExperimentResult& res) {
  for (const auto& rep : res.reports) {
    const auto best = hetfl::track_best(rep, rep.large_tier);
    std::printf("%s large=%s best_accuracy=%.4f round=%zu final_accuracy=%.4f final_macro_f1=%.4f wall=%.2fs\n",
                rep.method.c_str(), rep.large_tier.c_str(), best->best_accuracy,
                best->best_accuracy_round, best->final_accuracy, best->final_macro_f1,
                rep.wall_seconds);
  }
  std::printf("output %s\n", res.dir.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"heterogeneous-depth federated learning simulator"};
  app.require_subcommand(1);

  ConfigFlags run_flags;
  auto* run = app.add_subcommand("run", "train one method (one or more seeds)");
  run_flags.attach(*run);

  ConfigFlags sweep_flags;
  std::string sweep_param;
  std::vector<std::string> sweep_values;
  auto* sw = app.add_subcommand("sweep", "repeat a run over beta or tier proportions");
  sweep_flags.attach(*sw);
  sw->add_option("--param", sweep_param, "beta or proportion")->required();
  sw->add_option("--values", sweep_values, "values, e.g. 0,0.5,1 or 1:2:7")->delimiter(';');

  ConfigFlags gen_flags;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset file");
  gen_flags.attach(*gen);
  gen->add_option("--out", gen_out, "output path")->required();

  std::string eval_ckpt, eval_data;
  auto* ev = app.add_subcommand("eval", "score a checkpoint on a dataset file");
  ev->add_option("--checkpoint", eval_ckpt)->required();
  ev->add_option("--data", eval_data)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage", e.what(), 2);
  }

  try {
    if (*run) {
      print_run(hetfl::run_experiment(run_flags.resolve()));
    } else if (*sw) {
      const auto cfg = sweep_flags.resolve();
      std::vector<std::string> values = sweep_values;
      if (sw->count("--values") == 0) values = hetfl::default_sweep_values(sweep_param);
      const auto cells = hetfl::sweep(cfg, sweep_param, values);
      for (const auto& c : cells) {
        const auto best = hetfl::track_best(c.report, c.report.large_tier);
        std::printf("%s=%s best_accuracy=%.4f final_accuracy=%.4f\n", sweep_param.c_str(),
                    c.value.c_str(), best->best_accuracy, best->final_accuracy);
      }
      std::printf("output %s\n", hetfl::default_output_dir(cfg).string().c_str());
    } else if (*gen) {
      const auto cfg = gen_flags.resolve();
      hetfl::Rng rng = hetfl::Rng::derive(cfg.effective_data_seed(), {hetfl::data_stream::kGenerate});
      const auto ds = hetfl::make_synthetic(cfg.data, rng);
      hetfl::write_dataset(gen_out, ds);
      std::printf("wrote %zu samples (%zu features, %zu classes) to %s\n", ds.size(),
                  ds.input_dim(), ds.classes, gen_out.c_str());
    } else if (*ev) {
      const auto model = hetfl::load_checkpoint(eval_ckpt);
      const auto ds = hetfl::read_dataset(eval_data);
      const auto r = hetfl::evaluate(model, ds);
      nlohmann::ordered_json j;
      j["tier"] = model.tier;
      j["samples"] = ds.size();
      j["accuracy"] = r.accuracy;
      j["macro_f1"] = r.macro_f1;
      std::cout << j.dump() << "\n";
    }
  } catch (const hetfl::Error& e) {
    return fail(e.kind(), e.what(), exit_code(e.kind()));
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
