// Copyright 2026 The kktrecon Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// kktrecon: train homogeneous MLPs and reconstruct their training data.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "kktrecon/error.hpp"
#include "kktrecon/experiment.hpp"
#include "kktrecon/kernels.hpp"

namespace fs = std::filesystem;
using namespace kktrecon;

namespace {

struct CommonFlags {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string out;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  auto* config = cmd->add_option("--config", f.config, "experiment JSON file");
  auto* preset = cmd->add_option("--preset", f.preset, "built-in experiment")
                     ->check(CLI::IsMember(preset_names()));
  config->excludes(preset);
  cmd->add_option("--seed", f.seed, "master seed (subsample, initialization, sweep)");
  cmd->add_option("--workers", f.workers, "parallel reconstruction runs")->check(CLI::PositiveNumber);
  cmd->add_option("--out", f.out, "run directory (default runs/<name>)");
  cmd->add_flag("-q,--quiet", f.quiet, "only print step summaries");
}

// --config, then --preset, then the configuration stored in the run directory.
ExperimentConfig resolve_config(const CommonFlags& f, const std::string& fallback_preset) {
  ExperimentConfig c;
  if (!f.config.empty()) {
    c = load_experiment_config(f.config);
  } else if (!f.preset.empty()) {
    c = make_preset(f.preset);
  } else if (!f.out.empty() && fs::exists(RunPaths{f.out}.run())) {
    const auto run = read_json_file(RunPaths{f.out}.run());
    if (!run.contains("config")) throw ConfigError("run.json has no configuration", "config");
    c = ExperimentConfig::from_json(run.at("config"));
    c.base_dir = fs::absolute(f.out);
  } else if (!fallback_preset.empty()) {
    c = make_preset(fallback_preset);
  } else {
    throw ConfigError("give --config, --preset, or an --out directory that holds run.json", "config");
  }
  if (f.seed) c.seed = *f.seed;
  if (f.workers) c.workers = *f.workers;
  c.validate();
  return c;
}

RunPaths resolve_paths(const CommonFlags& f, const ExperimentConfig& c) {
  return RunPaths{f.out.empty() ? fs::path("runs") / c.name : fs::path(f.out)};
}

void print_summary(const std::string& step, const nlohmann::json& summary) {
  std::cout << step << ": " << summary.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reconstruct training data from trained homogeneous ReLU networks"};
  app.require_subcommand(1);
  CommonFlags flags;

  struct Command {
    const char* name;
    const char* help;
    const char* fallback;
  };
  const Command commands[] = {
      {"train", "train a model and write checkpoint.json", ""},
      {"reconstruct", "run the reconstruction sweep and write pool.json", ""},
      {"analyze", "match candidates to training samples, KKT diagnostic, figures", ""},
      {"invert", "model-inversion baseline", ""},
      {"weights", "export first-layer weights", ""},
      {"demo2d", "full 2D circle pipeline (train, reconstruct, analyze, invert, weights)", "circle2d"},
  };
  std::string chosen;
  std::string fallback;
  for (const auto& cmd : commands) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    add_common(sub, flags);
    sub->callback([&chosen, &fallback, cmd] {
      chosen = cmd.name;
      fallback = cmd.fallback;
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const ExperimentConfig config = resolve_config(flags, fallback);
    const RunPaths paths = resolve_paths(flags, config);
    const StepLog log = [&](const std::string& msg) {
      if (!flags.quiet) std::cerr << "[" << chosen << "] " << msg << "\n";
    };
    if (!flags.quiet) {
      std::cerr << "kernel backend: " << kernels::backend_name(kernels::active_backend()) << ", run directory: " << paths.root.string()
                << "\n";
    }
    if (chosen == "train") {
      print_summary("train", step_train(config, paths, log));
    } else if (chosen == "reconstruct") {
      print_summary("reconstruct", step_reconstruct(config, paths, log));
    } else if (chosen == "analyze") {
      print_summary("analyze", step_analyze(config, paths, log));
    } else if (chosen == "invert") {
      print_summary("invert", step_invert(config, paths, log));
    } else if (chosen == "weights") {
      print_summary("weights", step_weights(config, paths, log));
    } else if (chosen == "demo2d") {
      if (config.model.input_dim() != 2) throw ConfigError("demo2d needs a 2-dimensional model", "model.widths[0]");
      print_summary("train", step_train(config, paths, log));
      print_summary("reconstruct", step_reconstruct(config, paths, log));
      print_summary("analyze", step_analyze(config, paths, log));
      print_summary("invert", step_invert(config, paths, log));
      print_summary("weights", step_weights(config, paths, log));
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error at byte " << e.offset() << ": " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const UnsupportedModeError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error (last finite step " << e.last_finite_step() << "): " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
