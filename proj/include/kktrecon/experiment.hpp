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


#pragma once

// Experiment configuration and the end-to-end pipeline steps shared by the
// command-line tool and the acceptance checks. Every step reads and writes
// a run directory:
//
//   run.json          configuration plus one summary per completed step
//   dataset.json      dataset manifest (+ .mean.f32)
//   checkpoint.json   trained model (+ .f32), train_log.csv
//   pool.json         reconstruction candidates (+ .f32, .lambda.f32, .csv)
//   analysis/         reports, KKT diagnostic, figures

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kktrecon/io.hpp"
#include "kktrecon/mlp.hpp"
#include "kktrecon/recon.hpp"
#include "kktrecon/trainer.hpp"

namespace kktrecon {

struct ReconSettings {
  enum class Mode { Sweep, Fixed };
  Mode mode = Mode::Sweep;
  /// Candidates per run; 0 means 2n.
  std::size_t m = 0;
  std::size_t runs = 100;
  /// Fixed-mode hyperparameters, and iterations/momentum/weights for sweeps.
  ReconHyper hyper;
  SweepRanges ranges;
};

struct InversionSettings {
  std::size_t starts = 40;
  double sigma = 0.1;
  double learning_rate = 1e-3;
  std::size_t iterations = 1000;
};

struct AnalysisSettings {
  double vote_ratio = 0.9;
  double lambda_threshold = 5.0;
  double dedup_radius = 0.03;
  double match_radius = 0.1;
  double good_ssim = 0.4;
  std::size_t top_k = 40;
  bool kkt = true;
  InversionSettings inversion;
};

struct ExperimentConfig {
  std::string name = "experiment";
  /// Drives the subsample, the initialization and the reconstruction sweep.
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  DatasetManifest dataset;
  ModelSpec model;
  TrainConfig training;
  ReconSettings reconstruction;
  AnalysisSettings analysis;
  /// Relative dataset paths resolve against this directory. Not serialized.
  std::filesystem::path base_dir;

  /// Unknown keys and wrongly typed values raise ConfigError with the
  /// dotted field path, e.g. "training.learning_rate".
  static ExperimentConfig from_json(const nlohmann::json& value);
  nlohmann::json to_json() const;
  void validate() const;
};

std::vector<std::string> preset_names();
/// Throws ConfigError for an unknown name.
ExperimentConfig make_preset(const std::string& name);
/// Reads a JSON config; relative dataset paths resolve against its folder.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Root for bundled data: $KKTRECON_DATA_DIR, else the source tree.
std::filesystem::path default_data_root();

struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path run() const { return root / "run.json"; }
  std::filesystem::path dataset() const { return root / "dataset.json"; }
  std::filesystem::path checkpoint() const { return root / "checkpoint.json"; }
  std::filesystem::path train_log() const { return root / "train_log.csv"; }
  std::filesystem::path pool() const { return root / "pool.json"; }
  std::filesystem::path analysis() const { return root / "analysis"; }
};

/// Loaded training context of a run directory. Throws ConfigError when the
/// checkpoint was trained on a different dataset than the manifest yields.
struct TrainedRun {
  ExperimentConfig config;
  NormalizedPair data;
  Checkpoint checkpoint;
};
TrainedRun load_trained_run(const ExperimentConfig& config, const RunPaths& paths);

using StepLog = std::function<void(const std::string&)>;

/// Each step returns its summary, which is also merged into run.json.
nlohmann::json step_train(const ExperimentConfig& config, const RunPaths& paths, const StepLog& log = {});
nlohmann::json step_reconstruct(const ExperimentConfig& config, const RunPaths& paths, const StepLog& log = {});
nlohmann::json step_analyze(const ExperimentConfig& config, const RunPaths& paths, const StepLog& log = {});
nlohmann::json step_invert(const ExperimentConfig& config, const RunPaths& paths, const StepLog& log = {});
nlohmann::json step_weights(const ExperimentConfig& config, const RunPaths& paths, const StepLog& log = {});

/// Distinct training points with an inversion result within `radius`,
/// over `settings.starts` starts alternating the output sign.
struct InversionSweep {
  Matrix points;
  std::vector<int> signs;
  std::vector<double> final_outputs;
  std::size_t recovered = 0;
};
InversionSweep run_inversion_sweep(const ModelSpec& spec, const ParamVector& theta, const LabeledDataset& train,
                                   const InversionSettings& settings, double radius, std::uint64_t seed);

}  // namespace kktrecon
