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

// File formats: IDX image/label containers, flat float-32 matrices with a
// JSON manifest, model checkpoints, and dataset manifests.
//
// Every binary payload we write is little-endian float-32 next to a JSON
// manifest. Reads are strict: a payload whose length disagrees with its
// manifest is rejected.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "kktrecon/dataset.hpp"
#include "kktrecon/mlp.hpp"

namespace kktrecon {

inline constexpr int kFormatVersion = 1;

// ---- raw float-32 payloads ------------------------------------------------

void write_f32_blob(const std::filesystem::path& path, std::span<const double> values);

/// Reads exactly `expected_count` values; throws ParseError on any length
/// mismatch (the offset is the file size).
std::vector<double> read_f32_blob(const std::filesystem::path& path, std::size_t expected_count);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& value);

// ---- IDX ------------------------------------------------------------------

/// Big-endian IDX containers (magic 0x00000803 for uint8 images, 0x00000801
/// for uint8 labels). Pixels are scaled to [0, 1].
RawImageSet load_idx_images(const std::filesystem::path& image_path, const std::filesystem::path& label_path);

/// Parses in-memory IDX bytes; used by load_idx_images and by tests.
RawImageSet parse_idx(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes);

void write_idx(const std::filesystem::path& image_path, const std::filesystem::path& label_path,
               const RawImageSet& images);

// ---- flat float-32 matrix -------------------------------------------------

/// Manifest: {"format": "f32-matrix", "rows", "height", "width", "channels",
/// "data": <blob path relative to the manifest>, "labels": [int, ...]}.
/// Values must already lie in [0, 1].
RawImageSet load_flat_images(const std::filesystem::path& manifest_path);
void save_flat_images(const std::filesystem::path& manifest_path, const RawImageSet& images);

// ---- checkpoints ----------------------------------------------------------

struct Checkpoint {
  ModelSpec spec;
  ParamVector theta;
  std::uint64_t seed = 0;
  nlohmann::json optimizer = nlohmann::json::object();
  std::size_t epochs = 0;
  double final_loss = 0.0;
  std::uint64_t dataset_fingerprint = 0;
  std::string dataset_name;
};

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& value);

/// Writes `<path>` (manifest) and `<path>.f32` (parameters).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- dataset manifests ----------------------------------------------------

/// Everything needed to rebuild a training/test pair deterministically.
struct DatasetManifest {
  enum class Source { Circle2d, Idx, FlatF32 };
  Source source = Source::Circle2d;
  std::filesystem::path images;  // IDX image file or flat manifest
  std::filesystem::path labels;  // IDX label file (Idx only)
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
  LabelRule rule = LabelRule::OddEven;
  std::vector<int> positive_classes;
  std::vector<int> negative_classes;
  std::size_t n = 20;
  std::size_t n_test = 0;
  std::uint64_t seed = 0;
  std::filesystem::path mean_path;  // written by save_dataset_manifest
  std::uint64_t fingerprint = 0;
  std::string name;
};

std::string source_tag(DatasetManifest::Source source);
DatasetManifest::Source parse_source(const std::string& text);

/// Writes the manifest and, when `mean` is non-empty, the mean vector as a
/// sibling `.mean.f32` blob.
void save_dataset_manifest(const std::filesystem::path& path, DatasetManifest manifest,
                           std::span<const double> mean);
DatasetManifest load_dataset_manifest(const std::filesystem::path& path);

/// Loads the sources, binarizes, draws the balanced subsamples and
/// mean-normalizes. Relative paths resolve against `base_dir`.
NormalizedPair materialize_dataset(const DatasetManifest& manifest, const std::filesystem::path& base_dir = {});

}  // namespace kktrecon
