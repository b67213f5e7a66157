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

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kktrecon/matrix.hpp"

namespace kktrecon {

/// Height x width x channels of an image sample; channels are interleaved
/// (HWC) in the flat vector. Non-image data uses {1, d, 1}.
struct ImageShape {
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t channels = 1;

  std::size_t size() const { return height * width * channels; }
  static ImageShape flat(std::size_t d) { return {1, d, 1}; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

/// Binary-labelled samples, one per row of `x`. Labels are +1 or -1.
/// `mean` is the vector subtracted during normalization (zeros when none).
struct LabeledDataset {
  Matrix x;
  std::vector<double> y;
  std::vector<double> mean;
  std::string name;
  ImageShape shape;

  std::size_t size() const { return x.rows(); }
  std::size_t dim() const { return x.cols(); }
  bool empty() const { return x.rows() == 0; }

  /// Throws ConfigError when a label is not +/-1 or lengths disagree.
  void validate() const;

  /// Sample i with the normalization mean added back.
  std::vector<double> denormalized(std::size_t i) const;

  /// Stable FNV-1a hash of dimensions, labels and sample bytes.
  std::uint64_t fingerprint() const;
};

/// Raw images in [0, 1] plus their integer class labels.
struct RawImageSet {
  Matrix pixels;
  std::vector<int> labels;
  ImageShape shape;
};

enum class LabelRule { OddEven, VehiclesAnimals, Custom };

/// Points at angle 2*pi*k/n on the unit circle with label (-1)^k.
LabeledDataset make_circle_2d(std::size_t n);

/// Maps class labels to +/-1. OddEven: even -> +1. VehiclesAnimals uses the
/// CIFAR-10 class indices (airplane, automobile, ship, truck -> +1).
/// Custom: labels listed in `positive_classes` -> +1, labels listed in
/// `negative_classes` -> -1, anything else is an error.
std::vector<double> binarize_labels(std::span<const int> labels, LabelRule rule,
                                    std::span<const int> positive_classes = {},
                                    std::span<const int> negative_classes = {});

/// Human-readable mapping recorded in dataset names, e.g. "odd-even(+1=even)".
std::string label_rule_tag(LabelRule rule);
LabelRule parse_label_rule(const std::string& text);

/// Exactly n/2 samples per class drawn without replacement; deterministic in
/// `seed`. Preserves the original relative order of the chosen samples.
LabeledDataset balanced_subsample(const LabeledDataset& dataset, std::size_t n, std::uint64_t seed);

struct NormalizedPair {
  LabeledDataset train;
  LabeledDataset test;
  std::vector<double> mean;
};

/// Subtracts the per-coordinate training mean from both sets.
NormalizedPair normalize_by_train_mean(const LabeledDataset& train, const LabeledDataset& test);

/// Builds a labelled dataset from raw images by binarizing their labels.
LabeledDataset labeled_from_raw(const RawImageSet& raw, LabelRule rule, std::string name);

}  // namespace kktrecon
