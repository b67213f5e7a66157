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

#include "kktrecon/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <random>
#include <string>

#include "kktrecon/error.hpp"

namespace kktrecon {

void LabeledDataset::validate() const {
  if (y.size() != x.rows()) {
    throw ConfigError("dataset has " + std::to_string(x.rows()) + " samples but " + std::to_string(y.size()) +
                          " labels",
                      "labels");
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != 1.0 && y[i] != -1.0) {
      throw ConfigError("label must be +1 or -1", "labels[" + std::to_string(i) + "]");
    }
  }
  if (!mean.empty() && mean.size() != x.cols()) throw ConfigError("mean vector length differs from dimension", "mean");
  if (shape.size() != x.cols()) throw ConfigError("image shape does not match sample dimension", "shape");
}

std::vector<double> LabeledDataset::denormalized(std::size_t i) const {
  const auto row = x.row(i);
  std::vector<double> out(row.begin(), row.end());
  if (!mean.empty()) {
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += mean[j];
  }
  return out;
}

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

void fnv_mix(std::uint64_t& h, const void* data, std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

}  // namespace

std::uint64_t LabeledDataset::fingerprint() const {
  std::uint64_t h = kFnvOffset;
  const std::uint64_t dims[2] = {x.rows(), x.cols()};
  fnv_mix(h, dims, sizeof(dims));
  fnv_mix(h, y.data(), y.size() * sizeof(double));
  fnv_mix(h, x.data(), x.size() * sizeof(double));
  return h;
}

LabeledDataset make_circle_2d(std::size_t n) {
  if (n < 2 || n % 2 != 0) throw ConfigError("circle dataset needs an even n >= 2", "n");
  LabeledDataset ds;
  ds.x = Matrix(n, 2);
  ds.y.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    ds.x(k, 0) = std::cos(angle);
    ds.x(k, 1) = std::sin(angle);
    ds.y[k] = (k % 2 == 0) ? 1.0 : -1.0;
  }
  ds.mean.assign(2, 0.0);
  ds.name = "circle2d(n=" + std::to_string(n) + ")";
  ds.shape = ImageShape::flat(2);
  return ds;
}

std::vector<double> binarize_labels(std::span<const int> labels, LabelRule rule, std::span<const int> positive_classes,
                                    std::span<const int> negative_classes) {
  auto contains = [](std::span<const int> set, int v) { return std::find(set.begin(), set.end(), v) != set.end(); };
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    switch (rule) {
      case LabelRule::OddEven:
        if (c < 0 || c > 9) throw ConfigError("digit label " + std::to_string(c) + " outside 0..9", "labels");
        out[i] = (c % 2 == 0) ? 1.0 : -1.0;
        break;
      case LabelRule::VehiclesAnimals: {
        if (c < 0 || c > 9) throw ConfigError("CIFAR-10 label " + std::to_string(c) + " outside 0..9", "labels");
        static constexpr int kVehicles[] = {0, 1, 8, 9};
        out[i] = contains(kVehicles, c) ? 1.0 : -1.0;
        break;
      }
      case LabelRule::Custom:
        if (contains(positive_classes, c)) {
          out[i] = 1.0;
        } else if (contains(negative_classes, c)) {
          out[i] = -1.0;
        } else {
          throw ConfigError("label " + std::to_string(c) + " is not covered by the partition", "labels");
        }
        break;
    }
  }
  return out;
}

std::string label_rule_tag(LabelRule rule) {
  switch (rule) {
    case LabelRule::OddEven:
      return "odd-even(+1=even)";
    case LabelRule::VehiclesAnimals:
      return "vehicles-animals(+1=vehicle)";
    case LabelRule::Custom:
      return "custom";
  }
  return "custom";
}

LabelRule parse_label_rule(const std::string& text) {
  if (text == "odd-even") return LabelRule::OddEven;
  if (text == "vehicles-animals") return LabelRule::VehiclesAnimals;
  if (text == "custom") return LabelRule::Custom;
  throw ConfigError("unknown label rule '" + text + "'", "rule");
}

namespace {

LabeledDataset select_rows(const LabeledDataset& ds, const std::vector<std::size_t>& rows) {
  LabeledDataset out;
  out.x = Matrix(rows.size(), ds.dim());
  out.y.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = ds.x.row(rows[i]);
    std::copy(src.begin(), src.end(), out.x.row(i).begin());
    out.y[i] = ds.y[rows[i]];
  }
  out.mean = ds.mean;
  out.name = ds.name;
  out.shape = ds.shape;
  return out;
}

}  // namespace

LabeledDataset balanced_subsample(const LabeledDataset& dataset, std::size_t n, std::uint64_t seed) {
  if (n == 0 || n % 2 != 0) throw ConfigError("subsample size must be even and positive", "n");
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t i = 0; i < dataset.size(); ++i) (dataset.y[i] > 0 ? pos : neg).push_back(i);
  const std::size_t half = n / 2;
  if (pos.size() < half || neg.size() < half) {
    throw ConfigError("need " + std::to_string(half) + " samples per class, have " + std::to_string(pos.size()) +
                          "/" + std::to_string(neg.size()),
                      "n");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  std::vector<std::size_t> rows(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(half));
  rows.insert(rows.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(half));
  std::sort(rows.begin(), rows.end());
  return select_rows(dataset, rows);
}

NormalizedPair normalize_by_train_mean(const LabeledDataset& train, const LabeledDataset& test) {
  if (train.empty()) throw ConfigError("training set is empty", "train");
  if (!test.empty() && test.dim() != train.dim()) {
    throw DimensionError("train has dimension " + std::to_string(train.dim()) + ", test has " +
                         std::to_string(test.dim()));
  }
  const std::size_t d = train.dim();
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto row = train.x.row(i);
    for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
  }
  for (double& v : mean) v /= static_cast<double>(train.size());

  auto shift = [&](const LabeledDataset& src) {
    LabeledDataset out = src;
    for (std::size_t i = 0; i < out.size(); ++i) {
      auto row = out.x.row(i);
      for (std::size_t j = 0; j < d; ++j) row[j] -= mean[j];
    }
    out.mean = src.mean.empty() ? std::vector<double>(d, 0.0) : src.mean;
    for (std::size_t j = 0; j < d; ++j) out.mean[j] += mean[j];
    return out;
  };
  NormalizedPair pair{shift(train), test.empty() ? test : shift(test), mean};
  return pair;
}

LabeledDataset labeled_from_raw(const RawImageSet& raw, LabelRule rule, std::string name) {
  if (raw.labels.size() != raw.pixels.rows()) throw DimensionError("image and label counts differ");
  LabeledDataset ds;
  ds.x = raw.pixels;
  ds.y = binarize_labels(raw.labels, rule);
  ds.mean.assign(raw.pixels.cols(), 0.0);
  ds.name = std::move(name) + " " + label_rule_tag(rule);
  ds.shape = raw.shape;
  return ds;
}

}  // namespace kktrecon
