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


#include <cmath>
#include <algorithm>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "kktrecon/dataset.hpp"
#include "kktrecon/error.hpp"

using namespace kktrecon;

TEST_CASE("make_circle_2d") {
  const auto four = make_circle_2d(4);
  CHECK(four.x(0, 0) == doctest::Approx(1.0));
  CHECK(four.x(1, 1) == doctest::Approx(1.0));
  CHECK(four.x(2, 0) == doctest::Approx(-1.0));
  CHECK(four.x(3, 1) == doctest::Approx(-1.0));
  CHECK(four.y == std::vector<double>{1, -1, 1, -1});

  const auto twenty = make_circle_2d(20);
  CHECK(twenty.size() == 20);
  int positives = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(std::abs(std::hypot(twenty.x(i, 0), twenty.x(i, 1)) - 1.0) < 1e-12);
    if (i > 0) CHECK(twenty.y[i] == -twenty.y[i - 1]);
    positives += twenty.y[i] > 0;
  }
  CHECK(positives == 10);
  CHECK_NOTHROW(twenty.validate());
  CHECK_THROWS_AS(make_circle_2d(5), ConfigError);
  CHECK_THROWS_AS(make_circle_2d(0), ConfigError);
}

TEST_CASE("binarize_labels") {
  const std::vector<int> digits = {0, 1, 2};
  CHECK(binarize_labels(digits, LabelRule::OddEven) == std::vector<double>{1, -1, 1});
  const std::vector<int> truck = {9, 3};
  CHECK(binarize_labels(truck, LabelRule::VehiclesAnimals) == std::vector<double>{1, -1});
  const std::vector<int> ten = {10};
  CHECK_THROWS_AS(binarize_labels(ten, LabelRule::OddEven), ConfigError);
  const std::vector<int> pos = {3};
  const std::vector<int> neg = {5};
  const std::vector<int> custom = {3, 5};
  CHECK(binarize_labels(custom, LabelRule::Custom, pos, neg) == std::vector<double>{1, -1});
  const std::vector<int> uncovered = {4};
  CHECK_THROWS_AS(binarize_labels(uncovered, LabelRule::Custom, pos, neg), ConfigError);
  CHECK(parse_label_rule("odd-even") == LabelRule::OddEven);
  CHECK_THROWS_AS(parse_label_rule("parity"), ConfigError);
}

namespace {

LabeledDataset counting_dataset(std::size_t n) {
  LabeledDataset ds;
  ds.x = Matrix(n, 1);
  ds.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.x(i, 0) = static_cast<double>(i);
    ds.y[i] = (i % 3 == 0) ? 1.0 : -1.0;
  }
  ds.shape = ImageShape::flat(1);
  return ds;
}

}  // namespace

TEST_CASE("balanced_subsample") {
  const auto ds = counting_dataset(900);
  const auto sub = balanced_subsample(ds, 500, 42);
  CHECK(sub.size() == 500);
  CHECK(std::count(sub.y.begin(), sub.y.end(), 1.0) == 250);
  const auto again = balanced_subsample(ds, 500, 42);
  CHECK(again.x == sub.x);
  const auto other = balanced_subsample(ds, 500, 43);
  CHECK_FALSE(other.x == sub.x);
  for (std::size_t i = 1; i < sub.size(); ++i) CHECK(sub.x(i, 0) > sub.x(i - 1, 0));
  CHECK_THROWS_AS(balanced_subsample(ds, 700, 1), ConfigError);
  CHECK_THROWS_AS(balanced_subsample(ds, 7, 1), ConfigError);
}

TEST_CASE("normalize_by_train_mean") {
  LabeledDataset train;
  train.x = Matrix(2, 2, std::vector<double>{0, 2, 2, 0});
  train.y = {1, -1};
  train.shape = ImageShape::flat(2);
  LabeledDataset test = train;
  test.x = Matrix(1, 2, std::vector<double>{5, 5});
  test.y = {1};
  const auto pair = normalize_by_train_mean(train, test);
  CHECK(pair.mean == std::vector<double>{1, 1});
  CHECK(pair.train.x == Matrix(2, 2, std::vector<double>{-1, 1, 1, -1}));
  CHECK(pair.test.x == Matrix(1, 2, std::vector<double>{4, 4}));
  CHECK(pair.train.denormalized(0) == std::vector<double>{0, 2});

  const auto again = normalize_by_train_mean(pair.train, pair.test);
  CHECK(again.train.x == pair.train.x);
  CHECK(again.mean == std::vector<double>{0, 0});
  CHECK(again.train.mean == std::vector<double>{1, 1});

  LabeledDataset wide = test;
  wide.x = Matrix(1, 3);
  CHECK_THROWS_AS(normalize_by_train_mean(train, wide), DimensionError);
}

TEST_CASE("fingerprint tracks contents") {
  const auto a = make_circle_2d(20);
  auto b = a;
  CHECK(a.fingerprint() == b.fingerprint());
  b.x(3, 0) += 1e-12;
  CHECK(a.fingerprint() != b.fingerprint());
}

TEST_CASE("validate rejects bad labels") {
  auto ds = make_circle_2d(4);
  ds.y[2] = 0.0;
  try {
    ds.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "labels[2]");
  }
}
