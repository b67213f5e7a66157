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

#include "kktrecon/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kktrecon/error.hpp"
#include "kktrecon/kernels.hpp"

namespace kktrecon {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("matrix data has " + std::to_string(data_.size()) + " values, expected " +
                         std::to_string(rows_ * cols_));
  }
}

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

double norm2(std::span<const double> x) { return std::sqrt(kernels::dot(x, x)); }

}  // namespace kktrecon
