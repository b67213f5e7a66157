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

// Minimal raster (PGM/PPM) and SVG writers for reconstruction figures.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kktrecon/dataset.hpp"

namespace kktrecon {

/// Tiles images (each in [0, 1], HWC) row by row into one binary PGM
/// (1 channel) or PPM (3 channels). `upscale` repeats every pixel.
void write_image_grid(const std::filesystem::path& path, const std::vector<std::vector<double>>& images,
                      const ImageShape& shape, std::size_t columns, std::size_t upscale = 1,
                      std::size_t padding = 1);

struct SvgSeries {
  std::string label;
  std::string color;  // any SVG colour
  std::vector<double> xs;
  std::vector<double> ys;
  double radius = 2.0;
  enum class Marker { Dot, Cross } marker = Marker::Dot;
};

/// Values on a regular grid spanning the panel's data range, drawn under the
/// series with a blue-white-red diverging scale centred on zero.
struct SvgHeatmap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major, row 0 at y_max
};

struct SvgPanel {
  std::string title;
  std::string x_label;
  std::string y_label;
  double x_min = -1.0, x_max = 1.0, y_min = -1.0, y_max = 1.0;
  bool auto_range = true;
  std::vector<SvgSeries> series;
  SvgHeatmap heatmap;
};

/// Lays panels out on a grid with `columns` panels per row.
std::string render_svg(std::span<const SvgPanel> panels, std::size_t columns, double panel_size = 320.0);
void write_svg(const std::filesystem::path& path, std::span<const SvgPanel> panels, std::size_t columns,
               double panel_size = 320.0);

}  // namespace kktrecon
