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


#include "kktrecon/figures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "kktrecon/error.hpp"

namespace kktrecon {

void write_image_grid(const std::filesystem::path& path, const std::vector<std::vector<double>>& images,
                      const ImageShape& shape, std::size_t columns, std::size_t upscale, std::size_t padding) {
  if (shape.channels != 1 && shape.channels != 3) throw ConfigError("image grid needs 1 or 3 channels", "channels");
  if (columns == 0 || upscale == 0) throw ConfigError("columns and upscale must be positive", "columns");
  for (const auto& img : images) {
    if (img.size() != shape.size()) throw DimensionError("image size does not match shape");
  }
  const std::size_t n = images.size();
  const std::size_t cols = std::max<std::size_t>(1, std::min(columns, n));
  const std::size_t rows = n == 0 ? 1 : (n + cols - 1) / cols;
  const std::size_t cell_h = shape.height * upscale + padding;
  const std::size_t cell_w = shape.width * upscale + padding;
  const std::size_t height = rows * cell_h + padding;
  const std::size_t width = cols * cell_w + padding;
  const std::size_t ch = shape.channels;
  std::vector<unsigned char> pixels(height * width * ch, 255);

  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t top = (k / cols) * cell_h + padding;
    const std::size_t left = (k % cols) * cell_w + padding;
    for (std::size_t r = 0; r < shape.height * upscale; ++r) {
      for (std::size_t c = 0; c < shape.width * upscale; ++c) {
        const std::size_t src = ((r / upscale) * shape.width + c / upscale) * ch;
        const std::size_t dst = ((top + r) * width + left + c) * ch;
        for (std::size_t q = 0; q < ch; ++q) {
          const double v = std::clamp(images[k][src + q], 0.0, 1.0);
          pixels[dst + q] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
      }
    }
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing", "path");
  out << (ch == 1 ? "P5" : "P6") << "\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw ConfigError("failed writing " + path.string(), "path");
}

namespace {

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

std::string diverging(double v, double scale) {
  const double t = scale > 0 ? std::clamp(v / scale, -1.0, 1.0) : 0.0;
  int r = 255, g = 255, b = 255;
  if (t >= 0) {
    g = b = static_cast<int>(std::lround(255.0 * (1.0 - t)));
  } else {
    r = g = static_cast<int>(std::lround(255.0 * (1.0 + t)));
  }
  char buf[16];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

void resolve_range(SvgPanel& p) {
  if (!p.auto_range) return;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : p.series) {
    for (double x : s.xs) x0 = std::min(x0, x), x1 = std::max(x1, x);
    for (double y : s.ys) y0 = std::min(y0, y), y1 = std::max(y1, y);
  }
  if (!std::isfinite(x0)) return;
  auto pad = [](double& lo, double& hi) {
    const double span = hi - lo;
    const double m = span > 0 ? 0.05 * span : 0.5;
    lo -= m;
    hi += m;
  };
  pad(x0, x1);
  pad(y0, y1);
  p.x_min = x0, p.x_max = x1, p.y_min = y0, p.y_max = y1;
}

}  // namespace

std::string render_svg(std::span<const SvgPanel> panels_in, std::size_t columns, double size) {
  if (columns == 0) throw ConfigError("columns must be positive", "columns");
  std::vector<SvgPanel> panels(panels_in.begin(), panels_in.end());
  const std::size_t n = std::max<std::size_t>(1, panels.size());
  const std::size_t cols = std::min(columns, n);
  const std::size_t rows = (n + cols - 1) / cols;
  const double margin = 48.0;
  const double cell = size + margin * 1.5;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(cols * cell) << "\" height=\""
      << fmt(rows * cell) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (std::size_t k = 0; k < panels.size(); ++k) {
    SvgPanel& p = panels[k];
    resolve_range(p);
    const double ox = (k % cols) * cell + margin;
    const double oy = (k / cols) * cell + margin * 0.6;
    const double xs = p.x_max > p.x_min ? size / (p.x_max - p.x_min) : 1.0;
    const double ys = p.y_max > p.y_min ? size / (p.y_max - p.y_min) : 1.0;
    auto px = [&](double x) { return ox + (x - p.x_min) * xs; };
    auto py = [&](double y) { return oy + size - (y - p.y_min) * ys; };

    svg << "<g>\n";
    if (p.heatmap.rows > 0 && p.heatmap.cols > 0) {
      double scale = 0.0;
      for (double v : p.heatmap.values) scale = std::max(scale, std::abs(v));
      const double cw = size / p.heatmap.cols;
      const double chh = size / p.heatmap.rows;
      for (std::size_t r = 0; r < p.heatmap.rows; ++r) {
        for (std::size_t c = 0; c < p.heatmap.cols; ++c) {
          svg << "<rect x=\"" << fmt(ox + c * cw) << "\" y=\"" << fmt(oy + r * chh) << "\" width=\"" << fmt(cw + 0.5)
              << "\" height=\"" << fmt(chh + 0.5) << "\" fill=\""
              << diverging(p.heatmap.values[r * p.heatmap.cols + c], scale) << "\"/>\n";
        }
      }
    }
    svg << "<rect x=\"" << fmt(ox) << "\" y=\"" << fmt(oy) << "\" width=\"" << fmt(size) << "\" height=\""
        << fmt(size) << "\" fill=\"none\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << fmt(ox + size / 2) << "\" y=\"" << fmt(oy - 8) << "\" text-anchor=\"middle\">"
        << escape_xml(p.title) << "</text>\n";
    for (int t = 0; t <= 4; ++t) {
      const double fx = p.x_min + (p.x_max - p.x_min) * t / 4.0;
      const double fy = p.y_min + (p.y_max - p.y_min) * t / 4.0;
      svg << "<text x=\"" << fmt(px(fx)) << "\" y=\"" << fmt(oy + size + 14) << "\" text-anchor=\"middle\">"
          << tick_label(fx) << "</text>\n";
      svg << "<text x=\"" << fmt(ox - 4) << "\" y=\"" << fmt(py(fy) + 4) << "\" text-anchor=\"end\">"
          << tick_label(fy) << "</text>\n";
    }
    if (!p.x_label.empty()) {
      svg << "<text x=\"" << fmt(ox + size / 2) << "\" y=\"" << fmt(oy + size + 30) << "\" text-anchor=\"middle\">"
          << escape_xml(p.x_label) << "</text>\n";
    }
    if (!p.y_label.empty()) {
      svg << "<text transform=\"translate(" << fmt(ox - 36) << "," << fmt(oy + size / 2)
          << ") rotate(-90)\" text-anchor=\"middle\">" << escape_xml(p.y_label) << "</text>\n";
    }

    double legend_y = oy + 12;
    for (const auto& s : p.series) {
      if (s.xs.size() != s.ys.size()) throw DimensionError("series '" + s.label + "' has mismatched coordinates");
      for (std::size_t i = 0; i < s.xs.size(); ++i) {
        const double x = px(s.xs[i]), y = py(s.ys[i]);
        if (x < ox - 1 || x > ox + size + 1 || y < oy - 1 || y > oy + size + 1) continue;
        if (s.marker == SvgSeries::Marker::Cross) {
          const double r = s.radius * 1.5;
          svg << "<path d=\"M" << fmt(x - r) << " " << fmt(y - r) << "L" << fmt(x + r) << " " << fmt(y + r) << "M"
              << fmt(x - r) << " " << fmt(y + r) << "L" << fmt(x + r) << " " << fmt(y - r) << "\" stroke=\""
              << s.color << "\" stroke-width=\"1.5\"/>\n";
        } else {
          svg << "<circle cx=\"" << fmt(x) << "\" cy=\"" << fmt(y) << "\" r=\"" << fmt(s.radius) << "\" fill=\""
              << s.color << "\"/>\n";
        }
      }
      if (!s.label.empty()) {
        svg << "<circle cx=\"" << fmt(ox + 10) << "\" cy=\"" << fmt(legend_y - 4) << "\" r=\"3\" fill=\"" << s.color
            << "\"/><text x=\"" << fmt(ox + 18) << "\" y=\"" << fmt(legend_y) << "\">" << escape_xml(s.label)
            << "</text>\n";
        legend_y += 14;
      }
    }
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_svg(const std::filesystem::path& path, std::span<const SvgPanel> panels, std::size_t columns,
               double panel_size) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing", "path");
  out << render_svg(panels, columns, panel_size);
  if (!out) throw ConfigError("failed writing " + path.string(), "path");
}

}  // namespace kktrecon
