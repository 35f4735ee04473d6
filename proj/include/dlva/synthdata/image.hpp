// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dlva/errors.hpp"

namespace dlva {

inline constexpr std::size_t kMaxColors = 8;
inline constexpr std::size_t kMaxShapes = 4;

inline const std::array<const char*, kMaxColors> kColorNames = {"red",  "green",   "blue",  "yellow",
                                                                "cyan", "magenta", "white", "orange"};
inline const std::array<const char*, kMaxShapes> kShapeNames = {"square", "circle", "triangle", "diamond"};

inline constexpr std::array<std::array<double, 3>, kMaxColors> kPalette = {{
    {1.0, 0.0, 0.0},
    {0.0, 1.0, 0.0},
    {0.0, 0.0, 1.0},
    {1.0, 1.0, 0.0},
    {0.0, 1.0, 1.0},
    {1.0, 0.0, 1.0},
    {1.0, 1.0, 1.0},
    {1.0, 0.5, 0.0},
}};

struct Cell {
  int color = -1;
  int shape = -1;

  bool empty() const { return color < 0; }
  friend bool operator==(const Cell&, const Cell&) = default;
};

// A G×G grid of cells rendered to an RGB buffer of (G·cell_px)² pixels.
// Each grid cell is one image patch, numbered row-major.
struct SynthImage {
  std::size_t grid = 0;
  std::size_t cell_px = 0;
  std::vector<Cell> cells;
  std::vector<double> pixels;  // row-major H×W×3, values in [0, 1]
  // applied_order[i] is the original patch index now shown at patch i.
  std::vector<std::size_t> applied_order;
  bool blank = false;

  std::size_t n_patches() const { return grid * grid; }
  std::size_t side_px() const { return grid * cell_px; }
  std::size_t patch_pixels() const { return cell_px * cell_px * 3; }

  // Flattened (y, x, channel) values of patch i.
  std::vector<double> patch(std::size_t i) const {
    if (i >= n_patches()) fail(ErrorKind::index, "patch " + std::to_string(i) + " outside " + std::to_string(n_patches()));
    std::vector<double> out;
    out.reserve(patch_pixels());
    const std::size_t pr = i / grid, pc = i % grid, w = side_px();
    for (std::size_t y = 0; y < cell_px; ++y) {
      const std::size_t row = pr * cell_px + y;
      const double* src = pixels.data() + (row * w + pc * cell_px) * 3;
      out.insert(out.end(), src, src + cell_px * 3);
    }
    return out;
  }

  friend bool operator==(const SynthImage&, const SynthImage&) = default;
};

namespace detail {

inline bool shape_covers(int shape, std::size_t x, std::size_t y, std::size_t cell_px) {
  const double half = static_cast<double>(cell_px) / 2.0;
  const double c = (static_cast<double>(cell_px) - 1.0) / 2.0;
  const double u = (static_cast<double>(x) - c) / half;
  const double v = (static_cast<double>(y) - c) / half;
  switch (shape) {
    case 0: return std::max(std::abs(u), std::abs(v)) <= 0.6;
    case 1: return u * u + v * v <= 0.49;
    case 2: return v >= -0.6 && v <= 0.6 && std::abs(u) <= (v + 0.6) / 2.0 + 1e-9;
    case 3: return std::abs(u) + std::abs(v) <= 0.7;
    default: return false;
  }
}

}  // namespace detail

// Background is a smooth two-axis gradient, so every background pixel carries
// its location in the image, the way natural images carry sky-above-ground
// structure. Objects are drawn in saturated palette colors over it.
inline SynthImage render_image(std::size_t grid, std::size_t cell_px, std::vector<Cell> cells) {
  if (grid == 0 || cell_px < 3) fail(ErrorKind::config, "image needs grid >= 1 and cell_px >= 3");
  if (cells.size() != grid * grid) fail(ErrorKind::dimension, "grid of " + std::to_string(grid) + " needs " +
                                                                  std::to_string(grid * grid) + " cells");
  SynthImage img;
  img.grid = grid;
  img.cell_px = cell_px;
  img.cells = std::move(cells);
  const std::size_t w = img.side_px();
  img.pixels.assign(w * w * 3, 0.0);
  const double span = static_cast<double>(w > 1 ? w - 1 : 1);
  for (std::size_t y = 0; y < w; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double* px = img.pixels.data() + (y * w + x) * 3;
      px[0] = 0.15 + 0.35 * static_cast<double>(x) / span;
      px[1] = 0.15 + 0.35 * static_cast<double>(y) / span;
      px[2] = 0.30;
      const Cell& cell = img.cells[(y / cell_px) * grid + (x / cell_px)];
      if (cell.empty()) continue;
      if (cell.color >= static_cast<int>(kMaxColors) || cell.shape < 0 || cell.shape >= static_cast<int>(kMaxShapes))
        fail(ErrorKind::data, "cell attribute outside palette");
      if (detail::shape_covers(cell.shape, x % cell_px, y % cell_px, cell_px)) {
        const auto& rgb = kPalette[static_cast<std::size_t>(cell.color)];
        px[0] = rgb[0];
        px[1] = rgb[1];
        px[2] = rgb[2];
      }
    }
  img.applied_order.resize(img.n_patches());
  std::iota(img.applied_order.begin(), img.applied_order.end(), std::size_t{0});
  return img;
}

// All-zero pixels with the same geometry; grid metadata cleared.
inline SynthImage blank_image(const SynthImage& img) {
  SynthImage out;
  out.grid = img.grid;
  out.cell_px = img.cell_px;
  out.cells.assign(img.cells.size(), Cell{});
  out.pixels.assign(img.pixels.size(), 0.0);
  out.applied_order.resize(img.n_patches());
  std::iota(out.applied_order.begin(), out.applied_order.end(), std::size_t{0});
  out.blank = true;
  return out;
}

}  // namespace dlva
