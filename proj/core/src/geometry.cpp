// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#include "agglo/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace agglo {

void PatchGrid::validate() const {
  if (rows < 1 || cols < 1 || patch < 1) {
    throw ShapeError("invalid patch grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " (patch " + std::to_string(patch) + ")");
  }
}

PatchGrid PatchGrid::for_resolution(int pixels, int patch) {
  if (patch < 1 || pixels < patch || pixels % patch != 0) {
    throw DivisibilityError("patch " + std::to_string(patch) + " does not divide resolution " +
                            std::to_string(pixels));
  }
  return {pixels / patch, pixels / patch, patch};
}

CropMap CropMap::inverse() const {
  CropMap inv;
  inv.grid = grid;
  inv.src_offset = dst_offset;
  inv.dst_offset = src_offset;
  inv.overlap = overlap;
  if (!overlap.empty()) {
    inv.overlap.row0 = src_row(overlap.row0);
    inv.overlap.col0 = src_col(overlap.col0);
  }
  return inv;
}

CropMap CropMap::identity(const PatchGrid& grid) {
  grid.validate();
  return {grid, {}, {}, {0, 0, grid.rows, grid.cols}};
}

ShiftSample sample_shift(Rng& rng, int max_shift) {
  if (max_shift < 0) throw std::invalid_argument("max_shift must be >= 0");
  if (max_shift == 0) return {};
  const int dy = static_cast<int>(rng.uniform_int(-max_shift, max_shift));
  const int dx = static_cast<int>(rng.uniform_int(-max_shift, max_shift));
  return {dy, dx};
}

namespace {

// Overlap along one axis, in destination coordinates. With src and dst
// offsets a and b, destination index v sees source index v + b - a.
std::pair<int, int> axis_overlap(int extent, int src_shift, int dst_shift) {
  const int delta = src_shift - dst_shift;
  const int lo = std::max(0, delta);
  const int hi = std::min(extent, extent + delta);
  return {lo, std::max(0, hi - lo)};
}

}  // namespace

CropMap overlap_region(const PatchGrid& grid, ShiftSample src_shift, ShiftSample dst_shift) {
  grid.validate();
  CropMap map;
  map.grid = grid;
  map.src_offset = src_shift;
  map.dst_offset = dst_shift;
  const auto [r0, nr] = axis_overlap(grid.rows, src_shift.dy, dst_shift.dy);
  const auto [c0, nc] = axis_overlap(grid.cols, src_shift.dx, dst_shift.dx);
  if (nr == 0 || nc == 0) {
    map.overlap = {};
  } else {
    map.overlap = {r0, c0, nr, nc};
  }
  return map;
}

FeatureGrid apply_crop_map(const FeatureGrid& feat, const CropMap& map) {
  if (map.empty()) throw ShapeError("apply_crop_map: empty overlap");
  if (feat.rows != map.grid.rows || feat.cols != map.grid.cols) {
    throw ShapeError("apply_crop_map: feature grid " + shape_string(feat) +
                     " does not match map grid " + std::to_string(map.grid.rows) + "x" +
                     std::to_string(map.grid.cols));
  }
  const Rect& o = map.overlap;
  FeatureGrid out(o.rows, o.cols, feat.channels);
  for (int i = 0; i < o.rows; ++i) {
    for (int j = 0; j < o.cols; ++j) {
      const auto src = feat.vec(map.src_row(o.row0 + i), map.src_col(o.col0 + j));
      std::copy(src.begin(), src.end(), out.vec(i, j).begin());
    }
  }
  return out;
}

FeatureGrid crop_to_overlap(const FeatureGrid& dst_feat, const CropMap& map) {
  if (map.empty()) throw ShapeError("crop_to_overlap: empty overlap");
  if (dst_feat.rows != map.grid.rows || dst_feat.cols != map.grid.cols) {
    throw ShapeError("crop_to_overlap: grid mismatch " + shape_string(dst_feat));
  }
  const Rect& o = map.overlap;
  FeatureGrid out(o.rows, o.cols, dst_feat.channels);
  for (int i = 0; i < o.rows; ++i) {
    for (int j = 0; j < o.cols; ++j) {
      const auto src = dst_feat.vec(o.row0 + i, o.col0 + j);
      std::copy(src.begin(), src.end(), out.vec(i, j).begin());
    }
  }
  return out;
}

Image view_of_canvas(const Image& canvas, const PatchGrid& view, int max_shift, ShiftSample shift) {
  if (std::abs(shift.dy) > max_shift || std::abs(shift.dx) > max_shift) {
    throw std::invalid_argument("shift exceeds max_shift");
  }
  const int y0 = (max_shift + shift.dy) * view.patch;
  const int x0 = (max_shift + shift.dx) * view.patch;
  return canvas.crop(y0, x0, view.pixel_height(), view.pixel_width());
}

int sample_resolution(Rng& rng, Partition partition) {
  if (partition == Partition::low) return sample_resolution(rng, kLowResolutions);
  return sample_resolution(rng, kHighResolutions);
}

int sample_resolution(Rng& rng, std::span<const int> choices) {
  if (choices.empty()) throw std::invalid_argument("empty resolution set");
  const auto idx = rng.uniform_int(0, static_cast<std::int64_t>(choices.size()) - 1);
  return choices[static_cast<std::size_t>(idx)];
}

int MosaicLayout::tiles_per_side() const {
  return static_cast<int>(std::lround(std::sqrt(static_cast<double>(tiles.size()))));
}

void MosaicLayout::validate() const {
  canvas.validate();
  if (tiles.empty()) throw ShapeError("mosaic has no tiles");
  int area = 0;
  for (std::size_t a = 0; a < tiles.size(); ++a) {
    const Rect& r = tiles[a].rect;
    if (r.empty() || r.row0 < 0 || r.col0 < 0 || r.row0 + r.rows > canvas.rows ||
        r.col0 + r.cols > canvas.cols) {
      throw ShapeError("mosaic tile outside canvas");
    }
    for (std::size_t b = a + 1; b < tiles.size(); ++b) {
      const Rect& q = tiles[b].rect;
      const bool disjoint = r.row0 + r.rows <= q.row0 || q.row0 + q.rows <= r.row0 ||
                            r.col0 + r.cols <= q.col0 || q.col0 + q.cols <= r.col0;
      if (!disjoint) throw ShapeError("mosaic tiles overlap");
    }
    area += r.area();
  }
  if (area != canvas.positions()) throw ShapeError("mosaic tiles do not cover the canvas");
}

MosaicLayout pack_mosaic(std::span<const int> image_ids, const PatchGrid& canvas) {
  canvas.validate();
  const int count = static_cast<int>(image_ids.size());
  int n = 0;
  for (int k = 1; k <= 3; ++k) {
    if (k * k == count) n = k;
  }
  if (n == 0) {
    throw ShapeError("mosaic needs 1, 4 or 9 images for a regular tiling, got " +
                     std::to_string(count));
  }
  if (canvas.rows % n != 0 || canvas.cols % n != 0) {
    throw DivisibilityError("mosaic " + std::to_string(n) + "x" + std::to_string(n) +
                            " does not divide canvas " + std::to_string(canvas.rows) + "x" +
                            std::to_string(canvas.cols));
  }
  MosaicLayout layout;
  layout.canvas = canvas;
  const int th = canvas.rows / n;
  const int tw = canvas.cols / n;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      layout.tiles.push_back({image_ids[static_cast<std::size_t>(i * n + j)], {i * th, j * tw, th, tw}});
    }
  }
  return layout;
}

}  // namespace agglo
