// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Patch-aligned view geometry: shifts, student/teacher correspondence maps,
// mosaic packing for fixed-resolution teachers, and resolution sampling.
//
// Every view is an offset crop of a shared canvas that is `max_shift` patches
// larger than the view on each side, so no padding or interpolation is ever
// needed. A canvas position p is seen by a view with shift s at local
// position p - (max_shift + s).

#pragma once

#include "agglo/rng.hpp"
#include "agglo/tensor.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace agglo {

struct PatchGrid {
  int rows = 1;
  int cols = 1;
  int patch = 1;

  int positions() const { return rows * cols; }
  int pixel_height() const { return rows * patch; }
  int pixel_width() const { return cols * patch; }

  /// Throws ShapeError unless rows, cols and patch are all >= 1.
  void validate() const;

  /// Square grid covering `pixels` x `pixels`; the patch must divide it.
  static PatchGrid for_resolution(int pixels, int patch);

  bool operator==(const PatchGrid&) const = default;
};

/// A whole-patch view offset.
struct ShiftSample {
  int dy = 0;
  int dx = 0;

  bool operator==(const ShiftSample&) const = default;
};

/// Patch rectangle; rows/cols of zero mean empty.
struct Rect {
  int row0 = 0;
  int col0 = 0;
  int rows = 0;
  int cols = 0;

  bool empty() const { return rows <= 0 || cols <= 0; }
  int area() const { return empty() ? 0 : rows * cols; }
  bool contains(int r, int c) const {
    return r >= row0 && r < row0 + rows && c >= col0 && c < col0 + cols;
  }
  bool operator==(const Rect&) const = default;
};

/// Correspondence between a source view (the student, or the live student
/// for MESA) and a destination view (a teacher, or the EMA student) of the
/// same canvas. `overlap` is expressed in destination coordinates.
struct CropMap {
  PatchGrid grid;
  ShiftSample src_offset;
  ShiftSample dst_offset;
  Rect overlap;

  bool empty() const { return overlap.empty(); }

  int src_row(int dst_row) const { return dst_row + dst_offset.dy - src_offset.dy; }
  int src_col(int dst_col) const { return dst_col + dst_offset.dx - src_offset.dx; }

  /// The map in the opposite direction; its overlap is this overlap expressed
  /// in source coordinates.
  CropMap inverse() const;

  static CropMap identity(const PatchGrid& grid);
};

/// Uniform over the (2*max_shift+1)^2 whole-patch offsets.
ShiftSample sample_shift(Rng& rng, int max_shift);

/// Common positions of two equally sized views with the given shifts.
CropMap overlap_region(const PatchGrid& grid, ShiftSample src_shift, ShiftSample dst_shift);

/// Gathers `feat` (on the source view) onto the overlap, in destination
/// coordinates. Output shape is overlap.rows x overlap.cols x channels.
FeatureGrid apply_crop_map(const FeatureGrid& feat, const CropMap& map);

/// Restricts a destination-view grid to the overlap rectangle.
FeatureGrid crop_to_overlap(const FeatureGrid& dst_feat, const CropMap& map);

/// Pixel crop of the canvas seen by a view with the given shift.
Image view_of_canvas(const Image& canvas, const PatchGrid& view, int max_shift, ShiftSample shift);

// Training resolution partitions, in pixels.
inline constexpr std::array<int, 6> kLowResolutions{128, 192, 224, 256, 384, 432};
inline constexpr std::array<int, 4> kHighResolutions{512, 768, 1024, 1152};

enum class Partition { low, high };

int sample_resolution(Rng& rng, Partition partition);
int sample_resolution(Rng& rng, std::span<const int> choices);

struct MosaicTile {
  int image_id = 0;
  Rect rect;  // in canvas patches
};

struct MosaicLayout {
  PatchGrid canvas;
  std::vector<MosaicTile> tiles;

  /// Side of the regular tile grid (1, 2 or 3).
  int tiles_per_side() const;
  void validate() const;
};

/// Regular n x n tiling of the canvas, n in {1, 2, 3}. The image count must
/// be n^2 and n must divide the canvas rows and cols.
MosaicLayout pack_mosaic(std::span<const int> image_ids, const PatchGrid& canvas);

}  // namespace agglo
