// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Value types shared by every module: dense feature grids, RGB images, and
// the exception hierarchy.

#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace agglo {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A window or patch size does not evenly divide a resolution.
class DivisibilityError : public Error {
 public:
  using Error::Error;
};

/// A file on disk is malformed, truncated, or of the wrong version.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Dense per-patch features, stored row-major as (row, col, channel).
struct FeatureGrid {
  int rows = 0;
  int cols = 0;
  int channels = 0;
  std::vector<double> values;

  FeatureGrid() = default;
  FeatureGrid(int rows, int cols, int channels, double fill = 0.0);

  int positions() const { return rows * cols; }
  std::size_t index(int r, int c, int k) const {
    return (static_cast<std::size_t>(r) * cols + c) * channels + k;
  }
  double& at(int r, int c, int k) { return values[index(r, c, k)]; }
  double at(int r, int c, int k) const { return values[index(r, c, k)]; }

  std::span<double> vec(int r, int c) {
    return {values.data() + index(r, c, 0), static_cast<std::size_t>(channels)};
  }
  std::span<const double> vec(int r, int c) const {
    return {values.data() + index(r, c, 0), static_cast<std::size_t>(channels)};
  }

  /// positions x channels view.
  MatMap matrix() { return {values.data(), positions(), channels}; }
  ConstMatMap matrix() const { return {values.data(), positions(), channels}; }

  bool same_shape(const FeatureGrid& other) const {
    return rows == other.rows && cols == other.cols && channels == other.channels;
  }

  static FeatureGrid from_matrix(int rows, int cols, const Mat& m);
};

/// Float RGB image stored HWC.
struct Image {
  static constexpr int kChannels = 3;

  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int height, int width, double fill = 0.0);

  double& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * kChannels + c];
  }
  double at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * kChannels + c];
  }

  /// Copy of the rectangle [y0, y0+h) x [x0, x0+w).
  Image crop(int y0, int x0, int h, int w) const;

  /// Writes `tile` with its top-left corner at (y0, x0).
  void paste(const Image& tile, int y0, int x0);

  /// Box-filter downsample by an integer factor.
  Image downsample(int factor) const;
};

std::string shape_string(const FeatureGrid& g);

/// Separable bilinear resampling weights with half-pixel centres and edge
/// clamping. Each destination index mixes at most two source indices.
struct LinearTaps {
  int lo = 0;
  int hi = 0;
  double w_lo = 1.0;
  double w_hi = 0.0;
};

std::vector<LinearTaps> bilinear_taps(int src, int dst);

/// Bilinear resize of a feature grid to (rows, cols).
FeatureGrid resize_bilinear(const FeatureGrid& src, int rows, int cols);

/// Adjoint of resize_bilinear: scatters gradients on the resized grid back
/// onto a (src_rows, src_cols) grid.
FeatureGrid resize_bilinear_adjoint(const FeatureGrid& grad, int src_rows, int src_cols);

/// out.row(0) += column sums of m, accumulated row by row in a fixed order.
/// Eigen's vectorized colwise() reduction can round differently depending
/// on heap alignment, which breaks bit-exact reruns.
template <class Derived, class Out>
void add_column_sums(const Eigen::MatrixBase<Derived>& m, Out&& out) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out(0, c) += m(r, c);
  }
}

}  // namespace agglo
