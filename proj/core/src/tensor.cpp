// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#include "agglo/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace agglo {

FeatureGrid::FeatureGrid(int rows_, int cols_, int channels_, double fill)
    : rows(rows_), cols(cols_), channels(channels_) {
  if (rows < 0 || cols < 0 || channels < 0) throw ShapeError("negative feature grid dimension");
  values.assign(static_cast<std::size_t>(rows) * cols * channels, fill);
}

FeatureGrid FeatureGrid::from_matrix(int rows, int cols, const Mat& m) {
  if (m.rows() != static_cast<Eigen::Index>(rows) * cols) {
    throw ShapeError("matrix row count does not match grid positions");
  }
  FeatureGrid g(rows, cols, static_cast<int>(m.cols()));
  g.matrix() = m;
  return g;
}

Image::Image(int height_, int width_, double fill) : height(height_), width(width_) {
  if (height < 0 || width < 0) throw ShapeError("negative image dimension");
  pixels.assign(static_cast<std::size_t>(height) * width * kChannels, fill);
}

Image Image::crop(int y0, int x0, int h, int w) const {
  if (y0 < 0 || x0 < 0 || h < 0 || w < 0 || y0 + h > height || x0 + w > width) {
    throw ShapeError("crop rectangle outside image");
  }
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    const double* src = &pixels[(static_cast<std::size_t>(y0 + y) * width + x0) * kChannels];
    std::copy(src, src + static_cast<std::size_t>(w) * kChannels,
              &out.pixels[static_cast<std::size_t>(y) * w * kChannels]);
  }
  return out;
}

void Image::paste(const Image& tile, int y0, int x0) {
  if (y0 < 0 || x0 < 0 || y0 + tile.height > height || x0 + tile.width > width) {
    throw ShapeError("paste rectangle outside image");
  }
  for (int y = 0; y < tile.height; ++y) {
    const double* src = &tile.pixels[static_cast<std::size_t>(y) * tile.width * kChannels];
    std::copy(src, src + static_cast<std::size_t>(tile.width) * kChannels,
              &pixels[(static_cast<std::size_t>(y0 + y) * width + x0) * kChannels]);
  }
}

Image Image::downsample(int factor) const {
  if (factor < 1 || height % factor != 0 || width % factor != 0) {
    throw DivisibilityError("downsample factor " + std::to_string(factor) +
                            " does not divide " + std::to_string(height) + "x" +
                            std::to_string(width));
  }
  if (factor == 1) return *this;
  Image out(height / factor, width / factor);
  const double norm = 1.0 / (factor * factor);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < kChannels; ++c) {
        double acc = 0.0;
        for (int dy = 0; dy < factor; ++dy) {
          for (int dx = 0; dx < factor; ++dx) acc += at(y * factor + dy, x * factor + dx, c);
        }
        out.at(y, x, c) = acc * norm;
      }
    }
  }
  return out;
}

std::string shape_string(const FeatureGrid& g) {
  return std::to_string(g.rows) + "x" + std::to_string(g.cols) + "x" + std::to_string(g.channels);
}

std::vector<LinearTaps> bilinear_taps(int src, int dst) {
  std::vector<LinearTaps> taps(static_cast<std::size_t>(dst));
  const double scale = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    double pos = (i + 0.5) * scale - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(src - 1));
    const int lo = static_cast<int>(std::floor(pos));
    const int hi = std::min(lo + 1, src - 1);
    const double frac = pos - lo;
    taps[static_cast<std::size_t>(i)] = {lo, hi, 1.0 - frac, frac};
  }
  return taps;
}

FeatureGrid resize_bilinear(const FeatureGrid& src, int rows, int cols) {
  if (src.rows < 1 || src.cols < 1) throw ShapeError("cannot resize an empty grid");
  if (rows == src.rows && cols == src.cols) return src;
  const auto ty = bilinear_taps(src.rows, rows);
  const auto tx = bilinear_taps(src.cols, cols);
  FeatureGrid out(rows, cols, src.channels);
  for (int r = 0; r < rows; ++r) {
    const auto& a = ty[static_cast<std::size_t>(r)];
    for (int c = 0; c < cols; ++c) {
      const auto& b = tx[static_cast<std::size_t>(c)];
      auto dst = out.vec(r, c);
      const auto v00 = src.vec(a.lo, b.lo);
      const auto v01 = src.vec(a.lo, b.hi);
      const auto v10 = src.vec(a.hi, b.lo);
      const auto v11 = src.vec(a.hi, b.hi);
      for (int k = 0; k < src.channels; ++k) {
        dst[k] = a.w_lo * (b.w_lo * v00[k] + b.w_hi * v01[k]) +
                 a.w_hi * (b.w_lo * v10[k] + b.w_hi * v11[k]);
      }
    }
  }
  return out;
}

FeatureGrid resize_bilinear_adjoint(const FeatureGrid& grad, int src_rows, int src_cols) {
  if (grad.rows == src_rows && grad.cols == src_cols) return grad;
  const auto ty = bilinear_taps(src_rows, grad.rows);
  const auto tx = bilinear_taps(src_cols, grad.cols);
  FeatureGrid out(src_rows, src_cols, grad.channels);
  for (int r = 0; r < grad.rows; ++r) {
    const auto& a = ty[static_cast<std::size_t>(r)];
    for (int c = 0; c < grad.cols; ++c) {
      const auto& b = tx[static_cast<std::size_t>(c)];
      const auto g = grad.vec(r, c);
      auto v00 = out.vec(a.lo, b.lo);
      auto v01 = out.vec(a.lo, b.hi);
      auto v10 = out.vec(a.hi, b.lo);
      auto v11 = out.vec(a.hi, b.hi);
      for (int k = 0; k < grad.channels; ++k) {
        v00[k] += a.w_lo * b.w_lo * g[k];
        v01[k] += a.w_lo * b.w_hi * g[k];
        v10[k] += a.w_hi * b.w_lo * g[k];
        v11[k] += a.w_hi * b.w_hi * g[k];
      }
    }
  }
  return out;
}

}  // namespace agglo
