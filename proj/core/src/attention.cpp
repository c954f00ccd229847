// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#include "agglo/attention.hpp"

#include <algorithm>
#include <cmath>

namespace agglo {

namespace {

constexpr int kQueryChunk = 256;

void gather_rows(const Mat& src, const std::vector<int>& rows, int col0, int ncols, Mat& dst) {
  dst.resize(static_cast<Eigen::Index>(rows.size()), ncols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    dst.row(static_cast<Eigen::Index>(i)) = src.block(rows[i], col0, 1, ncols);
  }
}

void scatter_add_rows(const Mat& src, const std::vector<int>& rows, int col0, Mat& dst) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    dst.block(rows[i], col0, 1, src.cols()) += src.row(static_cast<Eigen::Index>(i));
  }
}

void softmax_rows(Mat& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    auto row = s.row(r);
    const double m = row.maxCoeff();
    row = (row.array() - m).exp();
    row /= row.sum();
  }
}

}  // namespace

std::vector<AttentionGroup> attention_groups(int rows, int cols, AttentionWindow window, bool has_summary) {
  if (rows < 1 || cols < 1) throw ShapeError("attention: empty token grid");
  const int offset = has_summary ? 1 : 0;
  const int total = rows * cols + offset;
  std::vector<AttentionGroup> groups;
  if (window.is_global()) {
    AttentionGroup g;
    g.queries.resize(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) g.queries[static_cast<std::size_t>(i)] = i;
    g.keys = g.queries;
    groups.push_back(std::move(g));
    return groups;
  }
  const int w = window.size;
  if (w < 1 || rows % w != 0 || cols % w != 0) {
    throw DivisibilityError("window " + std::to_string(w) + " does not divide token grid " +
                            std::to_string(rows) + "x" + std::to_string(cols));
  }
  for (int wr = 0; wr < rows; wr += w) {
    for (int wc = 0; wc < cols; wc += w) {
      AttentionGroup g;
      for (int r = wr; r < wr + w; ++r) {
        for (int c = wc; c < wc + w; ++c) g.queries.push_back(offset + r * cols + c);
      }
      g.keys = g.queries;
      if (has_summary) g.keys.push_back(0);
      groups.push_back(std::move(g));
    }
  }
  if (has_summary) {
    AttentionGroup g;
    g.queries = {0};
    g.keys.resize(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) g.keys[static_cast<std::size_t>(i)] = i;
    groups.push_back(std::move(g));
  }
  return groups;
}

Mat attention_forward(const Mat& x, const AttentionWeights& w, std::span<const AttentionGroup> groups,
                      AttentionCache* cache) {
  const int dim = static_cast<int>(x.cols());
  if (w.wqkv.rows() != dim || w.wqkv.cols() != 3 * dim || dim % w.heads != 0) {
    throw ShapeError("attention: weight shapes do not match token width " + std::to_string(dim));
  }
  const int hd = dim / w.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Mat qkv = x * w.wqkv;
  qkv.rowwise() += w.bqkv.row(0);
  Mat mixed = Mat::Zero(x.rows(), dim);

  Mat q, k, v, s, o;
  for (const auto& g : groups) {
    for (int h = 0; h < w.heads; ++h) {
      gather_rows(qkv, g.queries, h * hd, hd, q);
      gather_rows(qkv, g.keys, dim + h * hd, hd, k);
      gather_rows(qkv, g.keys, 2 * dim + h * hd, hd, v);
      const auto nq = static_cast<Eigen::Index>(g.queries.size());
      o.resize(nq, hd);
      for (Eigen::Index c0 = 0; c0 < nq; c0 += kQueryChunk) {
        const Eigen::Index n = std::min<Eigen::Index>(kQueryChunk, nq - c0);
        s.noalias() = q.middleRows(c0, n) * k.transpose();
        s *= scale;
        softmax_rows(s);
        o.middleRows(c0, n).noalias() = s * v;
      }
      for (std::size_t i = 0; i < g.queries.size(); ++i) {
        mixed.block(g.queries[i], h * hd, 1, hd) = o.row(static_cast<Eigen::Index>(i));
      }
    }
  }

  Mat y = mixed * w.wo;
  y.rowwise() += w.bo.row(0);
  if (cache) {
    cache->qkv = std::move(qkv);
    cache->mixed = std::move(mixed);
  }
  return y;
}

Mat attention_backward(const Mat& x, const AttentionWeights& w, std::span<const AttentionGroup> groups,
                       const AttentionCache& cache, const Mat& grad_out, AttentionGradients& grads) {
  const int dim = static_cast<int>(x.cols());
  const int hd = dim / w.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  grads.wo.noalias() += cache.mixed.transpose() * grad_out;
  add_column_sums(grad_out, grads.bo);
  const Mat d_mixed = grad_out * w.wo.transpose();

  Mat d_qkv = Mat::Zero(x.rows(), 3 * dim);
  Mat q, k, v, o, d_o, p, dp, dq, dk, dv;
  for (const auto& g : groups) {
    for (int h = 0; h < w.heads; ++h) {
      gather_rows(cache.qkv, g.queries, h * hd, hd, q);
      gather_rows(cache.qkv, g.keys, dim + h * hd, hd, k);
      gather_rows(cache.qkv, g.keys, 2 * dim + h * hd, hd, v);
      gather_rows(cache.mixed, g.queries, h * hd, hd, o);
      gather_rows(d_mixed, g.queries, h * hd, hd, d_o);
      const auto nq = static_cast<Eigen::Index>(g.queries.size());
      const auto nk = static_cast<Eigen::Index>(g.keys.size());
      dq.resize(nq, hd);
      dk = Mat::Zero(nk, hd);
      dv = Mat::Zero(nk, hd);
      for (Eigen::Index c0 = 0; c0 < nq; c0 += kQueryChunk) {
        const Eigen::Index n = std::min<Eigen::Index>(kQueryChunk, nq - c0);
        p.noalias() = q.middleRows(c0, n) * k.transpose();
        p *= scale;
        softmax_rows(p);
        dp.noalias() = d_o.middleRows(c0, n) * v.transpose();
        const Vec row_dot = (d_o.middleRows(c0, n).array() * o.middleRows(c0, n).array()).rowwise().sum();
        dp.colwise() -= row_dot;
        dp.array() *= p.array();  // dp now holds dS
        dq.middleRows(c0, n).noalias() = dp * k * scale;
        dk.noalias() += dp.transpose() * q.middleRows(c0, n) * scale;
        dv.noalias() += p.transpose() * d_o.middleRows(c0, n);
      }
      scatter_add_rows(dq, g.queries, h * hd, d_qkv);
      scatter_add_rows(dk, g.keys, dim + h * hd, d_qkv);
      scatter_add_rows(dv, g.keys, 2 * dim + h * hd, d_qkv);
    }
  }

  grads.wqkv.noalias() += x.transpose() * d_qkv;
  add_column_sums(d_qkv, grads.bqkv);
  return d_qkv * w.wqkv.transpose();
}

FeatureGrid windowed_attention(const FeatureGrid& tokens, int window, const AttentionWeights& w) {
  if (window < 1) throw DivisibilityError("window must be >= 1");
  const auto groups = attention_groups(tokens.rows, tokens.cols, AttentionWindow::window(window), false);
  const Mat x = tokens.matrix();
  const Mat y = attention_forward(x, w, groups);
  return FeatureGrid::from_matrix(tokens.rows, tokens.cols, y);
}

std::uint64_t attention_flops(const PatchGrid& grid, std::span<const AttentionWindow> schedule, int dim) {
  const std::uint64_t t = static_cast<std::uint64_t>(grid.positions());
  const std::uint64_t d = static_cast<std::uint64_t>(dim);
  std::uint64_t total = 0;
  for (const auto& layer : schedule) {
    if (layer.is_global()) {
      total += 2 * t * t * d;
    } else {
      const std::uint64_t w = static_cast<std::uint64_t>(layer.size);
      total += 2 * t * w * w * d;
    }
  }
  return total;
}

}  // namespace agglo
