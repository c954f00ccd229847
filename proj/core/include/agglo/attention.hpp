// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-head self-attention over a patch-token grid, either global or
// restricted to disjoint w x w windows (ViTDet style). An optional summary
// token (token 0) attends to every token and is visible to every window.

#pragma once

#include "agglo/geometry.hpp"
#include "agglo/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace agglo {

struct AttentionWindow {
  int size = 0;  // 0 == global

  static constexpr AttentionWindow global() { return {0}; }
  static constexpr AttentionWindow window(int w) { return {w}; }
  bool is_global() const { return size == 0; }
  std::string label() const { return is_global() ? "global" : std::to_string(size); }
  bool operator==(const AttentionWindow&) const = default;
};

struct AttentionGroup {
  std::vector<int> queries;
  std::vector<int> keys;
};

/// Query/key index sets for one attention layer. Patch (r, c) is token
/// r * cols + c, offset by one when a summary token is present. Throws
/// DivisibilityError when the window does not divide both grid dimensions.
std::vector<AttentionGroup> attention_groups(int rows, int cols, AttentionWindow window,
                                             bool has_summary);

struct AttentionWeights {
  ConstMatMap wqkv;  // dim x 3*dim, columns [q | k | v], heads contiguous
  ConstMatMap bqkv;  // 1 x 3*dim
  ConstMatMap wo;    // dim x dim
  ConstMatMap bo;    // 1 x dim
  int heads;
};

struct AttentionGradients {
  MatMap wqkv;
  MatMap bqkv;
  MatMap wo;
  MatMap bo;
};

struct AttentionCache {
  Mat qkv;
  Mat mixed;  // per-head outputs concatenated, before the output projection
};

/// y = Attention(x). Attention probabilities are recomputed in the backward
/// pass, so the cache only holds qkv and the mixed values.
Mat attention_forward(const Mat& x, const AttentionWeights& w, std::span<const AttentionGroup> groups,
                      AttentionCache* cache = nullptr);

/// Returns dL/dx and accumulates parameter gradients into `grads`.
Mat attention_backward(const Mat& x, const AttentionWeights& w, std::span<const AttentionGroup> groups,
                       const AttentionCache& cache, const Mat& grad_out, AttentionGradients& grads);

/// Patch-token-only attention over a feature grid (no summary token).
FeatureGrid windowed_attention(const FeatureGrid& tokens, int window, const AttentionWeights& w);

/// Score + mix cost summed over layers: global 2*T^2*dim, window(w)
/// 2*T*w^2*dim, with T the number of patch tokens.
std::uint64_t attention_flops(const PatchGrid& grid, std::span<const AttentionWindow> schedule, int dim);

}  // namespace agglo
