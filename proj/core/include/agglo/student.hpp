// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Any-resolution ViT student with per-layer global or windowed attention, a
// learned position-embedding grid resampled to the input, a summary token,
// and an exact reverse-mode backward pass.

#pragma once

#include "agglo/attention.hpp"
#include "agglo/geometry.hpp"
#include "agglo/params.hpp"
#include "agglo/tensor.hpp"

#include <span>
#include <string>
#include <vector>

namespace agglo {

inline constexpr int kMinWindow = 6;
inline constexpr int kMaxWindow = 32;

struct StudentConfig {
  int patch = 16;
  int dim = 128;
  int depth = 8;
  int heads = 4;
  int mlp_ratio = 4;
  int pos_grid = 16;
  std::vector<AttentionWindow> schedule;

  /// patch 16, dim 128, depth 8, heads 4; window 8 except global at layers
  /// 2, 4, 6 and 8 (1-based).
  static StudentConfig desk_default();

  /// Same layer count with every layer global.
  std::vector<AttentionWindow> global_schedule() const;

  /// Structural checks: dim divisible by heads, schedule length equals
  /// depth, windows within [kMinWindow, kMaxWindow], at least one global
  /// layer.
  void validate() const;

  /// Throws DivisibilityError naming the offending layer and dimension when
  /// the image cannot be processed with `schedule`.
  void check_resolution(int height, int width, std::span<const AttentionWindow> schedule) const;
  void check_resolution(int height, int width) const { check_resolution(height, width, schedule); }

  bool operator==(const StudentConfig&) const = default;
};

struct StudentOutput {
  std::vector<double> summary;
  FeatureGrid features;
};

struct StudentBlockCache {
  Mat xhat1;
  Vec rstd1;
  Mat h1;
  AttentionCache attn;
  Mat xhat2;
  Vec rstd2;
  Mat h2;
  Mat pre;
  Mat act;
};

struct StudentCache {
  int rows = 0;
  int cols = 0;
  Mat patches;
  std::vector<std::vector<AttentionGroup>> groups;
  std::vector<StudentBlockCache> blocks;
  Mat xhat_final;
  Vec rstd_final;
};

/// Flattens non-overlapping patch x patch pixel blocks, (py, px, c) order.
Mat extract_patches(const Image& image, int patch);

/// Bilinear resampling of a learned position-embedding grid.
FeatureGrid interp_pos_embed(const FeatureGrid& base, const PatchGrid& target);

class Student {
 public:
  /// Registers the student's parameters in `layout` under `prefix`.
  Student(StudentConfig cfg, ParamLayout& layout, const std::string& prefix = "student");

  const StudentConfig& config() const { return cfg_; }

  StudentOutput forward(std::span<const double> params, const Image& image,
                        StudentCache* cache = nullptr) const;
  StudentOutput forward(std::span<const double> params, const Image& image,
                        std::span<const AttentionWindow> schedule, StudentCache* cache = nullptr) const;

  /// Accumulates dL/dparams into `grads` given upstream gradients for the
  /// summary and the feature grid.
  void backward(std::span<const double> params, const StudentCache& cache,
                std::span<const double> d_summary, const FeatureGrid& d_features,
                std::span<double> grads) const;

  /// Total parameter count registered by this student.
  std::size_t parameter_count() const { return count_; }

 private:
  struct BlockParams {
    ParamEntry ln1_g, ln1_b, wqkv, bqkv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  StudentConfig cfg_;
  ParamEntry patch_w_;
  ParamEntry patch_b_;
  ParamEntry pos_;
  ParamEntry summary_token_;
  ParamEntry lnf_g_;
  ParamEntry lnf_b_;
  std::vector<BlockParams> blocks_;
  std::size_t count_ = 0;
};

}  // namespace agglo
