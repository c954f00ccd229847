// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Teacher calibration statistics: per-channel standardization of dense
// features, mean direction and angular dispersion of summary embeddings, and
// layer norm without affine parameters.

#pragma once

#include "agglo/tensor.hpp"

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace agglo {

inline constexpr double kScaleFloor = 1e-6;
inline constexpr double kLayerNormEps = 1e-6;
inline constexpr double kDispersionFloor = 1e-4;
inline constexpr double kMinMeanNorm = 1e-8;
inline constexpr double kCosineClamp = 1e-7;

/// Streaming per-channel mean and population standard deviation (Welford).
class FeatureStatsAccumulator {
 public:
  explicit FeatureStatsAccumulator(int channels = 0);

  void add(std::span<const double> patch_vector);
  void add(const FeatureGrid& grid);

  std::size_t count() const { return count_; }
  int channels() const { return static_cast<int>(mean_.size()); }
  const std::vector<double>& mean() const { return mean_; }
  /// sqrt of population variance, floored at kScaleFloor.
  std::vector<double> scale() const;

 private:
  std::size_t count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> scale;
};

/// Fits over every patch position of every grid. Needs >= 2 patch vectors.
ChannelStats fit_feature_stats(std::span<const FeatureGrid> samples);

struct SummaryStats {
  std::vector<double> mean_dir;
  double dispersion = 0.0;
  std::size_t count = 0;
};

/// Angle between two vectors, arccos of the clamped cosine.
double angle_between(std::span<const double> a, std::span<const double> b);

/// mean_dir = E[y] / |E[y]|; dispersion = E[angle(y, mean_dir)^2]. The
/// returned dispersion is unfloored. Throws when |E[y]| <= kMinMeanNorm.
SummaryStats fit_summary_stats(std::span<const std::vector<double>> summaries);

struct TeacherStats {
  std::vector<double> channel_mean;
  std::vector<double> channel_scale;
  std::vector<double> mean_dir;
  double dispersion = 1.0;
  std::size_t sample_count = 0;

  void validate() const;
  double effective_dispersion() const;
  bool operator==(const TeacherStats&) const = default;
};

/// Interface for dense teacher feature normalization.
class FeatureNormalizer {
 public:
  virtual ~FeatureNormalizer() = default;
  virtual FeatureGrid normalize(const FeatureGrid& feat) const = 0;
  virtual FeatureGrid denormalize(const FeatureGrid& feat) const = 0;
};

/// Per-channel standardization: (x - mean) / scale.
class ChannelStandardizer final : public FeatureNormalizer {
 public:
  ChannelStandardizer(std::vector<double> mean, std::vector<double> scale);
  explicit ChannelStandardizer(const TeacherStats& stats)
      : ChannelStandardizer(stats.channel_mean, stats.channel_scale) {}

  FeatureGrid normalize(const FeatureGrid& feat) const override;
  FeatureGrid denormalize(const FeatureGrid& feat) const override;

 private:
  std::vector<double> mean_;
  std::vector<double> scale_;
};

FeatureGrid normalize_features(const FeatureGrid& feat, const TeacherStats& stats);
FeatureGrid denormalize_features(const FeatureGrid& feat, const TeacherStats& stats);

/// (v - mean(v)) / sqrt(var(v) + kLayerNormEps), population variance.
std::vector<double> ln_noaffine(std::span<const double> v);

/// Vector-Jacobian product of ln_noaffine at `v`.
std::vector<double> ln_noaffine_backward(std::span<const double> v, std::span<const double> grad_out);

}  // namespace agglo
