// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#include "agglo/normstats.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace agglo {

FeatureStatsAccumulator::FeatureStatsAccumulator(int channels)
    : mean_(static_cast<std::size_t>(channels), 0.0), m2_(static_cast<std::size_t>(channels), 0.0) {}

void FeatureStatsAccumulator::add(std::span<const double> v) {
  if (count_ == 0 && mean_.empty()) {
    mean_.assign(v.size(), 0.0);
    m2_.assign(v.size(), 0.0);
  }
  if (v.size() != mean_.size()) {
    throw ShapeError("feature stats: channel count " + std::to_string(v.size()) +
                     " != " + std::to_string(mean_.size()));
  }
  ++count_;
  const double n = static_cast<double>(count_);
  for (std::size_t k = 0; k < v.size(); ++k) {
    const double delta = v[k] - mean_[k];
    mean_[k] += delta / n;
    m2_[k] += delta * (v[k] - mean_[k]);
  }
}

void FeatureStatsAccumulator::add(const FeatureGrid& grid) {
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) add(grid.vec(r, c));
  }
}

std::vector<double> FeatureStatsAccumulator::scale() const {
  std::vector<double> s(mean_.size(), kScaleFloor);
  if (count_ == 0) return s;
  for (std::size_t k = 0; k < s.size(); ++k) {
    s[k] = std::max(std::sqrt(m2_[k] / static_cast<double>(count_)), kScaleFloor);
  }
  return s;
}

ChannelStats fit_feature_stats(std::span<const FeatureGrid> samples) {
  if (samples.empty()) throw std::invalid_argument("fit_feature_stats: empty stream");
  FeatureStatsAccumulator acc(samples.front().channels);
  for (const auto& g : samples) acc.add(g);
  if (acc.count() < 2) throw std::invalid_argument("fit_feature_stats: need at least 2 patch vectors");
  return {acc.mean(), acc.scale()};
}

double angle_between(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("angle_between: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) throw std::invalid_argument("angle_between: zero-norm vector");
  const double cosine = std::clamp(dot / std::sqrt(na * nb), -1.0 + kCosineClamp, 1.0 - kCosineClamp);
  return std::acos(cosine);
}

SummaryStats fit_summary_stats(std::span<const std::vector<double>> summaries) {
  if (summaries.size() < 2) throw std::invalid_argument("fit_summary_stats: need at least 2 summaries");
  const std::size_t dim = summaries.front().size();
  std::vector<double> mean(dim, 0.0);
  for (const auto& y : summaries) {
    if (y.size() != dim) throw ShapeError("fit_summary_stats: inconsistent summary dimension");
    for (std::size_t i = 0; i < dim; ++i) mean[i] += y[i];
  }
  double norm = 0.0;
  for (auto& m : mean) {
    m /= static_cast<double>(summaries.size());
    norm += m * m;
  }
  norm = std::sqrt(norm);
  if (norm <= kMinMeanNorm) {
    throw std::domain_error("fit_summary_stats: mean summary has near-zero norm (directionless teacher)");
  }
  for (auto& m : mean) m /= norm;

  // An exactly aligned summary sits at the clamp floor rather than at 0.
  double disp = 0.0;
  for (const auto& y : summaries) {
    double dot = 0.0, ny = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      dot += y[i] * mean[i];
      ny += y[i] * y[i];
    }
    if (ny <= 0.0) throw std::invalid_argument("fit_summary_stats: zero-norm summary");
    const double cosine = std::clamp(dot / std::sqrt(ny), -1.0, 1.0);
    const double theta = std::acos(cosine);
    disp += theta * theta;
  }
  return {std::move(mean), disp / static_cast<double>(summaries.size()), summaries.size()};
}

void TeacherStats::validate() const {
  if (channel_mean.size() != channel_scale.size()) throw ShapeError("teacher stats: mean/scale size mismatch");
  for (double s : channel_scale) {
    if (!(s > 0.0)) throw std::invalid_argument("teacher stats: channel_scale must be > 0");
  }
  double n = 0.0;
  for (double v : mean_dir) n += v * v;
  if (std::abs(std::sqrt(n) - 1.0) > 1e-6) throw std::invalid_argument("teacher stats: mean_dir not unit norm");
  if (!(dispersion > 0.0)) throw std::invalid_argument("teacher stats: dispersion must be > 0");
}

double TeacherStats::effective_dispersion() const { return std::max(dispersion, kDispersionFloor); }

ChannelStandardizer::ChannelStandardizer(std::vector<double> mean, std::vector<double> scale)
    : mean_(std::move(mean)), scale_(std::move(scale)) {
  if (mean_.size() != scale_.size()) throw ShapeError("standardizer: mean/scale size mismatch");
}

FeatureGrid ChannelStandardizer::normalize(const FeatureGrid& feat) const {
  if (static_cast<std::size_t>(feat.channels) != mean_.size()) {
    throw ShapeError("normalize: grid has " + std::to_string(feat.channels) + " channels, stats have " +
                     std::to_string(mean_.size()));
  }
  FeatureGrid out = feat;
  const std::size_t c = mean_.size();
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const std::size_t k = i % c;
    out.values[i] = (out.values[i] - mean_[k]) / scale_[k];
  }
  return out;
}

FeatureGrid ChannelStandardizer::denormalize(const FeatureGrid& feat) const {
  if (static_cast<std::size_t>(feat.channels) != mean_.size()) {
    throw ShapeError("denormalize: channel mismatch");
  }
  FeatureGrid out = feat;
  const std::size_t c = mean_.size();
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const std::size_t k = i % c;
    out.values[i] = out.values[i] * scale_[k] + mean_[k];
  }
  return out;
}

FeatureGrid normalize_features(const FeatureGrid& feat, const TeacherStats& stats) {
  return ChannelStandardizer(stats).normalize(feat);
}

FeatureGrid denormalize_features(const FeatureGrid& feat, const TeacherStats& stats) {
  return ChannelStandardizer(stats).denormalize(feat);
}

std::vector<double> ln_noaffine(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("ln_noaffine: empty vector");
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= n;
  const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mean) * rstd;
  return out;
}

std::vector<double> ln_noaffine_backward(std::span<const double> v, std::span<const double> grad_out) {
  if (v.size() != grad_out.size()) throw ShapeError("ln_noaffine_backward: size mismatch");
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= n;
  const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
  double g_mean = 0.0, gx_mean = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double xhat = (v[i] - mean) * rstd;
    g_mean += grad_out[i];
    gx_mean += grad_out[i] * xhat;
  }
  g_mean /= n;
  gx_mean /= n;
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double xhat = (v[i] - mean) * rstd;
    out[i] = rstd * (grad_out[i] - g_mean - xhat * gx_mean);
  }
  return out;
}

}  // namespace agglo
