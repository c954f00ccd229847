// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Distillation losses. Each returns its value together with the gradient
// with respect to the student-side argument.

#pragma once

#include "agglo/geometry.hpp"
#include "agglo/tensor.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace agglo {

struct GridLoss {
  double value = 0.0;
  FeatureGrid grad;  // same shape as the student input; zero outside the overlap
  int omega = 0;
};

struct VectorLoss {
  double value = 0.0;
  std::vector<double> grad;
};

/// Mean over overlap positions and channels of (x mapped to the teacher view
/// - y_hat)^2. `x` lives on the source view of `map`, `y_hat` on the
/// destination view.
GridLoss spatial_loss(const FeatureGrid& x, const FeatureGrid& y_hat, const CropMap& map);

/// Same reduction as spatial_loss, applied to per-patch ln_noaffine of both
/// sides. `x_tilde` comes from the EMA student and receives no gradient.
GridLoss mesa_loss(const FeatureGrid& x, const FeatureGrid& x_tilde, const CropMap& map);

/// angle(x, y)^2 / dispersion.
VectorLoss summary_loss(std::span<const double> x, std::span<const double> y, double dispersion);

/// 1 - cos(x, y). Kept for the unbalanced baseline.
VectorLoss cosine_summary_loss(std::span<const double> x, std::span<const double> y);

enum class TermKind { spatial, summary, mesa };

const char* term_kind_name(TermKind kind);

struct TeacherWeights {
  double spatial = 1.0;
  double summary = 1.0;
};

struct LossWeights {
  std::vector<TeacherWeights> teachers;
  double mesa = 0.1;

  /// All weights >= 0 and at least one > 0.
  void validate() const;
  double weight(TermKind kind, int teacher) const;
};

struct LossTerm {
  TermKind kind = TermKind::spatial;
  int teacher = -1;  // -1 for MESA
  std::string label;
  double value = 0.0;
  int omega = 0;
  bool skipped = false;
};

struct LossReport {
  std::vector<LossTerm> terms;
  double total = 0.0;

  const LossTerm* find(TermKind kind, int teacher) const;
};

/// Weighted sum over non-skipped terms, in term order. Throws if every term
/// is skipped.
double aggregate(std::span<const LossTerm> terms, const LossWeights& weights);

/// Appends one CSV row per term plus a `total` row:
/// step,term,value,omega,resolution
void write_log_header(std::ostream& os);
void write_log_rows(std::ostream& os, long step, int resolution, const LossReport& report);

}  // namespace agglo
