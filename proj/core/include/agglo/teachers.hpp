// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Procedural teachers. Dense output is f(local image statistics) plus
// bias_amplitude * g(position in the teacher's own frame), so g is a
// data-invariant, position-locked nuisance. Summaries are drawn
// deterministically from a spherical cap of angle cone_angle around a fixed
// teacher direction.

#pragma once

#include "agglo/geometry.hpp"
#include "agglo/rng.hpp"
#include "agglo/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace agglo {

enum class NativeKind {
  variable,  // any patch-aligned input
  fixed,     // only native_pixels x native_pixels; fed through mosaics
  low,       // runs at most at native_pixels; larger views are downsampled then upsampled back
};

const char* native_kind_name(NativeKind kind);
NativeKind parse_native_kind(const std::string& s);

struct SyntheticTeacherSpec {
  std::string name = "teacher";
  int channels = 16;
  int summary_dim = 16;
  int patch = 16;
  std::uint64_t semantic_seed = 1;
  double bias_amplitude = 0.0;
  double bias_period = 6.0;     // sinusoid period, in patches
  double ring_amplitude = 3.0;  // border ring strength relative to the sinusoid
  double cone_angle = 0.5;      // radians
  NativeKind native = NativeKind::variable;
  int native_pixels = 0;

  void validate() const;
};

struct TeacherOutput {
  std::vector<double> summary;
  FeatureGrid features;
};

/// Uniform direction within a spherical cap. The polar angle is drawn by
/// inverting a tabulated CDF of sin^(dim-2), so a fixed uniform stream gives
/// angles that are monotone in the cap angle.
class ConeSampler {
 public:
  ConeSampler(int dim, double cap_angle);

  std::vector<double> sample(std::span<const double> axis, Rng& rng) const;
  double cap_angle() const { return cap_; }

 private:
  double polar_angle(double u) const;

  int dim_;
  double cap_;
  std::vector<double> grid_;
  std::vector<double> cdf_;
};

class SyntheticTeacher {
 public:
  explicit SyntheticTeacher(SyntheticTeacherSpec spec);

  const SyntheticTeacherSpec& spec() const { return spec_; }

  /// Direct evaluation. Fixed-resolution teachers reject any other size.
  TeacherOutput forward(const Image& image) const;

  /// Evaluation on a view of arbitrary patch-aligned size: low-native
  /// teachers downsample views larger than native by an integer factor and
  /// upsample the features back. Not valid for fixed-resolution teachers.
  TeacherOutput forward_view(const Image& view) const;

  /// Content term f for an image, before the bias term.
  FeatureGrid semantic(const Image& image) const;

  /// Bias term g (unit amplitude) on a rows x cols frame.
  FeatureGrid bias_field(int rows, int cols) const;

  const std::vector<double>& direction() const { return direction_; }

  std::vector<double> summary_for(const Image& image) const;

 private:
  SyntheticTeacherSpec spec_;
  Mat projection_;  // 12 x channels; no offset, so a blank image maps to zero
  std::vector<double> bias_phase_row_;
  std::vector<double> bias_phase_col_;
  std::vector<double> bias_sign_;
  std::vector<double> ring_sign_;
  std::vector<double> direction_;
  ConeSampler cone_;
};

/// Convenience wrapper for a one-off evaluation.
TeacherOutput synth_forward(const SyntheticTeacherSpec& spec, const Image& image);

/// Crops the view with `shift` from `canvas` and evaluates the teacher on it.
TeacherOutput synth_forward(const SyntheticTeacher& teacher, const Image& canvas, const PatchGrid& view,
                            int max_shift, ShiftSample shift);

/// Packs the tiles into one native-size canvas according to `layout`, runs
/// the teacher once, and returns each tile's feature crop. Every tile
/// receives the canvas summary.
std::vector<TeacherOutput> fixedres_forward(const SyntheticTeacher& teacher, std::span<const Image> tiles,
                                            const MosaicLayout& layout);

/// Bilinear upsampling of the patch grid by an integer factor.
FeatureGrid upsample_features(const FeatureGrid& feat, int factor);

/// Dispersion measured by fit_summary_stats over `samples` cap draws.
double measure_cone_dispersion(int summary_dim, double cone_angle, int samples, std::uint64_t seed);

/// Bisection on the cap angle until the measured dispersion matches
/// `target`. Throws when the target exceeds what a cap below pi/2 reaches in
/// this dimension.
double calibrate_cone_angle(int summary_dim, double target, int samples, std::uint64_t seed);

}  // namespace agglo
