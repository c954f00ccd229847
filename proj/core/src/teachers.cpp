// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#include "agglo/teachers.hpp"

#include "agglo/normstats.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

namespace agglo {

namespace {

constexpr int kStatCount = 4 * Image::kChannels;
constexpr int kCdfPoints = 4096;

// Per-patch statistics: mean, variance, mean |horizontal gradient| and mean
// |vertical gradient| for each colour channel. Gradients stay inside the
// patch, so the statistics depend only on the patch's own pixels.
void patch_stats(const Image& img, int r, int c, int patch, double* out) {
  const int y0 = r * patch, x0 = c * patch;
  const double n = static_cast<double>(patch * patch);
  for (int ch = 0; ch < Image::kChannels; ++ch) {
    double sum = 0.0, sq = 0.0, gx = 0.0, gy = 0.0;
    for (int y = 0; y < patch; ++y) {
      for (int x = 0; x < patch; ++x) {
        const double v = img.at(y0 + y, x0 + x, ch);
        sum += v;
        sq += v * v;
        if (x + 1 < patch) gx += std::abs(img.at(y0 + y, x0 + x + 1, ch) - v);
        if (y + 1 < patch) gy += std::abs(img.at(y0 + y + 1, x0 + x, ch) - v);
      }
    }
    const double mean = sum / n;
    const double pairs = patch > 1 ? static_cast<double>(patch * (patch - 1)) : 1.0;
    out[4 * ch + 0] = mean;
    out[4 * ch + 1] = std::max(0.0, sq / n - mean * mean);
    out[4 * ch + 2] = gx / pairs;
    out[4 * ch + 3] = gy / pairs;
  }
}

std::uint64_t image_hash(const Image& img) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ static_cast<std::uint64_t>(img.height) << 32 ^
                    static_cast<std::uint64_t>(img.width);
  for (double p : img.pixels) {
    h ^= std::bit_cast<std::uint64_t>(p);
    h *= 0x100000001b3ULL;
    h ^= h >> 29;
  }
  return h;
}

std::vector<double> random_unit(int dim, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  double n = 0.0;
  do {
    n = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      n += x * x;
    }
  } while (n < 1e-12);
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

}  // namespace

const char* native_kind_name(NativeKind kind) {
  switch (kind) {
    case NativeKind::variable: return "variable";
    case NativeKind::fixed: return "fixed";
    case NativeKind::low: return "low";
  }
  return "?";
}

NativeKind parse_native_kind(const std::string& s) {
  if (s == "variable") return NativeKind::variable;
  if (s == "fixed") return NativeKind::fixed;
  if (s == "low") return NativeKind::low;
  throw std::invalid_argument("unknown native kind '" + s + "' (expected variable, fixed or low)");
}

void SyntheticTeacherSpec::validate() const {
  if (channels < 1) throw std::invalid_argument("teacher " + name + ": channels must be >= 1");
  if (summary_dim < 2) throw std::invalid_argument("teacher " + name + ": summary_dim must be >= 2");
  if (patch < 1) throw std::invalid_argument("teacher " + name + ": patch must be >= 1");
  if (bias_amplitude < 0.0) throw std::invalid_argument("teacher " + name + ": bias_amplitude must be >= 0");
  if (!(bias_period > 0.0)) throw std::invalid_argument("teacher " + name + ": bias_period must be > 0");
  if (!(cone_angle >= 0.0 && cone_angle < std::numbers::pi / 2)) {
    throw std::invalid_argument("teacher " + name + ": cone_angle must lie in [0, pi/2)");
  }
  if (native != NativeKind::variable) {
    if (native_pixels < patch || native_pixels % patch != 0) {
      throw std::invalid_argument("teacher " + name + ": native_pixels must be a positive multiple of patch");
    }
  }
}

ConeSampler::ConeSampler(int dim, double cap_angle) : dim_(dim), cap_(cap_angle) {
  if (dim < 2) throw std::invalid_argument("cone sampler: dim must be >= 2");
  if (!(cap_angle >= 0.0 && cap_angle < std::numbers::pi / 2)) {
    throw std::invalid_argument("cone sampler: cap angle must lie in [0, pi/2)");
  }
  if (cap_ == 0.0) return;
  grid_.resize(kCdfPoints + 1);
  cdf_.resize(kCdfPoints + 1);
  const double power = dim_ - 2;
  const double log_sin_cap = std::log(std::sin(cap_));
  auto density = [&](double theta) {
    if (power == 0.0) return 1.0;
    if (theta <= 0.0) return 0.0;
    return std::exp(power * (std::log(std::sin(theta)) - log_sin_cap));
  };
  cdf_[0] = 0.0;
  grid_[0] = 0.0;
  double prev = density(0.0);
  for (int i = 1; i <= kCdfPoints; ++i) {
    grid_[static_cast<std::size_t>(i)] = cap_ * i / kCdfPoints;
    const double cur = density(grid_[static_cast<std::size_t>(i)]);
    cdf_[static_cast<std::size_t>(i)] = cdf_[static_cast<std::size_t>(i - 1)] + 0.5 * (prev + cur) * (cap_ / kCdfPoints);
    prev = cur;
  }
  const double total = cdf_.back();
  for (auto& v : cdf_) v /= total;
}

double ConeSampler::polar_angle(double u) const {
  if (cap_ == 0.0) return 0.0;
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  if (it == cdf_.begin()) return 0.0;
  if (it == cdf_.end()) return cap_;
  const auto i = static_cast<std::size_t>(it - cdf_.begin());
  const double c0 = cdf_[i - 1], c1 = cdf_[i];
  const double t = c1 > c0 ? (u - c0) / (c1 - c0) : 0.0;
  return grid_[i - 1] + t * (grid_[i] - grid_[i - 1]);
}

std::vector<double> ConeSampler::sample(std::span<const double> axis, Rng& rng) const {
  if (static_cast<int>(axis.size()) != dim_) throw ShapeError("cone sampler: axis dimension mismatch");
  const double theta = polar_angle(rng.uniform());
  // Tangent: Gaussian vector with the axis component removed.
  std::vector<double> t(axis.size());
  double dot = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = rng.normal();
    dot += t[i] * axis[i];
  }
  double n = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] -= dot * axis[i];
    n += t[i] * t[i];
  }
  n = std::sqrt(n);
  std::vector<double> y(axis.size());
  const double cs = std::cos(theta), sn = std::sin(theta);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = cs * axis[i] + (n > 0.0 ? sn * t[i] / n : 0.0);
  return y;
}

namespace {
const SyntheticTeacherSpec& validated(const SyntheticTeacherSpec& spec) {
  spec.validate();
  return spec;
}
}  // namespace

SyntheticTeacher::SyntheticTeacher(SyntheticTeacherSpec spec)
    : spec_(validated(spec)), cone_(spec_.summary_dim, spec_.cone_angle) {
  Rng rng(derive_seed(spec_.semantic_seed, "teacher"));
  const int c = spec_.channels;
  projection_.resize(kStatCount, c);
  for (Eigen::Index i = 0; i < projection_.size(); ++i) projection_.data()[i] = rng.normal();
  bias_phase_row_.resize(static_cast<std::size_t>(c));
  bias_phase_col_.resize(static_cast<std::size_t>(c));
  bias_sign_.resize(static_cast<std::size_t>(c));
  ring_sign_.resize(static_cast<std::size_t>(c));
  for (int k = 0; k < c; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    bias_phase_row_[kk] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    bias_phase_col_[kk] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    bias_sign_[kk] = rng.uniform() < 0.5 ? -1.0 : 1.0;
    ring_sign_[kk] = rng.uniform() < 0.5 ? -1.0 : 1.0;
  }
  direction_ = random_unit(spec_.summary_dim, rng);
}

FeatureGrid SyntheticTeacher::semantic(const Image& image) const {
  const int p = spec_.patch;
  if (image.height % p != 0 || image.width % p != 0 || image.height < p || image.width < p) {
    throw DivisibilityError("teacher " + spec_.name + ": patch " + std::to_string(p) + " does not divide image " +
                            std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  const int rows = image.height / p, cols = image.width / p;
  Mat stats(rows * cols, kStatCount);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) patch_stats(image, r, c, p, stats.row(r * cols + c).data());
  }
  return FeatureGrid::from_matrix(rows, cols, stats * projection_);
}

FeatureGrid SyntheticTeacher::bias_field(int rows, int cols) const {
  FeatureGrid g(rows, cols, spec_.channels);
  const double w = 2.0 * std::numbers::pi / spec_.bias_period;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const bool border = r == 0 || c == 0 || r == rows - 1 || c == cols - 1;
      auto v = g.vec(r, c);
      for (int k = 0; k < spec_.channels; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        double val = bias_sign_[kk] * std::sin(w * r + bias_phase_row_[kk]) * std::cos(w * c + bias_phase_col_[kk]);
        if (border) val += spec_.ring_amplitude * ring_sign_[kk];
        v[k] = val;
      }
    }
  }
  return g;
}

std::vector<double> SyntheticTeacher::summary_for(const Image& image) const {
  Rng rng(derive_seed(spec_.semantic_seed, image_hash(image)));
  return cone_.sample(direction_, rng);
}

TeacherOutput SyntheticTeacher::forward(const Image& image) const {
  if (spec_.native == NativeKind::fixed &&
      (image.height != spec_.native_pixels || image.width != spec_.native_pixels)) {
    throw ShapeError("teacher " + spec_.name + " only accepts " + std::to_string(spec_.native_pixels) + "x" +
                     std::to_string(spec_.native_pixels) + " inputs, got " + std::to_string(image.height) + "x" +
                     std::to_string(image.width));
  }
  TeacherOutput out;
  out.features = semantic(image);
  if (spec_.bias_amplitude > 0.0) {
    const FeatureGrid g = bias_field(out.features.rows, out.features.cols);
    for (std::size_t i = 0; i < g.values.size(); ++i) out.features.values[i] += spec_.bias_amplitude * g.values[i];
  }
  out.summary = summary_for(image);
  return out;
}

TeacherOutput SyntheticTeacher::forward_view(const Image& view) const {
  switch (spec_.native) {
    case NativeKind::variable:
      return forward(view);
    case NativeKind::fixed:
      throw std::logic_error("teacher " + spec_.name + " is fixed-resolution; use fixedres_forward");
    case NativeKind::low: {
      const int n = spec_.native_pixels;
      if (view.height <= n && view.width <= n) return forward(view);
      if (view.height % n != 0 || view.width != view.height) {
        throw DivisibilityError("teacher " + spec_.name + ": native " + std::to_string(n) +
                                " does not divide view " + std::to_string(view.height));
      }
      const int factor = view.height / n;
      TeacherOutput out = forward(view.downsample(factor));
      out.features = upsample_features(out.features, factor);
      return out;
    }
  }
  throw std::logic_error("unreachable");
}

TeacherOutput synth_forward(const SyntheticTeacherSpec& spec, const Image& image) {
  return SyntheticTeacher(spec).forward(image);
}

TeacherOutput synth_forward(const SyntheticTeacher& teacher, const Image& canvas, const PatchGrid& view,
                            int max_shift, ShiftSample shift) {
  return teacher.forward(view_of_canvas(canvas, view, max_shift, shift));
}

std::vector<TeacherOutput> fixedres_forward(const SyntheticTeacher& teacher, std::span<const Image> tiles,
                                            const MosaicLayout& layout) {
  layout.validate();
  if (tiles.size() != layout.tiles.size()) throw ShapeError("fixedres_forward: tile count does not match layout");
  const int p = layout.canvas.patch;
  if (p != teacher.spec().patch) throw ShapeError("fixedres_forward: layout patch differs from teacher patch");
  Image canvas(layout.canvas.pixel_height(), layout.canvas.pixel_width());
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const Rect& r = layout.tiles[i].rect;
    if (tiles[i].height != r.rows * p || tiles[i].width != r.cols * p) {
      throw ShapeError("fixedres_forward: tile " + std::to_string(i) + " size does not match its rectangle");
    }
    canvas.paste(tiles[i], r.row0 * p, r.col0 * p);
  }
  const TeacherOutput full = teacher.forward(canvas);
  std::vector<TeacherOutput> out;
  out.reserve(tiles.size());
  for (const auto& tile : layout.tiles) {
    const Rect& r = tile.rect;
    TeacherOutput t;
    t.summary = full.summary;
    t.features = FeatureGrid(r.rows, r.cols, full.features.channels);
    for (int i = 0; i < r.rows; ++i) {
      for (int j = 0; j < r.cols; ++j) {
        const auto src = full.features.vec(r.row0 + i, r.col0 + j);
        std::copy(src.begin(), src.end(), t.features.vec(i, j).begin());
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

FeatureGrid upsample_features(const FeatureGrid& feat, int factor) {
  if (factor < 1) throw std::invalid_argument("upsample factor must be >= 1");
  return resize_bilinear(feat, feat.rows * factor, feat.cols * factor);
}

double measure_cone_dispersion(int summary_dim, double cone_angle, int samples, std::uint64_t seed) {
  const ConeSampler sampler(summary_dim, cone_angle);
  Rng axis_rng(derive_seed(seed, "axis"));
  const auto axis = random_unit(summary_dim, axis_rng);
  Rng rng(derive_seed(seed, "draws"));
  std::vector<std::vector<double>> draws;
  draws.reserve(static_cast<std::size_t>(samples));
  for (int i = 0; i < samples; ++i) draws.push_back(sampler.sample(axis, rng));
  return fit_summary_stats(draws).dispersion;
}

double calibrate_cone_angle(int summary_dim, double target, int samples, std::uint64_t seed) {
  if (!(target > 0.0)) throw std::invalid_argument("calibrate_cone_angle: target must be > 0");
  double lo = 0.0, hi = std::numbers::pi / 2 - 1e-6;
  const double reach = measure_cone_dispersion(summary_dim, hi, samples, seed);
  if (reach < target) {
    throw std::invalid_argument("calibrate_cone_angle: dispersion " + std::to_string(target) +
                                " is unreachable with summary_dim " + std::to_string(summary_dim) +
                                " (max " + std::to_string(reach) + "); increase summary_dim");
  }
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (measure_cone_dispersion(summary_dim, mid, samples, seed) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace agglo
