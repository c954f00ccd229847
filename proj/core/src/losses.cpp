// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#include "agglo/losses.hpp"

#include "agglo/normstats.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

namespace agglo {

namespace {

void check_pair(const FeatureGrid& x, const FeatureGrid& y, const CropMap& map, const char* what) {
  if (map.empty()) throw ShapeError(std::string(what) + ": empty overlap");
  if (x.channels != y.channels) {
    throw ShapeError(std::string(what) + ": channel mismatch " + shape_string(x) + " vs " + shape_string(y));
  }
  if (x.rows != map.grid.rows || x.cols != map.grid.cols || y.rows != map.grid.rows ||
      y.cols != map.grid.cols) {
    throw ShapeError(std::string(what) + ": grid does not match crop map");
  }
}

// Shared reduction: mean squared difference over overlap positions and
// channels, with gradient routed back to the source view.
GridLoss masked_mse(const FeatureGrid& x, const FeatureGrid& y, const CropMap& map) {
  const Rect& o = map.overlap;
  GridLoss out;
  out.grad = FeatureGrid(x.rows, x.cols, x.channels);
  out.omega = o.area();
  const double norm = 1.0 / (static_cast<double>(out.omega) * x.channels);
  double acc = 0.0;
  for (int i = 0; i < o.rows; ++i) {
    for (int j = 0; j < o.cols; ++j) {
      const int vr = o.row0 + i, vc = o.col0 + j;
      const int ur = map.src_row(vr), uc = map.src_col(vc);
      const auto xv = x.vec(ur, uc);
      const auto yv = y.vec(vr, vc);
      auto gv = out.grad.vec(ur, uc);
      for (int k = 0; k < x.channels; ++k) {
        const double d = xv[k] - yv[k];
        acc += d * d;
        gv[k] = 2.0 * d * norm;
      }
    }
  }
  out.value = acc * norm;
  return out;
}

FeatureGrid ln_grid(const FeatureGrid& g) {
  FeatureGrid out(g.rows, g.cols, g.channels);
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      const auto n = ln_noaffine(g.vec(r, c));
      std::copy(n.begin(), n.end(), out.vec(r, c).begin());
    }
  }
  return out;
}

struct CosineParts {
  double cosine;
  double nx;
  double ny;
};

CosineParts cosine_parts(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("summary loss: dimension mismatch");
  double dot = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    xx += x[i] * x[i];
    yy += y[i] * y[i];
  }
  const double nx = std::sqrt(xx), ny = std::sqrt(yy);
  if (nx <= kMinMeanNorm || ny <= kMinMeanNorm) throw std::invalid_argument("summary loss: zero-norm input");
  return {dot / (nx * ny), nx, ny};
}

// d cos(x, y) / dx
std::vector<double> cosine_grad(std::span<const double> x, std::span<const double> y, const CosineParts& p) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    g[i] = y[i] / (p.nx * p.ny) - p.cosine * x[i] / (p.nx * p.nx);
  }
  return g;
}

}  // namespace

GridLoss spatial_loss(const FeatureGrid& x, const FeatureGrid& y_hat, const CropMap& map) {
  check_pair(x, y_hat, map, "spatial_loss");
  return masked_mse(x, y_hat, map);
}

GridLoss mesa_loss(const FeatureGrid& x, const FeatureGrid& x_tilde, const CropMap& map) {
  check_pair(x, x_tilde, map, "mesa_loss");
  const FeatureGrid xn = ln_grid(x);
  const FeatureGrid tn = ln_grid(x_tilde);
  GridLoss out = masked_mse(xn, tn, map);
  const Rect& o = map.overlap;
  for (int i = 0; i < o.rows; ++i) {
    for (int j = 0; j < o.cols; ++j) {
      const int ur = map.src_row(o.row0 + i), uc = map.src_col(o.col0 + j);
      auto gv = out.grad.vec(ur, uc);
      const auto back = ln_noaffine_backward(x.vec(ur, uc), gv);
      std::copy(back.begin(), back.end(), gv.begin());
    }
  }
  return out;
}

VectorLoss summary_loss(std::span<const double> x, std::span<const double> y, double dispersion) {
  if (!(dispersion > 0.0)) throw std::invalid_argument("summary_loss: dispersion must be > 0");
  const CosineParts p = cosine_parts(x, y);
  const double c = std::clamp(p.cosine, -1.0 + kCosineClamp, 1.0 - kCosineClamp);
  const double theta = std::acos(c);
  VectorLoss out;
  out.value = theta * theta / dispersion;
  // d(theta^2)/dcos = -2 theta / sin(theta); finite at the clamp.
  const double scale = -2.0 * theta / std::sqrt(1.0 - c * c) / dispersion;
  out.grad = cosine_grad(x, y, p);
  for (auto& g : out.grad) g *= scale;
  return out;
}

VectorLoss cosine_summary_loss(std::span<const double> x, std::span<const double> y) {
  const CosineParts p = cosine_parts(x, y);
  VectorLoss out;
  out.value = 1.0 - p.cosine;
  out.grad = cosine_grad(x, y, p);
  for (auto& g : out.grad) g = -g;
  return out;
}

const char* term_kind_name(TermKind kind) {
  switch (kind) {
    case TermKind::spatial: return "spatial";
    case TermKind::summary: return "summary";
    case TermKind::mesa: return "mesa";
  }
  return "?";
}

void LossWeights::validate() const {
  bool any = mesa > 0.0;
  if (mesa < 0.0) throw std::invalid_argument("loss weights: mesa weight must be >= 0");
  for (const auto& t : teachers) {
    if (t.spatial < 0.0 || t.summary < 0.0) throw std::invalid_argument("loss weights: teacher weights must be >= 0");
    any = any || t.spatial > 0.0 || t.summary > 0.0;
  }
  if (!any) throw std::invalid_argument("loss weights: at least one weight must be > 0");
}

double LossWeights::weight(TermKind kind, int teacher) const {
  if (kind == TermKind::mesa) return mesa;
  if (teacher < 0 || teacher >= static_cast<int>(teachers.size())) {
    throw std::out_of_range("loss weights: no weights for teacher " + std::to_string(teacher));
  }
  const auto& t = teachers[static_cast<std::size_t>(teacher)];
  return kind == TermKind::spatial ? t.spatial : t.summary;
}

const LossTerm* LossReport::find(TermKind kind, int teacher) const {
  for (const auto& t : terms) {
    if (t.kind == kind && t.teacher == teacher) return &t;
  }
  return nullptr;
}

double aggregate(std::span<const LossTerm> terms, const LossWeights& weights) {
  double total = 0.0;
  bool any = false;
  for (const auto& t : terms) {
    if (t.skipped) continue;
    any = true;
    total += weights.weight(t.kind, t.teacher) * t.value;
  }
  if (!any) throw std::runtime_error("aggregate: every loss term was skipped");
  return total;
}

void write_log_header(std::ostream& os) { os << "step,term,value,omega,resolution\n"; }

void write_log_rows(std::ostream& os, long step, int resolution, const LossReport& report) {
  const auto flags = os.flags();
  const auto prec = os.precision();
  os << std::setprecision(17);
  for (const auto& t : report.terms) {
    os << step << ',' << t.label << ',';
    if (t.skipped) {
      os << "skipped";
    } else {
      os << t.value;
    }
    os << ',' << t.omega << ',' << resolution << '\n';
  }
  os << step << ",total," << report.total << ",0," << resolution << '\n';
  os.flags(flags);
  os.precision(prec);
}

}  // namespace agglo
