// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#include "agglo/params.hpp"

#include <cmath>

namespace agglo {

int ParamLayout::add(std::string name, int rows, int cols, ParamKind kind) {
  if (rows < 1 || cols < 1) throw ShapeError("parameter " + name + " has an empty shape");
  if (find(name) >= 0) throw std::invalid_argument("duplicate parameter " + name);
  ParamEntry e{std::move(name), rows, cols, kind, total_};
  total_ += e.size();
  entries_.push_back(std::move(e));
  return static_cast<int>(entries_.size()) - 1;
}

int ParamLayout::find(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

void ParamLayout::initialize(std::span<double> values, Rng& rng) const {
  if (values.size() != total_) throw ShapeError("initialize: value vector has wrong size");
  for (const auto& e : entries_) {
    auto slice = values.subspan(e.offset, e.size());
    switch (e.kind) {
      case ParamKind::weight: {
        // Weights are stored (fan_in x fan_out).
        const double std = 1.0 / std::sqrt(static_cast<double>(e.rows));
        for (auto& v : slice) v = rng.normal() * std;
        break;
      }
      case ParamKind::embedding:
        for (auto& v : slice) v = rng.normal() * 0.02;
        break;
      case ParamKind::norm_gain:
        for (auto& v : slice) v = 1.0;
        break;
      case ParamKind::bias:
      case ParamKind::norm_bias:
        for (auto& v : slice) v = 0.0;
        break;
    }
  }
}

std::vector<unsigned char> ParamLayout::weight_mask() const {
  std::vector<unsigned char> mask(total_, 0);
  for (const auto& e : entries_) {
    if (e.kind != ParamKind::weight) continue;
    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(e.offset), e.size(), 1);
  }
  return mask;
}

void ema_update(EmaState& ema, std::span<const double> params, double decay) {
  if (ema.shadow.size() != params.size()) {
    throw ShapeError("ema_update: shadow has " + std::to_string(ema.shadow.size()) +
                     " values, params have " + std::to_string(params.size()));
  }
  if (decay < 0.0 || decay > 1.0) throw std::invalid_argument("ema_update: decay must lie in [0, 1]");
  ema.decay = decay;
  const double keep = 1.0 - decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ema.shadow[i] = decay * ema.shadow[i] + keep * params[i];
  }
}

void DampRestore::restore(std::span<double> params) const {
  if (clean_.empty()) return;
  if (clean_.size() != params.size()) throw ShapeError("damp restore: size mismatch");
  std::copy(clean_.begin(), clean_.end(), params.begin());
}

DampRestore damp_perturb(std::span<double> params, std::span<const unsigned char> mask,
                         const DampConfig& cfg, Rng& rng) {
  if (cfg.sigma < 0.0) throw std::invalid_argument("damp: sigma must be >= 0");
  if (mask.size() != params.size()) throw ShapeError("damp: mask size mismatch");
  DampRestore handle(std::vector<double>(params.begin(), params.end()));
  if (!cfg.enabled || cfg.sigma == 0.0) return handle;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (mask[i]) params[i] *= 1.0 + cfg.sigma * rng.normal();
  }
  return handle;
}

void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state,
                const AdamWConfig& cfg, std::span<const unsigned char> decay_mask) {
  if (grads.size() != params.size() || decay_mask.size() != params.size()) {
    throw ShapeError("adamw: size mismatch");
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.steps;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.steps));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.steps));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    if (decay_mask[i]) params[i] -= cfg.lr * cfg.weight_decay * params[i];
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

}  // namespace agglo
