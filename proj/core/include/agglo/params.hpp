// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat parameter storage. Every trainable tensor is a named slice of one
// contiguous vector so that EMA, DAMP, the optimizer and checkpoints can
// treat the model as a single array.

#pragma once

#include "agglo/rng.hpp"
#include "agglo/tensor.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace agglo {

enum class ParamKind { weight, bias, norm_gain, norm_bias, embedding };

struct ParamEntry {
  std::string name;
  int rows = 0;
  int cols = 0;
  ParamKind kind = ParamKind::weight;
  std::size_t offset = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

class ParamLayout {
 public:
  int add(std::string name, int rows, int cols, ParamKind kind);

  const ParamEntry& entry(int id) const { return entries_.at(static_cast<std::size_t>(id)); }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::size_t total_size() const { return total_; }
  int find(const std::string& name) const;

  /// Fills `values` with the default initialization for each entry kind.
  void initialize(std::span<double> values, Rng& rng) const;

  /// Mask with 1 for linear weights (the DAMP and weight-decay scope).
  std::vector<unsigned char> weight_mask() const;

 private:
  std::vector<ParamEntry> entries_;
  std::size_t total_ = 0;
};

inline MatMap param_view(std::span<double> values, const ParamEntry& e) {
  return {values.data() + e.offset, e.rows, e.cols};
}
inline ConstMatMap param_view(std::span<const double> values, const ParamEntry& e) {
  return {values.data() + e.offset, e.rows, e.cols};
}

/// Exponential moving average of a parameter vector.
struct EmaState {
  std::vector<double> shadow;
  double decay = 0.999;
};

/// shadow <- decay * shadow + (1 - decay) * params.
void ema_update(EmaState& ema, std::span<const double> params, double decay);

struct DampConfig {
  double sigma = 0.05;
  bool enabled = true;
};

/// Saved clean weights; restoring is exact.
class DampRestore {
 public:
  DampRestore() = default;
  explicit DampRestore(std::vector<double> clean) : clean_(std::move(clean)) {}
  void restore(std::span<double> params) const;
  bool active() const { return !clean_.empty(); }

 private:
  std::vector<double> clean_;
};

/// Multiplies every masked weight by an independent Normal(1, sigma^2) draw.
DampRestore damp_perturb(std::span<double> params, std::span<const unsigned char> mask,
                         const DampConfig& cfg, Rng& rng);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  std::vector<double> m;
  std::vector<double> v;
  long steps = 0;
};

/// Decoupled weight decay is applied only where `decay_mask` is set.
void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state,
                const AdamWConfig& cfg, std::span<const unsigned char> decay_mask);

}  // namespace agglo
