// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation and diagnostics over frozen features: kNN, closed-form ridge
// probe, fixed-pattern (position bias) estimation, PCA visualization, and
// the attention latency benchmark.

#pragma once

#include "agglo/student.hpp"
#include "agglo/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace agglo {

struct LabeledVector {
  std::vector<double> v;
  int label = 0;
};

double cosine_distance(std::span<const double> a, std::span<const double> b);

/// Majority label among the k nearest by cosine distance. Neighbour ties are
/// broken by index; vote ties by smaller mean distance, then smaller label.
int knn_classify(std::span<const LabeledVector> train, std::span<const double> query, int k);

double knn_accuracy(std::span<const LabeledVector> train, std::span<const LabeledVector> test, int k);

/// One-vs-all ridge regression on +-1 targets with an unregularized bias.
/// The penalty is lambda * n so that duplicating the data leaves the
/// solution unchanged.
struct RidgeModel {
  Mat weights;  // (dim + 1) x classes, bias in the last row
  int classes = 0;

  int predict(std::span<const double> x) const;
};

inline constexpr double kMinRidgeLambda = 1e-12;

RidgeModel fit_ridge(std::span<const LabeledVector> data, int classes, double lambda);

struct ProbeResult {
  double accuracy = 0.0;
  int train_size = 0;
  int test_size = 0;
};

struct LabeledSplit {
  std::vector<LabeledVector> train;
  std::vector<LabeledVector> test;
};

/// Seeded Fisher-Yates shuffle, then the first round(fraction * n) samples
/// (at least one, leaving at least one) go to train.
LabeledSplit split_labeled(std::span<const LabeledVector> data, double train_fraction, std::uint64_t seed);

/// split_labeled, ridge fit on train, accuracy on test.
ProbeResult linear_probe(std::span<const LabeledVector> data, double lambda, double train_fraction,
                         std::uint64_t seed);

struct FpnEstimate {
  FeatureGrid g_hat;  // per-position mean minus the global mean
  double energy = 0.0;
  int images = 0;
};

/// Mean over positions of the squared norm of g - mean_over_positions(g).
double field_energy(const FeatureGrid& g);

/// Streaming position-bias estimator.
class FpnAccumulator {
 public:
  void add(const FeatureGrid& feat);
  int count() const { return count_; }
  FpnEstimate finish() const;

 private:
  FeatureGrid sum_;
  int count_ = 0;
};

FpnEstimate fpn_estimate(std::span<const FeatureGrid> features);

struct PcaResult {
  std::vector<double> mean;
  Mat components;                  // keep x channels, rows are unit eigenvectors
  std::vector<double> variances;   // every eigenvalue, descending
  int rank = 0;                    // eigenvalues above the degeneracy threshold
};

/// Principal axes of the pooled patch vectors (population covariance). The
/// largest-magnitude loading of each component is made positive.
PcaResult fit_pca(std::span<const FeatureGrid> grids, int keep = 3);

/// positions x keep projections of mean-centered patch vectors.
Mat pca_project(const PcaResult& pca, const FeatureGrid& grid);
FeatureGrid pca_reconstruct(const PcaResult& pca, const Mat& projections, int rows, int cols);

/// One RGB image per grid, pixel (r, c) = the first three projections of
/// patch (r, c), min-max scaled per component across all grids. Components
/// past the rank are mid-gray. `scale` repeats each patch into a block.
std::vector<Image> pca_rgb(std::span<const FeatureGrid> grids, int scale = 1);

/// 8-bit binary PPM; values are clamped to [0, 1].
void write_ppm(const std::string& path, const Image& image);
std::string encode_ppm(const Image& image);

struct BenchRecord {
  std::string variant;
  int resolution = 0;
  std::string window;
  int warmup = 0;
  int trials = 0;
  double median_s = 0.0;
  std::uint64_t flops = 0;
  std::string note;  // skip reason; empty when measured

  bool skipped() const { return !note.empty(); }
};

/// Times full student forwards. For each (resolution, window) pair the
/// schedule is `base.schedule` with every windowed layer set to `window`
/// (0 selects all-global). Invalid pairs yield a skipped record.
std::vector<BenchRecord> bench_attention(const StudentConfig& base, const std::string& variant,
                                         std::span<const int> resolutions, std::span<const int> windows,
                                         int warmup, int trials, std::uint64_t seed);

/// Schedule used by bench_attention for a given window value.
std::vector<AttentionWindow> bench_schedule(const StudentConfig& base, int window);

void write_bench_header(std::ostream& os);
void write_bench_row(std::ostream& os, const BenchRecord& r);

void write_eval_header(std::ostream& os);
void write_eval_row(std::ostream& os, const std::string& task, const std::string& metric, double value,
                    std::uint64_t seed);

}  // namespace agglo
