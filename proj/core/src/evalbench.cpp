// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#include "agglo/evalbench.hpp"

#include "agglo/images.hpp"
#include "agglo/params.hpp"
#include "agglo/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>

namespace agglo {

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_distance: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(na * nb);
  return denom > 0.0 ? 1.0 - dot / denom : 1.0;
}

int knn_classify(std::span<const LabeledVector> train, std::span<const double> query, int k) {
  if (train.empty()) throw std::invalid_argument("knn_classify: empty training set");
  if (k < 1 || k > static_cast<int>(train.size())) {
    throw std::invalid_argument("knn_classify: k must lie in [1, " + std::to_string(train.size()) + "]");
  }
  std::vector<std::pair<double, std::size_t>> d(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) d[i] = {cosine_distance(train[i].v, query), i};
  std::partial_sort(d.begin(), d.begin() + k, d.end());
  std::map<int, std::pair<int, double>> votes;  // label -> (count, distance sum)
  for (int i = 0; i < k; ++i) {
    auto& v = votes[train[d[static_cast<std::size_t>(i)].second].label];
    v.first += 1;
    v.second += d[static_cast<std::size_t>(i)].first;
  }
  int best = 0, best_count = -1;
  double best_mean = 0.0;
  for (const auto& [label, v] : votes) {  // ascending label order
    const double mean = v.second / v.first;
    if (v.first > best_count || (v.first == best_count && mean < best_mean)) {
      best = label;
      best_count = v.first;
      best_mean = mean;
    }
  }
  return best;
}

double knn_accuracy(std::span<const LabeledVector> train, std::span<const LabeledVector> test, int k) {
  if (test.empty()) throw std::invalid_argument("knn_accuracy: empty test set");
  int hits = 0;
  for (const auto& q : test) hits += knn_classify(train, q.v, k) == q.label;
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

int RidgeModel::predict(std::span<const double> x) const {
  if (static_cast<Eigen::Index>(x.size()) + 1 != weights.rows()) throw ShapeError("ridge predict: dimension mismatch");
  int best = 0;
  double best_score = -HUGE_VAL;
  for (int c = 0; c < classes; ++c) {
    double s = weights(static_cast<Eigen::Index>(x.size()), c);
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * weights(static_cast<Eigen::Index>(i), c);
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return best;
}

RidgeModel fit_ridge(std::span<const LabeledVector> data, int classes, double lambda) {
  if (data.empty()) throw std::invalid_argument("fit_ridge: no samples");
  if (classes < 2) throw std::invalid_argument("fit_ridge: need at least 2 classes");
  lambda = std::max(lambda, kMinRidgeLambda);
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto d = static_cast<Eigen::Index>(data.front().v.size());
  Mat X(n, d + 1);
  Mat Y = Mat::Constant(n, classes, -1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = data[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(s.v.size()) != d) throw ShapeError("fit_ridge: ragged feature vectors");
    if (s.label < 0 || s.label >= classes) throw std::invalid_argument("fit_ridge: label out of range");
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = s.v[static_cast<std::size_t>(j)];
    X(i, d) = 1.0;
    Y(i, s.label) = 1.0;
  }
  Eigen::MatrixXd A = X.transpose() * X;
  for (Eigen::Index j = 0; j < d; ++j) A(j, j) += lambda * static_cast<double>(n);
  // A tiny bias penalty keeps the system definite when every sample is identical.
  A(d, d) += kMinRidgeLambda * static_cast<double>(n);
  const Eigen::MatrixXd rhs = X.transpose() * Y;
  RidgeModel m;
  m.classes = classes;
  m.weights = Eigen::LDLT<Eigen::MatrixXd>(A).solve(rhs);
  return m;
}

LabeledSplit split_labeled(std::span<const LabeledVector> data, double train_fraction, std::uint64_t seed) {
  if (data.size() < 2) throw std::invalid_argument("split_labeled: need at least 2 samples");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
  }
  auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(data.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, data.size() - 1);
  LabeledSplit split;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_train ? split.train : split.test).push_back(data[order[i]]);
  return split;
}

ProbeResult linear_probe(std::span<const LabeledVector> data, double lambda, double train_fraction,
                         std::uint64_t seed) {
  int classes = 0;
  for (const auto& s : data) classes = std::max(classes, s.label + 1);
  if (classes < 2) throw std::invalid_argument("linear_probe: need at least 2 classes");
  const LabeledSplit split = split_labeled(data, train_fraction, seed);
  const RidgeModel m = fit_ridge(split.train, classes, lambda);
  int hits = 0;
  for (const auto& s : split.test) hits += m.predict(s.v) == s.label;
  return {static_cast<double>(hits) / static_cast<double>(split.test.size()), static_cast<int>(split.train.size()),
          static_cast<int>(split.test.size())};
}

double field_energy(const FeatureGrid& g) {
  if (g.positions() == 0) return 0.0;
  const ConstMatMap m = g.matrix();
  const Eigen::RowVectorXd mean = m.colwise().mean();
  return (m.rowwise() - mean).squaredNorm() / static_cast<double>(g.positions());
}

void FpnAccumulator::add(const FeatureGrid& feat) {
  if (count_ == 0) {
    sum_ = FeatureGrid(feat.rows, feat.cols, feat.channels);
  } else if (!feat.same_shape(sum_)) {
    throw ShapeError("fpn_estimate: grid " + shape_string(feat) + " differs from " + shape_string(sum_));
  }
  for (std::size_t i = 0; i < feat.values.size(); ++i) sum_.values[i] += feat.values[i];
  ++count_;
}

FpnEstimate FpnAccumulator::finish() const {
  if (count_ < 2) throw std::invalid_argument("fpn_estimate: need at least 2 images");
  FpnEstimate e;
  e.images = count_;
  e.g_hat = sum_;
  MatMap m = e.g_hat.matrix();
  m /= static_cast<double>(count_);
  const Eigen::RowVectorXd mean = m.colwise().mean();
  m.rowwise() -= mean;
  e.energy = m.squaredNorm() / static_cast<double>(e.g_hat.positions());
  return e;
}

FpnEstimate fpn_estimate(std::span<const FeatureGrid> features) {
  FpnAccumulator acc;
  for (const auto& f : features) acc.add(f);
  return acc.finish();
}

PcaResult fit_pca(std::span<const FeatureGrid> grids, int keep) {
  if (grids.empty()) throw std::invalid_argument("fit_pca: no grids");
  const int c = grids.front().channels;
  if (c < keep) throw std::invalid_argument("fit_pca: need at least " + std::to_string(keep) + " channels");
  std::size_t n = 0;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(c);
  for (const auto& g : grids) {
    if (g.channels != c) throw ShapeError("fit_pca: channel count differs across grids");
    sum += g.matrix().colwise().sum().transpose();
    n += static_cast<std::size_t>(g.positions());
  }
  if (n < static_cast<std::size_t>(keep)) throw std::invalid_argument("fit_pca: too few patch vectors");
  const Eigen::VectorXd mean = sum / static_cast<double>(n);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(c, c);
  for (const auto& g : grids) {
    const Mat centered = g.matrix().rowwise() - mean.transpose();
    cov.noalias() += centered.transpose() * centered;
  }
  cov /= static_cast<double>(n);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  PcaResult r;
  r.mean.assign(mean.data(), mean.data() + c);
  const Eigen::VectorXd& ev = es.eigenvalues();  // ascending
  for (int i = c - 1; i >= 0; --i) r.variances.push_back(std::max(0.0, ev(i)));
  const double threshold = 1e-12 * std::max(r.variances.front(), 1e-300);
  r.rank = static_cast<int>(std::count_if(r.variances.begin(), r.variances.end(),
                                          [&](double v) { return v > threshold; }));
  r.components.resize(keep, c);
  for (int j = 0; j < keep; ++j) {
    Eigen::VectorXd v = es.eigenvectors().col(c - 1 - j);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    r.components.row(j) = v.transpose();
  }
  return r;
}

Mat pca_project(const PcaResult& pca, const FeatureGrid& grid) {
  const Eigen::Map<const Eigen::RowVectorXd> mean(pca.mean.data(), static_cast<Eigen::Index>(pca.mean.size()));
  return (grid.matrix().rowwise() - mean) * pca.components.transpose();
}

FeatureGrid pca_reconstruct(const PcaResult& pca, const Mat& projections, int rows, int cols) {
  const Eigen::Map<const Eigen::RowVectorXd> mean(pca.mean.data(), static_cast<Eigen::Index>(pca.mean.size()));
  Mat m = projections * pca.components;
  m.rowwise() += mean;
  return FeatureGrid::from_matrix(rows, cols, m);
}

std::vector<Image> pca_rgb(std::span<const FeatureGrid> grids, int scale) {
  if (scale < 1) throw std::invalid_argument("pca_rgb: scale must be >= 1");
  const PcaResult pca = fit_pca(grids, 3);
  std::vector<Mat> proj;
  double lo[3] = {HUGE_VAL, HUGE_VAL, HUGE_VAL}, hi[3] = {-HUGE_VAL, -HUGE_VAL, -HUGE_VAL};
  for (const auto& g : grids) {
    proj.push_back(pca_project(pca, g));
    for (int j = 0; j < 3; ++j) {
      lo[j] = std::min(lo[j], proj.back().col(j).minCoeff());
      hi[j] = std::max(hi[j], proj.back().col(j).maxCoeff());
    }
  }
  std::vector<Image> out;
  for (std::size_t i = 0; i < grids.size(); ++i) {
    const auto& g = grids[i];
    Image img(g.rows * scale, g.cols * scale);
    for (int r = 0; r < g.rows; ++r) {
      for (int c = 0; c < g.cols; ++c) {
        for (int j = 0; j < 3; ++j) {
          double v = 0.5;
          if (j < pca.rank && hi[j] > lo[j]) v = (proj[i](r * g.cols + c, j) - lo[j]) / (hi[j] - lo[j]);
          for (int y = 0; y < scale; ++y) {
            for (int x = 0; x < scale; ++x) img.at(r * scale + y, c * scale + x, j) = v;
          }
        }
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

std::string encode_ppm(const Image& image) {
  std::string s = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  s.reserve(s.size() + image.pixels.size());
  for (double v : image.pixels) s.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  return s;
}

void write_ppm(const std::string& path, const Image& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  const std::string bytes = encode_ppm(image);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<AttentionWindow> bench_schedule(const StudentConfig& base, int window) {
  std::vector<AttentionWindow> s = base.schedule;
  for (auto& w : s) {
    if (window == 0) {
      w = AttentionWindow::global();
    } else if (!w.is_global()) {
      w = AttentionWindow::window(window);
    }
  }
  return s;
}

std::vector<BenchRecord> bench_attention(const StudentConfig& base, const std::string& variant,
                                         std::span<const int> resolutions, std::span<const int> windows,
                                         int warmup, int trials, std::uint64_t seed) {
  if (warmup < 2) throw std::invalid_argument("bench_attention: warmup must be >= 2");
  if (trials < 5) throw std::invalid_argument("bench_attention: trials must be >= 5");
  ParamLayout layout;
  const Student student(base, layout);
  std::vector<double> params(layout.total_size());
  Rng init(derive_seed(seed, "bench.init"));
  layout.initialize(params, init);

  std::vector<BenchRecord> out;
  for (int res : resolutions) {
    Rng img_rng(derive_seed(seed, static_cast<std::uint64_t>(res)));
    const Image image = make_random_image(res, res, img_rng);
    for (int window : windows) {
      BenchRecord rec;
      rec.variant = variant;
      rec.resolution = res;
      rec.window = window == 0 ? "global" : std::to_string(window);
      rec.warmup = warmup;
      rec.trials = trials;
      const auto schedule = bench_schedule(base, window);
      try {
        StudentConfig cfg = base;
        cfg.schedule = schedule;
        cfg.validate();
        cfg.check_resolution(res, res);
      } catch (const DivisibilityError& e) {
        rec.note = std::string("divisibility: ") + e.what();
        out.push_back(rec);
        continue;
      } catch (const std::exception& e) {
        rec.note = std::string("invalid: ") + e.what();
        out.push_back(rec);
        continue;
      }
      rec.flops = attention_flops(PatchGrid::for_resolution(res, base.patch), schedule, base.dim);
      double sink = 0.0;
      for (int i = 0; i < warmup; ++i) sink += student.forward(params, image, schedule).summary[0];
      std::vector<double> times;
      for (int i = 0; i < trials; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        sink += student.forward(params, image, schedule).summary[0];
        times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      }
      std::sort(times.begin(), times.end());
      const std::size_t m = times.size() / 2;
      rec.median_s = times.size() % 2 ? times[m] : 0.5 * (times[m - 1] + times[m]);
      if (!std::isfinite(sink)) rec.note = "non-finite output";
      out.push_back(rec);
    }
  }
  return out;
}

void write_bench_header(std::ostream& os) { os << "variant,resolution,window,warmup,trials,median_s,flops,note\n"; }

void write_bench_row(std::ostream& os, const BenchRecord& r) {
  os << r.variant << ',' << r.resolution << ',' << r.window << ',' << r.warmup << ',' << r.trials << ',';
  if (r.skipped()) {
    os << ",,";
  } else {
    os << std::setprecision(9) << r.median_s << ',' << r.flops << ',';
  }
  std::string note = r.note;
  std::replace(note.begin(), note.end(), ',', ';');
  os << note << '\n';
}

void write_eval_header(std::ostream& os) { os << "task,metric,value,seed\n"; }

void write_eval_row(std::ostream& os, const std::string& task, const std::string& metric, double value,
                    std::uint64_t seed) {
  os << task << ',' << metric << ',' << std::setprecision(17) << value << ',' << seed << '\n';
}

}  // namespace agglo
