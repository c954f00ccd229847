// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#include "agglo/trainer.hpp"

#include "agglo/images.hpp"

#include <algorithm>
#include <ostream>

namespace agglo {

namespace {

// Dense and summary adaptors are plain affine maps from the student width to
// each teacher's width.
Mat head_apply(ConstMatMap x, ConstMatMap w, ConstMatMap b) {
  Mat y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

void head_backward(ConstMatMap x, const Mat& dy, ConstMatMap w, MatMap gw, MatMap gb, MatMap dx) {
  gw.noalias() += x.transpose() * dy;
  add_column_sums(dy, gb);
  dx.noalias() += dy * w.transpose();
}

struct ViewPlan {
  Image canvas;
  ShiftSample student;
  ShiftSample ema;
  std::vector<ShiftSample> teacher;
  CropMap mesa_map;
  std::vector<CropMap> maps;
};

}  // namespace

int calibration_resolution(const SyntheticTeacherSpec& spec, int requested) {
  const int p = spec.patch;
  switch (spec.native) {
    case NativeKind::fixed:
      return spec.native_pixels;
    case NativeKind::low:
      requested = std::min(requested, spec.native_pixels);
      break;
    case NativeKind::variable:
      break;
  }
  return std::max(p, requested / p * p);
}

TeacherStats calibrate(const SyntheticTeacher& teacher, int samples, int resolution, std::uint64_t seed) {
  if (samples < 1) throw std::invalid_argument("calibrate: calibration set is empty");
  FeatureStatsAccumulator acc(teacher.spec().channels);
  std::vector<std::vector<double>> summaries;
  summaries.reserve(static_cast<std::size_t>(samples));
  for (int i = 0; i < samples; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const TeacherOutput out = teacher.forward(make_random_image(resolution, resolution, rng));
    acc.add(out.features);
    summaries.push_back(out.summary);
  }
  const SummaryStats ss = fit_summary_stats(summaries);
  TeacherStats st;
  st.channel_mean = acc.mean();
  st.channel_scale = acc.scale();
  st.mean_dir = ss.mean_dir;
  st.dispersion = std::max(ss.dispersion, kDispersionFloor);
  st.sample_count = static_cast<std::size_t>(samples);
  return st;
}

Image training_canvas(std::uint64_t data_seed, long step, int index, int side) {
  Rng rng(derive_seed(derive_seed(data_seed, static_cast<std::uint64_t>(step)), static_cast<std::uint64_t>(index)));
  return make_random_image(side, side, rng);
}

Trainer::Trainer(RunConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  student_ = std::make_unique<Student>(cfg_.student, layout_, "student");
  const SeedStreams seeds = cfg_.seeds();
  const int dim = cfg_.student.dim;
  for (const auto& t : cfg_.teachers) {
    const std::string base = "head." + t.spec.name;
    Head h;
    h.spatial_w = layout_.entry(layout_.add(base + ".spatial.w", dim, t.spec.channels, ParamKind::weight));
    h.spatial_b = layout_.entry(layout_.add(base + ".spatial.b", 1, t.spec.channels, ParamKind::bias));
    h.summary_w = layout_.entry(layout_.add(base + ".summary.w", dim, t.spec.summary_dim, ParamKind::weight));
    h.summary_b = layout_.entry(layout_.add(base + ".summary.b", 1, t.spec.summary_dim, ParamKind::bias));
    heads_.push_back(h);
    SyntheticTeacherSpec spec = t.spec;
    if (t.target_dispersion > 0.0) {
      spec.cone_angle = calibrate_cone_angle(spec.summary_dim, t.target_dispersion, cfg_.calib_samples,
                                             derive_seed(seeds.calib, "cone." + spec.name));
    }
    teachers_.emplace_back(spec);
  }
  params_.assign(layout_.total_size(), 0.0);
  Rng init(seeds.init);
  layout_.initialize(params_, init);
  weight_mask_ = layout_.weight_mask();
  ema_.shadow = params_;
  ema_.decay = cfg_.ema_decay;
  adam_.m.assign(params_.size(), 0.0);
  adam_.v.assign(params_.size(), 0.0);
}

void Trainer::calibrate() {
  const SeedStreams seeds = cfg_.seeds();
  stats_.clear();
  for (const auto& t : teachers_) {
    // Same seed for every teacher: all see the same calibration images, and
    // roster order cannot influence any teacher's statistics.
    stats_.push_back(agglo::calibrate(t, cfg_.calib_samples, calibration_resolution(t.spec(), cfg_.calib_resolution),
                                      seeds.calib));
  }
}

void Trainer::set_stats(std::vector<TeacherStats> stats) {
  if (stats.size() != teachers_.size()) throw ShapeError("set_stats: one TeacherStats per teacher required");
  for (std::size_t k = 0; k < stats.size(); ++k) {
    stats[k].validate();
    if (static_cast<int>(stats[k].channel_mean.size()) != teachers_[k].spec().channels) {
      throw ShapeError("set_stats: channel count mismatch for teacher " + teachers_[k].spec().name);
    }
  }
  stats_ = std::move(stats);
}

std::vector<AttentionWindow> Trainer::train_schedule() const {
  return cfg_.train_attention == TrainAttention::global ? cfg_.student.global_schedule() : cfg_.student.schedule;
}

StepResult Trainer::step() {
  if (stats_.size() != teachers_.size()) throw std::logic_error("trainer: teachers are not calibrated");
  const long s = step_;
  const SeedStreams seeds = cfg_.seeds();
  const int K = static_cast<int>(teachers_.size());
  const int B = cfg_.batch;
  const int p = cfg_.student.patch;
  const int ms = cfg_.max_shift;

  StepResult result;
  result.step = s;
  Rng data_rng(derive_seed(seeds.data, static_cast<std::uint64_t>(s)));
  result.partition = data_rng.uniform() < cfg_.high_fraction ? Partition::high : Partition::low;
  result.resolution = sample_resolution(
      data_rng, result.partition == Partition::high ? cfg_.high_resolutions : cfg_.low_resolutions);
  const int res = result.resolution;
  const PatchGrid grid = PatchGrid::for_resolution(res, p);
  const auto schedule = train_schedule();
  cfg_.student.check_resolution(res, res, schedule);

  // Views and correspondence maps.
  Rng shift_rng(derive_seed(seeds.shifts, static_cast<std::uint64_t>(s)));
  std::vector<ViewPlan> plan(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    auto& v = plan[static_cast<std::size_t>(b)];
    v.canvas = training_canvas(seeds.data, s, b, res + 2 * ms * p);
    v.student = sample_shift(shift_rng, ms);
    v.ema = sample_shift(shift_rng, ms);
    for (int k = 0; k < K; ++k) v.teacher.push_back(sample_shift(shift_rng, ms));
    v.mesa_map = overlap_region(grid, v.student, v.ema);
    for (int k = 0; k < K; ++k) v.maps.push_back(overlap_region(grid, v.student, v.teacher[static_cast<std::size_t>(k)]));
  }

  // Teacher targets. targets[k][b] is empty when the teacher cannot serve
  // this resolution.
  std::vector<std::vector<TeacherOutput>> targets(static_cast<std::size_t>(K));
  std::vector<char> teacher_ok(static_cast<std::size_t>(K), 1);
  std::vector<char> summary_ok(static_cast<std::size_t>(K), 1);
  for (int k = 0; k < K; ++k) {
    const auto& teacher = teachers_[static_cast<std::size_t>(k)];
    const auto& spec = teacher.spec();
    auto& out = targets[static_cast<std::size_t>(k)];
    auto view = [&](int b) {
      const auto& v = plan[static_cast<std::size_t>(b)];
      return view_of_canvas(v.canvas, grid, ms, v.teacher[static_cast<std::size_t>(k)]);
    };
    if (spec.native == NativeKind::fixed) {
      const int n = spec.native_pixels % res == 0 ? spec.native_pixels / res : 0;
      if (n < 1 || n > 3) {
        teacher_ok[static_cast<std::size_t>(k)] = 0;
        continue;
      }
      // A mosaic summary describes the whole canvas, not any one tile.
      summary_ok[static_cast<std::size_t>(k)] = n == 1;
      const int per = n * n;
      std::vector<int> ids(static_cast<std::size_t>(per));
      for (int j = 0; j < per; ++j) ids[static_cast<std::size_t>(j)] = j;
      const MosaicLayout layout = pack_mosaic(ids, PatchGrid::for_resolution(spec.native_pixels, p));
      for (int g0 = 0; g0 < B; g0 += per) {
        std::vector<Image> tiles;
        for (int j = 0; j < per; ++j) tiles.push_back(g0 + j < B ? view(g0 + j) : Image(res, res));
        auto outs = fixedres_forward(teacher, tiles, layout);
        for (int j = 0; j < per && g0 + j < B; ++j) out.push_back(std::move(outs[static_cast<std::size_t>(j)]));
      }
    } else {
      if (spec.native == NativeKind::low && res > spec.native_pixels && res % spec.native_pixels != 0) {
        teacher_ok[static_cast<std::size_t>(k)] = 0;
        continue;
      }
      for (int b = 0; b < B; ++b) out.push_back(teacher.forward_view(view(b)));
    }
    for (auto& t : out) t.features = normalize_features(t.features, stats_[static_cast<std::size_t>(k)]);
  }

  const LossWeights weights = cfg_.loss_weights();
  const bool use_mesa = weights.mesa > 0.0;
  std::vector<int> spatial_count(static_cast<std::size_t>(K), 0), summary_count(static_cast<std::size_t>(K), 0);
  int mesa_count = 0;
  for (int k = 0; k < K; ++k) {
    if (!teacher_ok[static_cast<std::size_t>(k)]) continue;
    for (const auto& v : plan) spatial_count[static_cast<std::size_t>(k)] += !v.maps[static_cast<std::size_t>(k)].empty();
    if (summary_ok[static_cast<std::size_t>(k)]) summary_count[static_cast<std::size_t>(k)] = B;
  }
  if (use_mesa) {
    for (const auto& v : plan) mesa_count += !v.mesa_map.empty();
  }

  std::vector<LossTerm> terms;
  for (int k = 0; k < K; ++k) {
    const std::string& name = teachers_[static_cast<std::size_t>(k)].spec().name;
    terms.push_back({TermKind::spatial, k, name + ".spatial", 0.0, 0, spatial_count[static_cast<std::size_t>(k)] == 0});
    terms.push_back({TermKind::summary, k, name + ".summary", 0.0, 0, summary_count[static_cast<std::size_t>(k)] == 0});
  }
  if (use_mesa) terms.push_back({TermKind::mesa, -1, "mesa", 0.0, 0, mesa_count == 0});

  const bool any = std::any_of(terms.begin(), terms.end(), [](const LossTerm& t) { return !t.skipped; });
  if (!any) {
    result.skipped = true;
    result.report.terms = std::move(terms);
    ++step_;
    return result;
  }

  // EMA targets use clean shadow weights.
  std::vector<FeatureGrid> ema_features(static_cast<std::size_t>(B));
  if (mesa_count > 0) {
    for (int b = 0; b < B; ++b) {
      const auto& v = plan[static_cast<std::size_t>(b)];
      if (v.mesa_map.empty()) continue;
      ema_features[static_cast<std::size_t>(b)] =
          student_->forward(ema_.shadow, view_of_canvas(v.canvas, grid, ms, v.ema), schedule).features;
    }
  }

  DampRestore clean;
  if (cfg_.damp.enabled && cfg_.damp.sigma > 0.0) {
    Rng damp_rng(derive_seed(seeds.damp, static_cast<std::uint64_t>(s)));
    clean = damp_perturb(params_, weight_mask_, cfg_.damp, damp_rng);
  }

  std::vector<double> grads(params_.size(), 0.0);
  const std::span<const double> cparams(params_);
  const int dim = cfg_.student.dim;
  for (int b = 0; b < B; ++b) {
    const auto& v = plan[static_cast<std::size_t>(b)];
    StudentCache cache;
    const StudentOutput out = student_->forward(params_, view_of_canvas(v.canvas, grid, ms, v.student), schedule, &cache);
    FeatureGrid d_features(out.features.rows, out.features.cols, dim);
    std::vector<double> d_summary(static_cast<std::size_t>(dim), 0.0);
    const ConstMatMap x = out.features.matrix();
    const ConstMatMap xs(out.summary.data(), 1, dim);
    MatMap dx = d_features.matrix();
    MatMap dxs(d_summary.data(), 1, dim);

    std::size_t term = 0;
    for (int k = 0; k < K; ++k, term += 2) {
      const auto kk = static_cast<std::size_t>(k);
      const Head& h = heads_[kk];
      if (!terms[term].skipped && !v.maps[kk].empty()) {
        const Mat y = head_apply(x, param_view(cparams, h.spatial_w), param_view(cparams, h.spatial_b));
        const FeatureGrid yg = FeatureGrid::from_matrix(out.features.rows, out.features.cols, y);
        const GridLoss L = spatial_loss(yg, targets[kk][static_cast<std::size_t>(b)].features, v.maps[kk]);
        terms[term].value += L.value;
        terms[term].omega += L.omega;
        const double scale = weights.weight(TermKind::spatial, k) / spatial_count[kk];
        const Mat dy = L.grad.matrix() * scale;
        head_backward(x, dy, param_view(cparams, h.spatial_w), param_view(std::span<double>(grads), h.spatial_w),
                      param_view(std::span<double>(grads), h.spatial_b), dx);
      }
      if (!terms[term + 1].skipped) {
        const Mat z = head_apply(xs, param_view(cparams, h.summary_w), param_view(cparams, h.summary_b));
        const std::span<const double> zs(z.data(), static_cast<std::size_t>(z.size()));
        const auto& target = targets[kk][static_cast<std::size_t>(b)].summary;
        const VectorLoss L = cfg_.summary_loss == SummaryLossKind::angle
                                 ? summary_loss(zs, target, stats_[kk].effective_dispersion())
                                 : cosine_summary_loss(zs, target);
        terms[term + 1].value += L.value;
        terms[term + 1].omega += 1;
        const double scale = weights.weight(TermKind::summary, k) / summary_count[kk];
        const Mat dz = ConstMatMap(L.grad.data(), 1, static_cast<Eigen::Index>(L.grad.size())) * scale;
        head_backward(xs, dz, param_view(cparams, h.summary_w), param_view(std::span<double>(grads), h.summary_w),
                      param_view(std::span<double>(grads), h.summary_b), dxs);
      }
    }
    if (use_mesa && !v.mesa_map.empty()) {
      const GridLoss L = mesa_loss(out.features, ema_features[static_cast<std::size_t>(b)], v.mesa_map);
      terms[term].value += L.value;
      terms[term].omega += L.omega;
      dx += L.grad.matrix() * (weights.mesa / mesa_count);
    }
    student_->backward(params_, cache, d_summary, d_features, grads);
  }

  if (clean.active()) clean.restore(params_);
  adamw_step(params_, grads, adam_, cfg_.optim, weight_mask_);
  ema_update(ema_, params_, ema_.decay);

  for (auto& t : terms) {
    if (t.skipped) continue;
    const int count = t.kind == TermKind::mesa          ? mesa_count
                      : t.kind == TermKind::spatial     ? spatial_count[static_cast<std::size_t>(t.teacher)]
                                                        : summary_count[static_cast<std::size_t>(t.teacher)];
    t.value /= count;
  }
  result.report.total = aggregate(terms, weights);
  result.report.terms = std::move(terms);
  ++step_;
  return result;
}

std::vector<StepResult> Trainer::run_until(long target, std::ostream* log) {
  std::vector<StepResult> out;
  while (step_ < target) {
    out.push_back(step());
    if (log) write_log_rows(*log, out.back().step, out.back().resolution, out.back().report);
  }
  return out;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.student = cfg_.student;
  for (const auto& t : teachers_) ck.teacher_names.push_back(t.spec().name);
  ck.params = params_;
  ck.ema = ema_;
  ck.adam = adam_;
  ck.stats = stats_;
  ck.step = step_;
  ck.seed = cfg_.seed;
  return ck;
}

void Trainer::restore(const Checkpoint& ck) {
  if (!(ck.student == cfg_.student)) throw std::invalid_argument("checkpoint student config differs from the run config");
  std::vector<std::string> names;
  for (const auto& t : teachers_) names.push_back(t.spec().name);
  if (ck.teacher_names != names) throw std::invalid_argument("checkpoint teacher roster differs from the run config");
  if (ck.params.size() != params_.size()) throw std::invalid_argument("checkpoint parameter count differs");
  if (ck.seed != cfg_.seed) throw std::invalid_argument("checkpoint seed differs from the run config");
  set_stats(ck.stats);
  params_ = ck.params;
  ema_ = ck.ema;
  adam_ = ck.adam;
  step_ = ck.step;
}

StudentOutput Trainer::forward(const Image& image, bool use_ema) const {
  return student_->forward(use_ema ? ema_.shadow : params_, image, train_schedule());
}

FeatureGrid Trainer::predict_features(const StudentOutput& out, int k, bool use_ema) const {
  const std::span<const double> p(use_ema ? ema_.shadow : params_);
  const Head& h = heads_.at(static_cast<std::size_t>(k));
  return FeatureGrid::from_matrix(out.features.rows, out.features.cols,
                                  head_apply(out.features.matrix(), param_view(p, h.spatial_w), param_view(p, h.spatial_b)));
}

std::vector<double> Trainer::predict_summary(const StudentOutput& out, int k, bool use_ema) const {
  const std::span<const double> p(use_ema ? ema_.shadow : params_);
  const Head& h = heads_.at(static_cast<std::size_t>(k));
  const Mat z = head_apply(ConstMatMap(out.summary.data(), 1, static_cast<Eigen::Index>(out.summary.size())),
                           param_view(p, h.summary_w), param_view(p, h.summary_b));
  return {z.data(), z.data() + z.size()};
}

}  // namespace agglo
