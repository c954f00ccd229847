// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0
//
// The distillation loop. Each step draws a partition and resolution, builds
// per-image canvases, shifts the student, EMA and teacher views
// independently, and takes one AdamW step on the clean weights. Every random
// draw derives from (sub-stream seed, step), so the only state a resume needs
// is the parameters, EMA, optimizer moments and the step counter.

#pragma once

#include "agglo/checkpoint.hpp"
#include "agglo/config.hpp"
#include "agglo/losses.hpp"
#include "agglo/normstats.hpp"
#include "agglo/params.hpp"
#include "agglo/student.hpp"
#include "agglo/teachers.hpp"

#include <iosfwd>
#include <memory>
#include <vector>

namespace agglo {

/// Calibration image side for `teacher` given the requested resolution.
int calibration_resolution(const SyntheticTeacherSpec& spec, int requested);

/// Feature and summary statistics over `samples` stationary images.
TeacherStats calibrate(const SyntheticTeacher& teacher, int samples, int resolution, std::uint64_t seed);

/// The canvas backing image `index` of step `step`.
Image training_canvas(std::uint64_t data_seed, long step, int index, int side);

struct StepResult {
  long step = 0;
  int resolution = 0;
  Partition partition = Partition::low;
  LossReport report;
  bool skipped = false;  // every term skipped; no update taken
};

class Trainer {
 public:
  /// Builds the student, adaptor heads and teachers, calibrating cone angles
  /// where a target dispersion is configured. Teacher statistics still need
  /// calibrate() or set_stats() before the first step.
  explicit Trainer(RunConfig cfg);

  const RunConfig& config() const { return cfg_; }
  const Student& student() const { return *student_; }
  const ParamLayout& layout() const { return layout_; }
  const std::vector<SyntheticTeacher>& teachers() const { return teachers_; }
  const std::vector<TeacherStats>& stats() const { return stats_; }
  const std::vector<double>& params() const { return params_; }
  std::vector<double>& mutable_params() { return params_; }
  const EmaState& ema() const { return ema_; }
  const AdamWState& adam() const { return adam_; }
  long step_count() const { return step_; }

  void calibrate();
  void set_stats(std::vector<TeacherStats> stats);

  StepResult step();

  /// Runs until step_count() == target, appending log rows when `log` is set.
  std::vector<StepResult> run_until(long target, std::ostream* log = nullptr);

  Checkpoint checkpoint() const;
  /// Resumes from a checkpoint written by a trainer with the same config.
  void restore(const Checkpoint& ck);

  /// Attention schedule used for training forwards.
  std::vector<AttentionWindow> train_schedule() const;

  StudentOutput forward(const Image& image, bool use_ema = false) const;
  /// Student prediction of teacher `k`'s normalized dense features.
  FeatureGrid predict_features(const StudentOutput& out, int k, bool use_ema = false) const;
  std::vector<double> predict_summary(const StudentOutput& out, int k, bool use_ema = false) const;

 private:
  struct Head {
    ParamEntry spatial_w, spatial_b, summary_w, summary_b;
  };

  RunConfig cfg_;
  ParamLayout layout_;
  std::unique_ptr<Student> student_;
  std::vector<Head> heads_;
  std::vector<SyntheticTeacher> teachers_;
  std::vector<TeacherStats> stats_;
  std::vector<unsigned char> weight_mask_;
  std::vector<double> params_;
  EmaState ema_;
  AdamWState adam_;
  long step_ = 0;
};

}  // namespace agglo
