// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration and its text format: INI-style sections of key = value
// lines, '#' or ';' comments. Unknown sections or keys are errors.

#pragma once

#include "agglo/losses.hpp"
#include "agglo/params.hpp"
#include "agglo/student.hpp"
#include "agglo/teachers.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace agglo {

/// Raised for malformed or out-of-range configuration; the message names the
/// source, the key and the violated constraint.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct IniValue {
  std::string text;
  int line = 0;
};

struct IniSection {
  std::string name;
  int line = 0;
  std::map<std::string, IniValue> values;
};

struct IniDocument {
  std::string source;
  std::vector<IniSection> sections;
};

IniDocument parse_ini(const std::string& text, const std::string& source);

enum class SummaryLossKind { angle, cosine };
enum class TrainAttention { global, schedule };

struct TeacherConfig {
  SyntheticTeacherSpec spec;
  double target_dispersion = 0.0;  // > 0: cone_angle is calibrated to hit it
  TeacherWeights weights;
};

struct BenchConfig {
  std::string variant = "desk";
  std::vector<int> resolutions{256, 512, 1024};
  std::vector<int> windows{8, 0};  // 0 = all-global schedule
  int warmup = 2;
  int trials = 5;
};

struct EvalConfig {
  int resolution = 128;
  int classes = 10;
  int per_class = 20;
  int knn_k = 20;
  double probe_lambda = 1e-3;
  double train_fraction = 0.8;
  int fpn_images = 256;
  int pca_images = 4;
};

/// Independent sub-streams of the master seed, so toggling one feature (say
/// DAMP) leaves the others untouched.
struct SeedStreams {
  std::uint64_t data = 0;
  std::uint64_t shifts = 0;
  std::uint64_t damp = 0;
  std::uint64_t init = 0;
  std::uint64_t calib = 0;

  static SeedStreams from_master(std::uint64_t master);
};

struct RunConfig {
  int steps = 100;
  int batch = 8;
  double high_fraction = 0.5;
  std::vector<int> low_resolutions{kLowResolutions.begin(), kLowResolutions.end()};
  std::vector<int> high_resolutions{kHighResolutions.begin(), kHighResolutions.end()};
  int max_shift = 3;
  double ema_decay = 0.999;
  double w_mesa = 0.1;
  SummaryLossKind summary_loss = SummaryLossKind::angle;
  TrainAttention train_attention = TrainAttention::global;
  DampConfig damp;
  AdamWConfig optim;
  std::uint64_t seed = 0;
  int calib_samples = 1024;
  int calib_resolution = 256;
  int checkpoint_every = 0;

  StudentConfig student = StudentConfig::desk_default();
  std::vector<TeacherConfig> teachers;
  BenchConfig bench;
  EvalConfig eval;

  SeedStreams seeds() const { return SeedStreams::from_master(seed); }
  LossWeights loss_weights() const;
  int teacher_index(const std::string& name) const;

  /// Cross-field checks. Throws ConfigError.
  void validate() const;
};

RunConfig parse_run_config(const std::string& text, const std::string& source);
RunConfig load_run_config(const std::string& path);

/// Every field written explicitly; parse_run_config(to_ini(c)) == c.
std::string to_ini(const RunConfig& cfg);

const char* summary_loss_name(SummaryLossKind kind);
const char* train_attention_name(TrainAttention mode);

}  // namespace agglo
