// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#include "agglo/normstats.hpp"
#include "agglo/trainer.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cstring>
#include <numeric>
#include <sstream>

using namespace agglo;

namespace {

TeacherConfig teacher(const std::string& name, std::uint64_t seed) {
  TeacherConfig t;
  t.spec.name = name;
  t.spec.channels = 4;
  t.spec.summary_dim = 6;
  t.spec.patch = 8;
  t.spec.semantic_seed = seed;
  t.spec.cone_angle = 0.4;
  return t;
}

RunConfig tiny_run() {
  RunConfig c;
  c.steps = 10;
  c.batch = 2;
  c.high_fraction = 0.0;
  c.low_resolutions = {32};
  c.high_resolutions = {};
  c.max_shift = 1;
  c.seed = 17;
  c.calib_samples = 16;
  c.calib_resolution = 32;
  c.optim.lr = 3e-3;
  c.student.patch = 8;
  c.student.dim = 8;
  c.student.depth = 2;
  c.student.heads = 2;
  c.student.mlp_ratio = 2;
  c.student.pos_grid = 4;
  c.student.schedule = {AttentionWindow::global(), AttentionWindow::global()};
  c.teachers = {teacher("alpha", 1)};
  return c;
}

double angle_sq(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double c = std::clamp(dot / std::sqrt(na * nb), -1.0 + 1e-7, 1.0 - 1e-7);
  const double t = std::acos(c);
  return t * t;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("calibration resolution") {
    SyntheticTeacherSpec s;
    s.patch = 16;
    CHECK(calibration_resolution(s, 200) == 192);
    s.native = NativeKind::low;
    s.native_pixels = 128;
    CHECK(calibration_resolution(s, 256) == 128);
    CHECK(calibration_resolution(s, 96) == 96);
    s.native = NativeKind::fixed;
    s.native_pixels = 224;
    CHECK(calibration_resolution(s, 96) == 224);
  }

  TEST_CASE("calibration floors the dispersion of identical summaries") {
    SyntheticTeacherSpec s = teacher("flat", 3).spec;
    s.cone_angle = 0.0;
    const TeacherStats st = calibrate(SyntheticTeacher(s), 8, 32, 5);
    CHECK(st.dispersion == kDispersionFloor);
    CHECK_NOTHROW(st.validate());
    CHECK_THROWS(calibrate(SyntheticTeacher(s), 0, 32, 5));
  }

  TEST_CASE("calibration does not depend on roster order") {
    RunConfig a = tiny_run();
    a.teachers = {teacher("alpha", 1), teacher("beta", 2)};
    RunConfig b = a;
    std::swap(b.teachers[0], b.teachers[1]);
    Trainer ta(a), tb(b);
    ta.calibrate();
    tb.calibrate();
    CHECK(ta.stats()[0] == tb.stats()[1]);
    CHECK(ta.stats()[1] == tb.stats()[0]);
  }

  TEST_CASE("one step matches a hand-driven oracle") {
    RunConfig c = tiny_run();
    c.max_shift = 0;
    c.w_mesa = 0.0;
    c.damp.enabled = false;
    c.teachers[0].weights = {1.0, 0.7};
    Trainer tr(c);
    tr.calibrate();
    const auto& st = tr.stats()[0];
    const SeedStreams seeds = c.seeds();
    const SyntheticTeacher& t = tr.teachers()[0];

    // With no shifts every view is the whole canvas.
    std::vector<Image> canvases;
    std::vector<TeacherOutput> targets;
    for (int b = 0; b < c.batch; ++b) {
      canvases.push_back(training_canvas(seeds.data, 0, b, 32));
      TeacherOutput y = t.forward(canvases.back());
      for (int r = 0; r < y.features.rows; ++r) {
        for (int col = 0; col < y.features.cols; ++col) {
          for (int k = 0; k < y.features.channels; ++k) {
            auto& v = y.features.at(r, col, k);
            v = (v - st.channel_mean[k]) / st.channel_scale[k];
          }
        }
      }
      targets.push_back(std::move(y));
    }
    auto oracle_loss = [&](Trainer& m) {
      double spatial = 0.0, summary = 0.0;
      for (int b = 0; b < c.batch; ++b) {
        const StudentOutput out = m.forward(canvases[b]);
        spatial += oracle::spatial_loss(m.predict_features(out, 0), targets[b].features, {0, 0}, {0, 0});
        summary += angle_sq(m.predict_summary(out, 0), targets[b].summary) / st.dispersion;
      }
      return (1.0 * spatial + 0.7 * summary) / c.batch;
    };
    const double expected = oracle_loss(tr);

    // Numeric gradient on a sample of coordinates, before the update.
    Trainer probe(c);
    probe.set_stats(tr.stats());
    Rng pick(3);
    std::vector<std::size_t> coords;
    for (int i = 0; i < 60; ++i) coords.push_back(static_cast<std::size_t>(pick.uniform_int(0, tr.params().size() - 1)));
    std::vector<double> numeric;
    for (std::size_t i : coords) {
      auto& p = probe.mutable_params();
      const double x0 = p[i];
      p[i] = x0 + 1e-5;
      const double up = oracle_loss(probe);
      p[i] = x0 - 1e-5;
      const double down = oracle_loss(probe);
      p[i] = x0;
      numeric.push_back((up - down) / 2e-5);
    }

    const StepResult r = tr.step();
    CHECK_FALSE(r.skipped);
    CHECK(r.resolution == 32);
    CHECK(r.report.total == doctest::Approx(expected).epsilon(1e-6));
    // First AdamW step: m = (1 - beta1) g.
    std::vector<double> analytic;
    for (std::size_t i : coords) analytic.push_back(tr.adam().m[i] / (1.0 - c.optim.beta1));
    CHECK(oracle::relative_error(analytic, numeric) < 1e-5);
    CHECK(tr.step_count() == 1);
  }

  TEST_CASE("training reduces the spatial loss") {
    RunConfig c = tiny_run();
    c.optim.lr = 1e-2;
    c.batch = 4;
    Trainer tr(c);
    tr.calibrate();
    const auto steps = tr.run_until(200);
    auto mean_spatial = [&](std::size_t from, std::size_t to) {
      double acc = 0.0;
      for (std::size_t i = from; i < to; ++i) acc += steps[i].report.find(TermKind::spatial, 0)->value;
      return acc / static_cast<double>(to - from);
    };
    const double first = mean_spatial(0, 10), last = mean_spatial(190, 200);
    MESSAGE("spatial loss " << first << " -> " << last);
    CHECK(last <= 0.5 * first);
  }

  TEST_CASE("runs are deterministic and resume exactly") {
    RunConfig c = tiny_run();
    c.teachers = {teacher("alpha", 1), teacher("beta", 2)};
    c.low_resolutions = {32, 48};
    Trainer a(c), b(c);
    a.calibrate();
    b.calibrate();
    a.run_until(6);
    b.run_until(6);
    CHECK(a.checkpoint() == b.checkpoint());
    CHECK(serialize_checkpoint(a.checkpoint()) == serialize_checkpoint(b.checkpoint()));

    Trainer first(c);
    first.calibrate();
    first.run_until(3);
    const std::string bytes = serialize_checkpoint(first.checkpoint());
    Trainer resumed(c);
    resumed.restore(deserialize_checkpoint(bytes));
    CHECK(resumed.step_count() == 3);
    resumed.run_until(6);
    CHECK(serialize_checkpoint(resumed.checkpoint()) == serialize_checkpoint(a.checkpoint()));

    RunConfig other = c;
    other.seed = 18;
    Trainer wrong(other);
    CHECK_THROWS(wrong.restore(a.checkpoint()));
  }

  TEST_CASE("checkpoint format errors") {
    RunConfig c = tiny_run();
    Trainer tr(c);
    tr.calibrate();
    tr.run_until(1);
    const std::string bytes = serialize_checkpoint(tr.checkpoint());
    CHECK(deserialize_checkpoint(bytes) == tr.checkpoint());

    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(bad), FormatError);
    bad = bytes;
    bad[4] = 2;
    CHECK_THROWS_AS(deserialize_checkpoint(bad), FormatError);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), FormatError);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, 6)), FormatError);
    bad = bytes;
    // The schedule length follows magic, version and six u32 config fields.
    const std::uint64_t huge = 1ULL << 40;
    std::memcpy(bad.data() + 32, &huge, 8);
    CHECK_THROWS_AS(deserialize_checkpoint(bad), FormatError);
  }

  TEST_CASE("a step with every term skipped still advances") {
    RunConfig c = tiny_run();
    c.w_mesa = 0.0;
    c.teachers[0].spec.native = NativeKind::fixed;
    c.teachers[0].spec.native_pixels = 40;
    Trainer tr(c);
    tr.calibrate();
    const std::vector<double> before = tr.params();
    const StepResult r = tr.step();
    CHECK(r.skipped);
    CHECK(tr.step_count() == 1);
    CHECK(tr.params() == before);
    for (const auto& t : r.report.terms) CHECK(t.skipped);
  }

  TEST_CASE("fixed-resolution teachers train through mosaics") {
    RunConfig c = tiny_run();
    c.batch = 3;
    c.teachers = {teacher("alpha", 1), teacher("fixed", 4)};
    c.teachers[1].spec.native = NativeKind::fixed;
    c.teachers[1].spec.native_pixels = 64;
    Trainer tr(c);
    tr.calibrate();
    const StepResult r = tr.step();
    CHECK_FALSE(r.skipped);
    CHECK_FALSE(r.report.find(TermKind::spatial, 1)->skipped);
    CHECK(r.report.find(TermKind::summary, 1)->skipped);
    CHECK_FALSE(r.report.find(TermKind::summary, 0)->skipped);
    CHECK(std::isfinite(r.report.total));
  }

  TEST_CASE("low-native teachers and MESA") {
    RunConfig c = tiny_run();
    c.teachers[0].spec.native = NativeKind::low;
    c.teachers[0].spec.native_pixels = 16;
    Trainer tr(c);
    tr.calibrate();
    std::ostringstream log;
    write_log_header(log);
    const auto steps = tr.run_until(2, &log);
    CHECK(steps.size() == 2);
    const LossTerm* mesa = steps[0].report.find(TermKind::mesa, -1);
    REQUIRE(mesa != nullptr);
    CHECK(std::isfinite(mesa->value));
    CHECK(log.str().find("alpha.spatial") != std::string::npos);

    RunConfig off = tiny_run();
    off.w_mesa = 0.0;
    Trainer t2(off);
    t2.calibrate();
    CHECK(t2.step().report.find(TermKind::mesa, -1) == nullptr);
  }

  TEST_CASE("step requires calibration") {
    Trainer tr(tiny_run());
    CHECK_THROWS(tr.step());
  }
}
