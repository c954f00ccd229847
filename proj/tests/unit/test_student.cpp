// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#include "agglo/attention.hpp"
#include "agglo/student.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <set>

using namespace agglo;

namespace {

struct OwnedAttention {
  Mat wqkv, bqkv, wo, bo;
  int heads = 1;

  OwnedAttention(int dim, int heads_, Rng& rng)
      : wqkv(dim, 3 * dim), bqkv(1, 3 * dim), wo(dim, dim), bo(1, dim), heads(heads_) {
    for (Mat* m : {&wqkv, &bqkv, &wo, &bo}) {
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = 0.3 * rng.normal();
    }
  }

  AttentionWeights view() const {
    return {ConstMatMap(wqkv.data(), wqkv.rows(), wqkv.cols()), ConstMatMap(bqkv.data(), 1, bqkv.cols()),
            ConstMatMap(wo.data(), wo.rows(), wo.cols()), ConstMatMap(bo.data(), 1, bo.cols()), heads};
  }
};

Image random_image(int h, int w, Rng& rng) {
  Image img(h, w);
  for (auto& p : img.pixels) p = rng.uniform();
  return img;
}

StudentConfig tiny_config() {
  StudentConfig cfg;
  cfg.patch = 4;
  cfg.dim = 8;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  cfg.pos_grid = 4;
  cfg.schedule = {AttentionWindow::window(6), AttentionWindow::global()};
  return cfg;
}

}  // namespace

TEST_SUITE("student") {
  TEST_CASE("desk default shapes") {
    const StudentConfig cfg = StudentConfig::desk_default();
    CHECK(cfg.depth == 8);
    CHECK(cfg.schedule.size() == 8);
    for (int layer = 1; layer <= 8; ++layer) {
      CHECK(cfg.schedule[static_cast<std::size_t>(layer - 1)].is_global() == (layer % 2 == 0));
    }
    CHECK_NOTHROW(cfg.validate());
    ParamLayout layout;
    Student s(cfg, layout);
    std::vector<double> p(layout.total_size());
    Rng rng(1);
    layout.initialize(p, rng);
    const StudentOutput out = s.forward(p, random_image(256, 256, rng));
    CHECK(out.summary.size() == 128);
    CHECK(out.features.rows == 16);
    CHECK(out.features.cols == 16);
    CHECK(out.features.channels == 128);
  }

  TEST_CASE("resolution divisibility at 1152") {
    StudentConfig cfg = StudentConfig::desk_default();
    CHECK_NOTHROW(cfg.check_resolution(1152, 1152));
    std::vector<AttentionWindow> w13(8, AttentionWindow::window(13));
    w13[1] = AttentionWindow::global();
    CHECK_THROWS_AS(cfg.check_resolution(1152, 1152, w13), DivisibilityError);
    CHECK_THROWS_AS(cfg.check_resolution(192, 192), DivisibilityError);
    CHECK_NOTHROW(cfg.check_resolution(192, 192, cfg.global_schedule()));
    CHECK_THROWS_AS(cfg.check_resolution(200, 200, cfg.global_schedule()), DivisibilityError);
    try {
      cfg.check_resolution(1152, 1152, w13);
    } catch (const DivisibilityError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("layer 1") != std::string::npos);
      CHECK(msg.find("208") != std::string::npos);
    }
  }

  TEST_CASE("config validation errors") {
    StudentConfig cfg = tiny_config();
    cfg.heads = 3;
    CHECK_THROWS(cfg.validate());
    cfg = tiny_config();
    cfg.schedule.pop_back();
    CHECK_THROWS(cfg.validate());
    cfg = tiny_config();
    cfg.schedule = {AttentionWindow::window(6), AttentionWindow::window(6)};
    CHECK_THROWS(cfg.validate());
    cfg = tiny_config();
    cfg.schedule[0] = AttentionWindow::window(5);
    CHECK_THROWS(cfg.validate());
    cfg.schedule[0] = AttentionWindow::window(33);
    CHECK_THROWS(cfg.validate());
  }

  TEST_CASE("interp_pos_embed") {
    FeatureGrid base(2, 2, 1);
    base.at(0, 0, 0) = 0.0;
    base.at(0, 1, 0) = 1.0;
    base.at(1, 0, 0) = 0.0;
    base.at(1, 1, 0) = 1.0;
    const FeatureGrid same = interp_pos_embed(base, {2, 2, 16});
    CHECK(same.values == base.values);
    const FeatureGrid up = interp_pos_embed(base, {2, 4, 16});
    const double expect[4] = {0.0, 0.25, 0.75, 1.0};
    for (int c = 0; c < 4; ++c) {
      CHECK(up.at(0, c, 0) == doctest::Approx(expect[c]));
      CHECK(up.at(1, c, 0) == doctest::Approx(expect[c]));
    }
    const FeatureGrid flat = interp_pos_embed(FeatureGrid(3, 3, 2, 0.7), {7, 5, 1});
    for (double v : flat.values) CHECK(v == doctest::Approx(0.7));
    CHECK_THROWS_AS(interp_pos_embed(FeatureGrid(1, 3, 1), {4, 4, 1}), ShapeError);
  }

  TEST_CASE("window equal to the grid matches global attention") {
    Rng rng(2);
    const OwnedAttention w(8, 2, rng);
    const FeatureGrid x = oracle::random_grid(16, 16, 8, rng);
    const FeatureGrid win = windowed_attention(x, 16, w.view());
    const auto groups = attention_groups(16, 16, AttentionWindow::global(), false);
    const Mat xm = x.matrix();
    const Mat glob = attention_forward(xm, w.view(), groups);
    for (int i = 0; i < 256; ++i) {
      for (int k = 0; k < 8; ++k) CHECK(win.matrix()(i, k) == doctest::Approx(glob(i, k)).epsilon(1e-12));
    }
  }

  TEST_CASE("window of one reduces to the value path") {
    Rng rng(3);
    const OwnedAttention w(6, 3, rng);
    const FeatureGrid x = oracle::random_grid(4, 5, 6, rng);
    const FeatureGrid y = windowed_attention(x, 1, w.view());
    // Each token attends only to itself, so y = (x Wv + bv) Wo + bo.
    const Mat xm = x.matrix();
    const Mat v = (xm * w.wqkv.rightCols(6)).rowwise() + w.bqkv.rightCols(6).row(0);
    const Mat expect = (v * w.wo).rowwise() + w.bo.row(0);
    for (int i = 0; i < 20; ++i) {
      for (int k = 0; k < 6; ++k) CHECK(y.matrix()(i, k) == doctest::Approx(expect(i, k)).epsilon(1e-12));
    }
  }

  TEST_CASE("windowed attention treats duplicate windows identically") {
    Rng rng(4);
    const OwnedAttention w(4, 1, rng);
    FeatureGrid x = oracle::random_grid(6, 6, 4, rng);
    // Copy window (0, 0) into window (1, 1).
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        for (int k = 0; k < 4; ++k) x.at(r + 3, c + 3, k) = x.at(r, c, k);
      }
    }
    const FeatureGrid y = windowed_attention(x, 3, w.view());
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) {
        for (int k = 0; k < 4; ++k) CHECK(y.at(r + 3, c + 3, k) == y.at(r, c, k));
      }
    }
    CHECK_THROWS_AS(windowed_attention(x, 4, w.view()), DivisibilityError);
  }

  TEST_CASE("attention groups partition the tokens") {
    const auto groups = attention_groups(6, 6, AttentionWindow::window(3), true);
    std::multiset<int> seen;
    for (const auto& g : groups) seen.insert(g.queries.begin(), g.queries.end());
    CHECK(seen.size() == 37);
    for (int t = 0; t < 37; ++t) CHECK(seen.count(t) == 1);
    for (const auto& g : groups) CHECK(std::find(g.keys.begin(), g.keys.end(), 0) != g.keys.end());
  }

  TEST_CASE("attention_flops") {
    const PatchGrid g{64, 64, 16};
    const std::vector<AttentionWindow> glob(2, AttentionWindow::global());
    const std::vector<AttentionWindow> win(2, AttentionWindow::window(8));
    const std::uint64_t t = 64 * 64;
    CHECK(attention_flops(g, glob, 128) == 2 * 2 * t * t * 128);
    CHECK(attention_flops(g, win, 128) == 2 * 2 * t * 64 * 128);
    CHECK(attention_flops(g, win, 128) * 64 == attention_flops(g, glob, 128));
  }

  TEST_CASE("EMA update") {
    EmaState ema{{1.0, 2.0}, 0.9};
    const std::vector<double> p{3.0, -2.0};
    ema_update(ema, p, 0.9);
    CHECK(ema.shadow[0] == doctest::Approx(1.2));
    CHECK(ema.shadow[1] == doctest::Approx(1.6));
    ema_update(ema, p, 0.0);
    CHECK(ema.shadow == p);
    ema_update(ema, std::vector<double>{0.0, 0.0}, 1.0);
    CHECK(ema.shadow == p);
    CHECK_THROWS(ema_update(ema, std::vector<double>{1.0}, 0.5));
    CHECK_THROWS(ema_update(ema, p, 1.5));
  }

  TEST_CASE("DAMP perturbs masked weights and restores exactly") {
    Rng rng(5);
    std::vector<double> p(4000);
    for (auto& v : p) v = rng.normal();
    const std::vector<double> clean = p;
    std::vector<unsigned char> mask(p.size(), 1);
    for (std::size_t i = 0; i < mask.size(); i += 2) mask[i] = 0;
    Rng draw(6);
    const DampRestore handle = damp_perturb(p, mask, {0.05, true}, draw);
    double sum = 0.0, sq = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!mask[i]) {
        CHECK(p[i] == clean[i]);
        continue;
      }
      const double ratio = p[i] / clean[i];
      sum += ratio;
      sq += ratio * ratio;
      ++n;
    }
    const double mean = sum / n;
    CHECK(mean == doctest::Approx(1.0).epsilon(0.01));
    CHECK(std::sqrt(sq / n - mean * mean) == doctest::Approx(0.05).epsilon(0.1));
    handle.restore(p);
    CHECK(p == clean);

    Rng off(7);
    damp_perturb(p, mask, {0.05, false}, off);
    CHECK(p == clean);
  }

  TEST_CASE("window schedule and global schedule agree when the window covers the grid") {
    StudentConfig cfg = tiny_config();
    ParamLayout layout;
    Student s(cfg, layout);
    std::vector<double> p(layout.total_size());
    Rng rng(8);
    layout.initialize(p, rng);
    const Image img = random_image(24, 24, rng);  // 6x6 grid, window 6
    const StudentOutput a = s.forward(p, img);
    const StudentOutput b = s.forward(p, img, cfg.global_schedule());
    CHECK(oracle::relative_error(a.features.values, b.features.values) < 1e-12);
    CHECK(oracle::relative_error(a.summary, b.summary) < 1e-12);
  }

  TEST_CASE("student backward matches central differences") {
    StudentConfig cfg = tiny_config();
    ParamLayout layout;
    Student s(cfg, layout);
    std::vector<double> p(layout.total_size());
    Rng rng(9);
    layout.initialize(p, rng);
    const Image img = random_image(48, 48, rng);  // 12x12 grid, two windows per side
    const FeatureGrid wf = oracle::random_grid(12, 12, cfg.dim, rng);
    std::vector<double> ws(static_cast<std::size_t>(cfg.dim));
    for (auto& v : ws) v = rng.normal();

    auto loss = [&](const std::vector<double>& q) {
      const StudentOutput o = s.forward(q, img);
      double acc = 0.0;
      for (std::size_t i = 0; i < ws.size(); ++i) acc += ws[i] * o.summary[i];
      for (std::size_t i = 0; i < wf.values.size(); ++i) acc += wf.values[i] * o.features.values[i];
      return acc;
    };
    StudentCache cache;
    s.forward(p, img, &cache);
    std::vector<double> grads(p.size(), 0.0);
    s.backward(p, cache, ws, wf, grads);
    CHECK(oracle::relative_error(grads, oracle::numeric_gradient(loss, p)) < 1e-4);
  }
}
