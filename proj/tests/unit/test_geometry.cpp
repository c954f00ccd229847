// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#include "agglo/geometry.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <map>
#include <set>

using namespace agglo;

TEST_SUITE("geometry") {
  TEST_CASE("sample_shift degenerate range and determinism") {
    Rng r(1);
    for (int i = 0; i < 100; ++i) CHECK(sample_shift(r, 0) == ShiftSample{0, 0});
    Rng a(77), b(77);
    for (int i = 0; i < 50; ++i) CHECK(sample_shift(a, 3) == sample_shift(b, 3));
  }

  TEST_CASE("sample_shift is uniform over the 9 offsets") {
    Rng r(2024);
    const int n = 100000;
    std::map<std::pair<int, int>, int> counts;
    for (int i = 0; i < n; ++i) {
      const auto s = sample_shift(r, 1);
      ++counts[{s.dy, s.dx}];
    }
    REQUIRE(counts.size() == 9);
    double chi2 = 0.0;
    const double expected = n / 9.0;
    for (const auto& [k, c] : counts) {
      CHECK(std::abs(c / static_cast<double>(n) - 1.0 / 9.0) <= 0.02 / 9.0);
      chi2 += (c - expected) * (c - expected) / expected;
    }
    CHECK(chi2 < 26.12);  // chi-square, 8 dof, p = 0.001
  }

  TEST_CASE("overlap_region examples") {
    const PatchGrid g{16, 16, 16};
    const CropMap id = overlap_region(g, {0, 0}, {0, 0});
    CHECK(id.overlap == Rect{0, 0, 16, 16});

    const CropMap m = overlap_region(g, {0, 0}, {0, 2});
    const auto o = oracle::enumerate_overlap(16, 16, {0, 0}, {0, 2});
    CHECK(m.overlap.rows == 16);
    CHECK(m.overlap.cols == 14);
    CHECK(m.overlap.area() == o.count);
    CHECK(m.overlap == Rect{o.row0, o.col0, o.rows, o.cols});

    CHECK(overlap_region({4, 4, 16}, {0, 0}, {0, 4}).empty());
  }

  TEST_CASE("overlap size formula holds exhaustively") {
    for (int rows = 1; rows <= 8; ++rows) {
      for (int cols = 1; cols <= 8; cols += 3) {
        const PatchGrid g{rows, cols, 1};
        for (int a = -3; a <= 3; ++a) {
          for (int b = -3; b <= 3; ++b) {
            for (int c = -3; c <= 3; c += 2) {
              for (int d = -3; d <= 3; d += 3) {
                const ShiftSample s{a, c}, t{b, d};
                const CropMap m = overlap_region(g, s, t);
                const auto o = oracle::enumerate_overlap(rows, cols, s, t);
                const int formula = std::max(0, rows - std::abs(a - b)) * std::max(0, cols - std::abs(c - d));
                REQUIRE(m.overlap.area() == formula);
                REQUIRE(o.count == formula);
                if (formula > 0) REQUIRE(m.overlap == Rect{o.row0, o.col0, o.rows, o.cols});
              }
            }
          }
        }
      }
    }
  }

  TEST_CASE("apply_crop_map gathers exactly") {
    Rng rng(8);
    const FeatureGrid x = oracle::random_grid(5, 5, 3, rng);
    CHECK(apply_crop_map(x, CropMap::identity({5, 5, 1})).values == x.values);

    const FeatureGrid c(5, 5, 3, 2.5);
    const FeatureGrid gc = apply_crop_map(c, overlap_region({5, 5, 1}, {1, -1}, {0, 1}));
    for (double v : gc.values) CHECK(v == 2.5);

    const CropMap m = overlap_region({5, 5, 1}, {1, 0}, {0, 0});
    const FeatureGrid got = apply_crop_map(x, m);
    const FeatureGrid want = oracle::gather(x, {1, 0}, {0, 0});
    REQUIRE(got.same_shape(want));
    CHECK(got.values == want.values);

    CHECK_THROWS_AS(apply_crop_map(oracle::random_grid(4, 5, 3, rng), m), ShapeError);
  }

  TEST_CASE("crop map inverse is an involution on the overlap") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
      const PatchGrid g{static_cast<int>(rng.uniform_int(2, 8)), static_cast<int>(rng.uniform_int(2, 8)), 1};
      const CropMap m = overlap_region(g, sample_shift(rng, 3), sample_shift(rng, 3));
      if (m.empty()) continue;
      const CropMap inv = m.inverse();
      CHECK(inv.overlap.area() == m.overlap.area());
      for (int r = m.overlap.row0; r < m.overlap.row0 + m.overlap.rows; ++r) {
        for (int c = m.overlap.col0; c < m.overlap.col0 + m.overlap.cols; ++c) {
          const int sr = m.src_row(r), sc = m.src_col(c);
          REQUIRE(inv.overlap.contains(sr, sc));
          REQUIRE(inv.src_row(sr) == r);
          REQUIRE(inv.src_col(sc) == c);
        }
      }
    }
  }

  TEST_CASE("sample_resolution partitions") {
    Rng r(11);
    std::set<int> low, high;
    for (int i = 0; i < 10000; ++i) low.insert(sample_resolution(r, Partition::low));
    for (int i = 0; i < 2000; ++i) high.insert(sample_resolution(r, Partition::high));
    CHECK(low == std::set<int>{128, 192, 224, 256, 384, 432});
    for (int v : high) CHECK(std::set<int>{512, 768, 1024, 1152}.count(v) == 1);
    Rng a(5), b(5);
    CHECK(sample_resolution(a, Partition::low) == sample_resolution(b, Partition::low));
  }

  TEST_CASE("pack_mosaic tiles the canvas") {
    const std::vector<int> one{7};
    const MosaicLayout single = pack_mosaic(one, {12, 12, 16});
    REQUIRE(single.tiles.size() == 1);
    CHECK(single.tiles[0].rect == Rect{0, 0, 12, 12});
    CHECK(single.tiles[0].image_id == 7);

    const std::vector<int> four{0, 1, 2, 3};
    const MosaicLayout m = pack_mosaic(four, {72, 72, 16});
    REQUIRE(m.tiles.size() == 4);
    std::vector<int> cover(72 * 72, 0);
    int area = 0;
    for (const auto& t : m.tiles) {
      CHECK(t.rect.rows == 36);
      CHECK(t.rect.cols == 36);
      area += t.rect.area();
      for (int r = t.rect.row0; r < t.rect.row0 + t.rect.rows; ++r) {
        for (int c = t.rect.col0; c < t.rect.col0 + t.rect.cols; ++c) ++cover[static_cast<std::size_t>(r * 72 + c)];
      }
    }
    CHECK(area == 72 * 72);
    for (int v : cover) REQUIRE(v == 1);

    const std::vector<int> three{0, 1, 2};
    CHECK_THROWS_AS(pack_mosaic(three, {72, 72, 16}), ShapeError);
    CHECK_THROWS_AS(pack_mosaic(four, {71, 72, 16}), DivisibilityError);
  }

  TEST_CASE("views are offset crops of the canvas") {
    Image canvas(10 * 4, 10 * 4);
    Rng rng(1);
    for (auto& p : canvas.pixels) p = rng.uniform();
    const PatchGrid view{6, 6, 4};
    const Image v = view_of_canvas(canvas, view, 2, {-1, 2});
    CHECK(v.height == 24);
    CHECK(v.at(0, 0, 0) == canvas.at(4 * 1, 4 * 4, 0));
    CHECK_THROWS(view_of_canvas(canvas, view, 2, {3, 0}));
  }
}
