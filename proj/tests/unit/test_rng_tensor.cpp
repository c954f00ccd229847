// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#include "agglo/rng.hpp"
#include "agglo/tensor.hpp"
#include "oracles.hpp"

#include <doctest.h>

using namespace agglo;

TEST_SUITE("rng") {
  TEST_CASE("splitmix64 matches the reference sequence") {
    std::uint64_t s = 0;
    CHECK(splitmix64(s) == 0xe220a8397b1dcdafULL);
    CHECK(splitmix64(s) == 0x6e789e6aa1b965f4ULL);
  }

  TEST_CASE("identical seeds replay, derived seeds diverge") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    CHECK(derive_seed(1, "data") != derive_seed(1, "shifts"));
    CHECK(derive_seed(1, std::uint64_t{0}) != derive_seed(1, std::uint64_t{1}));
    CHECK(derive_seed(1, "data") == derive_seed(1, "data"));
  }

  TEST_CASE("uniform_int covers its closed range") {
    Rng r(3);
    std::vector<int> seen(5, 0);
    for (int i = 0; i < 5000; ++i) {
      const auto v = r.uniform_int(-2, 2);
      REQUIRE(v >= -2);
      REQUIRE(v <= 2);
      ++seen[static_cast<std::size_t>(v + 2)];
    }
    for (int c : seen) CHECK(c > 800);
  }

  TEST_CASE("normal draws have unit moments") {
    Rng r(9);
    const int n = 200000;
    double m = 0.0, m2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x = r.normal();
      m += x;
      m2 += x * x;
    }
    m /= n;
    m2 /= n;
    CHECK(std::abs(m) < 0.01);
    CHECK(std::abs(m2 - 1.0) < 0.015);
  }
}

TEST_SUITE("tensor") {
  TEST_CASE("bilinear resize: identity, constants, adjoint") {
    Rng rng(5);
    const FeatureGrid g = oracle::random_grid(5, 7, 3, rng);
    CHECK(resize_bilinear(g, 5, 7).values == g.values);

    FeatureGrid c(3, 4, 2, 1.25);
    for (double v : resize_bilinear(c, 9, 5).values) CHECK(v == doctest::Approx(1.25).epsilon(1e-12));

    // <R a, b> == <a, R^T b>
    const FeatureGrid a = oracle::random_grid(4, 6, 2, rng);
    const FeatureGrid b = oracle::random_grid(9, 5, 2, rng);
    const FeatureGrid ra = resize_bilinear(a, 9, 5);
    const FeatureGrid rtb = resize_bilinear_adjoint(b, 4, 6);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < ra.values.size(); ++i) lhs += ra.values[i] * b.values[i];
    for (std::size_t i = 0; i < a.values.size(); ++i) rhs += a.values[i] * rtb.values[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }

  TEST_CASE("image crop, paste and downsample") {
    Image img(6, 8);
    Rng rng(1);
    for (auto& p : img.pixels) p = rng.uniform();
    const Image tile = img.crop(2, 3, 4, 5);
    CHECK(tile.at(0, 0, 1) == img.at(2, 3, 1));
    Image blank(6, 8);
    blank.paste(tile, 2, 3);
    CHECK(blank.at(5, 7, 2) == img.at(5, 7, 2));
    CHECK(blank.at(0, 0, 0) == 0.0);

    Image flat(4, 4, 0.5);
    const Image half = flat.downsample(2);
    CHECK(half.height == 2);
    for (double v : half.pixels) CHECK(v == doctest::Approx(0.5));
    CHECK_THROWS_AS(img.crop(4, 0, 4, 4), ShapeError);
  }
}
