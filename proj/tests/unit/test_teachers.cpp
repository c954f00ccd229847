// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#include "agglo/feature_dump.hpp"
#include "agglo/normstats.hpp"
#include "agglo/teachers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

using namespace agglo;
namespace fs = std::filesystem;

namespace {

Image random_image(int h, int w, Rng& rng) {
  Image img(h, w);
  for (auto& p : img.pixels) p = rng.uniform();
  return img;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "agglo_unit_teachers";
  fs::create_directories(dir);
  return dir / name;
}

SyntheticTeacherSpec small_spec() {
  SyntheticTeacherSpec s;
  s.name = "t";
  s.channels = 6;
  s.summary_dim = 8;
  s.patch = 8;
  return s;
}

}  // namespace

TEST_SUITE("teachers") {
  TEST_CASE("semantic content follows patch-aligned crops") {
    Rng rng(1);
    const SyntheticTeacher t(small_spec());
    const Image img = random_image(64, 64, rng);
    const FeatureGrid full = t.semantic(img);
    const FeatureGrid part = t.semantic(img.crop(16, 8, 32, 40));
    REQUIRE(part.rows == 4);
    REQUIRE(part.cols == 5);
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 5; ++c) {
        for (int k = 0; k < 6; ++k) CHECK(part.at(r, c, k) == doctest::Approx(full.at(r + 2, c + 1, k)).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("a blank image yields exactly the bias term") {
    SyntheticTeacherSpec s = small_spec();
    s.bias_amplitude = 1.7;
    const SyntheticTeacher t(s);
    const TeacherOutput out = t.forward(Image(48, 64));
    const FeatureGrid g = t.bias_field(6, 8);
    REQUIRE(out.features.same_shape(g));
    for (std::size_t i = 0; i < g.values.size(); ++i) CHECK(out.features.values[i] == doctest::Approx(1.7 * g.values[i]));

    // The bias is tied to the frame, not the content.
    Rng rng(2);
    const Image img = random_image(48, 64, rng);
    const FeatureGrid f = t.semantic(img);
    const TeacherOutput y = t.forward(img);
    for (std::size_t i = 0; i < g.values.size(); ++i) {
      CHECK(y.features.values[i] == doctest::Approx(f.values[i] + 1.7 * g.values[i]));
    }
  }

  TEST_CASE("bias field ring and determinism") {
    SyntheticTeacherSpec s = small_spec();
    s.ring_amplitude = 3.0;
    const SyntheticTeacher a(s), b(s);
    CHECK(a.bias_field(7, 9).values == b.bias_field(7, 9).values);
    const FeatureGrid g = a.bias_field(8, 8);
    double border = 0.0, inner = 0.0;
    for (int r = 0; r < 8; ++r) {
      for (int c = 0; c < 8; ++c) {
        double e = 0.0;
        for (double v : g.vec(r, c)) e += v * v;
        (r == 0 || c == 0 || r == 7 || c == 7 ? border : inner) += e;
      }
    }
    CHECK(border / 28.0 > inner / 36.0);
  }

  TEST_CASE("summaries are deterministic per image and unit length") {
    Rng rng(3);
    const SyntheticTeacher t(small_spec());
    const Image img = random_image(32, 32, rng);
    const auto s1 = t.summary_for(img);
    const auto s2 = t.summary_for(img);
    CHECK(s1 == s2);
    double n = 0.0;
    for (double v : s1) n += v * v;
    CHECK(n == doctest::Approx(1.0));
    CHECK(angle_between(s1, t.direction()) <= t.spec().cone_angle + 1e-9);
  }

  TEST_CASE("cone calibration hits its target within 10%") {
    for (const double target : {0.05, 0.694, 2.186}) {
      const double angle = calibrate_cone_angle(128, target, 2048, 11);
      const double measured = measure_cone_dispersion(128, angle, 4096, 99);
      CHECK(measured / target == doctest::Approx(1.0).epsilon(0.1));
    }
    CHECK_THROWS(calibrate_cone_angle(4, 2.5, 512, 1));
    CHECK_THROWS(calibrate_cone_angle(16, 0.0, 512, 1));
    CHECK(measure_cone_dispersion(16, 0.1, 512, 1) < measure_cone_dispersion(16, 0.5, 512, 1));
  }

  TEST_CASE("fixed-resolution teachers") {
    SyntheticTeacherSpec s = small_spec();
    s.native = NativeKind::fixed;
    s.native_pixels = 48;
    s.bias_amplitude = 0.5;
    const SyntheticTeacher t(s);
    CHECK_THROWS_AS(t.forward(Image(32, 32)), ShapeError);
    CHECK_THROWS(t.forward_view(Image(48, 48)));
    Rng rng(4);

    // One tile: identical to a direct evaluation.
    const std::vector<int> one{0};
    const MosaicLayout l1 = pack_mosaic(one, {6, 6, 8});
    const std::vector<Image> tile{random_image(48, 48, rng)};
    const auto out1 = fixedres_forward(t, tile, l1);
    const TeacherOutput direct = t.forward(tile[0]);
    CHECK(out1[0].features.values == direct.features.values);
    CHECK(out1[0].summary == direct.summary);

    // Nine tiles: each is its own content plus the crop of the canvas bias.
    const std::vector<int> ids{0, 1, 2, 3, 4, 5, 6, 7, 8};
    const MosaicLayout l3 = pack_mosaic(ids, {6, 6, 8});
    std::vector<Image> tiles;
    for (int i = 0; i < 9; ++i) tiles.push_back(random_image(16, 16, rng));
    const auto out3 = fixedres_forward(t, tiles, l3);
    const FeatureGrid g = t.bias_field(6, 6);
    for (std::size_t i = 0; i < 9; ++i) {
      const FeatureGrid f = t.semantic(tiles[i]);
      const Rect& r = l3.tiles[i].rect;
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
          for (int k = 0; k < 6; ++k) {
            CHECK(out3[i].features.at(a, b, k) ==
                  doctest::Approx(f.at(a, b, k) + 0.5 * g.at(r.row0 + a, r.col0 + b, k)).epsilon(1e-12));
          }
        }
      }
    }
    tiles.pop_back();
    CHECK_THROWS_AS(fixedres_forward(t, tiles, l3), ShapeError);
  }

  TEST_CASE("upsample_features uses half-pixel centers") {
    FeatureGrid f(2, 2, 1);
    f.at(0, 0, 0) = 0.0;
    f.at(0, 1, 0) = 1.0;
    f.at(1, 0, 0) = 1.0;
    f.at(1, 1, 0) = 2.0;
    const FeatureGrid up = upsample_features(f, 2);
    // Output centers land at source coordinates -0.25, 0.25, 0.75, 1.25,
    // clamped to [0, 1]; the field r + c is linear so it interpolates exactly.
    const double pos[4] = {0.0, 0.25, 0.75, 1.0};
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) CHECK(up.at(r, c, 0) == doctest::Approx(pos[r] + pos[c]));
    }
    const FeatureGrid up3 = upsample_features(f, 3);
    const double pos3[6] = {0.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 1.0};
    REQUIRE(up3.rows == 6);
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c < 6; ++c) CHECK(up3.at(r, c, 0) == doctest::Approx(pos3[r] + pos3[c]));
    }
    CHECK(upsample_features(f, 1).values == f.values);
    CHECK_THROWS(upsample_features(f, 0));
  }

  TEST_CASE("low-native teachers downsample then upsample") {
    SyntheticTeacherSpec s = small_spec();
    s.native = NativeKind::low;
    s.native_pixels = 32;
    s.bias_amplitude = 1.0;
    const SyntheticTeacher t(s);
    Rng rng(5);
    const Image small = random_image(32, 32, rng);
    CHECK(t.forward_view(small).features.values == t.forward(small).features.values);
    const Image big = random_image(64, 64, rng);
    const TeacherOutput v = t.forward_view(big);
    const FeatureGrid expect = upsample_features(t.forward(big.downsample(2)).features, 2);
    CHECK(v.features.rows == 8);
    CHECK(v.features.values == expect.values);
    CHECK_THROWS_AS(t.forward_view(random_image(48, 48, rng)), DivisibilityError);
  }

  TEST_CASE("spec validation") {
    SyntheticTeacherSpec s = small_spec();
    CHECK_NOTHROW(s.validate());
    s.native = NativeKind::fixed;
    CHECK_THROWS(s.validate());
    s.native_pixels = 20;
    CHECK_THROWS(s.validate());
    s = small_spec();
    s.channels = 0;
    CHECK_THROWS(s.validate());
    CHECK(parse_native_kind("low") == NativeKind::low);
    CHECK(std::string(native_kind_name(NativeKind::fixed)) == "fixed");
    CHECK_THROWS(parse_native_kind("huge"));
  }
}

TEST_SUITE("feature_dump") {
  TEST_CASE("round trip") {
    Rng rng(6);
    const SyntheticTeacher t(small_spec());
    std::vector<TeacherOutput> recs;
    for (int i = 0; i < 3; ++i) recs.push_back(t.forward(random_image(24, 32, rng)));
    const fs::path p = scratch("round.rfd");
    write_dump(p.string(), recs);
    CHECK(fs::file_size(p) == 28 + 3 * (8 + 3 * 4 * 6) * 4);
    const auto back = read_dump(p.string());
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(back[i].features.rows == 3);
      CHECK(back[i].features.cols == 4);
      for (std::size_t k = 0; k < recs[i].features.values.size(); ++k) {
        CHECK(back[i].features.values[k] == static_cast<double>(static_cast<float>(recs[i].features.values[k])));
      }
      for (std::size_t k = 0; k < recs[i].summary.size(); ++k) {
        CHECK(back[i].summary[k] == static_cast<double>(static_cast<float>(recs[i].summary[k])));
      }
    }
  }

  TEST_CASE("header bytes are little-endian") {
    const fs::path p = scratch("header.rfd");
    TeacherOutput r;
    r.summary = {1.0};
    r.features = FeatureGrid(1, 2, 1, 0.5);
    write_dump(p.string(), std::vector<TeacherOutput>{r});
    std::ifstream in(p, std::ios::binary);
    unsigned char b[28];
    in.read(reinterpret_cast<char*>(b), 28);
    CHECK(std::memcmp(b, "RFD1", 4) == 0);
    CHECK(b[4] == 1);
    CHECK(b[8] == 1);
    CHECK(b[12] == 1);
    CHECK(b[16] == 2);
    CHECK(b[20] == 1);
    CHECK(b[24] == 1);
  }

  TEST_CASE("truncated, empty-grid and bad-magic files are rejected") {
    Rng rng(7);
    const SyntheticTeacher t(small_spec());
    const std::vector<TeacherOutput> recs{t.forward(random_image(16, 16, rng)), t.forward(random_image(16, 16, rng))};
    const fs::path p = scratch("trunc.rfd");
    write_dump(p.string(), recs);
    const auto full = fs::file_size(p);
    fs::resize_file(p, full - 5);
    try {
      read_dump(p.string());
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      CHECK(msg.find(std::to_string(full)) != std::string::npos);
      CHECK(msg.find(std::to_string(full - 5)) != std::string::npos);
    }

    const fs::path z = scratch("zero.rfd");
    {
      std::ofstream out(z, std::ios::binary);
      const std::uint32_t h[6] = {1, 0, 0, 4, 2, 2};
      out.write("RFD1", 4);
      out.write(reinterpret_cast<const char*>(h), sizeof h);
    }
    CHECK_THROWS_AS(read_dump(z.string()), FormatError);

    const fs::path m = scratch("magic.rfd");
    {
      std::ofstream out(m, std::ios::binary);
      out << "XXXX" << std::string(24, '\0');
    }
    CHECK_THROWS_AS(read_dump(m.string()), FormatError);
    CHECK_THROWS(read_dump(scratch("missing.rfd").string()));
  }

  TEST_CASE("writer rejects mismatched records") {
    const fs::path p = scratch("mismatch.rfd");
    DumpWriter w(p.string(), 2, 2, 3, 4);
    TeacherOutput r;
    r.summary.assign(4, 0.0);
    r.features = FeatureGrid(2, 3, 3);
    CHECK_THROWS_AS(w.write(r), ShapeError);
    w.close();
  }
}
