// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#include "agglo/images.hpp"

#include <cmath>
#include <numbers>

namespace agglo {

namespace {

struct Wave {
  double fy, fx, phase;
  double amp[Image::kChannels];
};

void add_waves(Image& img, const std::vector<Wave>& waves) {
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (const auto& w : waves) {
        const double s = std::sin(2.0 * std::numbers::pi * (w.fy * y + w.fx * x) + w.phase);
        for (int c = 0; c < Image::kChannels; ++c) img.at(y, x, c) += w.amp[c] * s;
      }
    }
  }
}

void add_wrapped_rect(Image& img, Rng& rng, double intensity) {
  const int h = static_cast<int>(rng.uniform_int(std::max(1, img.height / 16), std::max(1, img.height / 4)));
  const int w = static_cast<int>(rng.uniform_int(std::max(1, img.width / 16), std::max(1, img.width / 4)));
  const int y0 = static_cast<int>(rng.uniform_int(0, img.height - 1));
  const int x0 = static_cast<int>(rng.uniform_int(0, img.width - 1));
  double color[Image::kChannels];
  for (auto& c : color) c = rng.uniform(-intensity, intensity);
  for (int dy = 0; dy < h; ++dy) {
    for (int dx = 0; dx < w; ++dx) {
      const int y = (y0 + dy) % img.height, x = (x0 + dx) % img.width;
      for (int c = 0; c < Image::kChannels; ++c) img.at(y, x, c) += color[c];
    }
  }
}

void add_noise(Image& img, Rng& rng, double sigma) {
  for (auto& p : img.pixels) p += sigma * rng.normal();
}

}  // namespace

Image make_random_image(int height, int width, Rng& rng) {
  Image img(height, width);
  std::vector<Wave> waves(4);
  for (auto& w : waves) {
    const double freq = rng.uniform(1.0 / 48.0, 1.0 / 6.0);
    const double theta = rng.uniform(0.0, std::numbers::pi);
    w.fy = freq * std::sin(theta);
    w.fx = freq * std::cos(theta);
    w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (auto& a : w.amp) a = rng.uniform(-0.5, 0.5);
  }
  add_waves(img, waves);
  const int rects = static_cast<int>(rng.uniform_int(1, 4));
  for (int i = 0; i < rects; ++i) add_wrapped_rect(img, rng, 1.0);
  add_noise(img, rng, 0.05);
  return img;
}

Image make_class_image(int height, int width, int label, int num_classes, Rng& rng) {
  Rng class_rng(derive_seed(0x5eedc1a55ULL, static_cast<std::uint64_t>(label)));
  Image img(height, width);
  Wave main;
  const double freq = 1.0 / (5.0 + 3.0 * label);
  const double theta = std::numbers::pi * label / std::max(1, num_classes);
  main.fy = freq * std::sin(theta);
  main.fx = freq * std::cos(theta);
  main.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (auto& a : main.amp) a = class_rng.uniform(-1.0, 1.0);
  Wave distractor;
  const double dfreq = rng.uniform(1.0 / 48.0, 1.0 / 6.0);
  const double dtheta = rng.uniform(0.0, std::numbers::pi);
  distractor.fy = dfreq * std::sin(dtheta);
  distractor.fx = dfreq * std::cos(dtheta);
  distractor.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (auto& a : distractor.amp) a = rng.uniform(-0.3, 0.3);
  add_waves(img, {main, distractor});
  add_wrapped_rect(img, rng, 0.5);
  add_noise(img, rng, 0.1);
  return img;
}

std::vector<LabeledImage> make_labeled_set(int resolution, int num_classes, int per_class, std::uint64_t seed) {
  std::vector<LabeledImage> out;
  out.reserve(static_cast<std::size_t>(num_classes) * per_class);
  for (int i = 0; i < per_class; ++i) {
    for (int label = 0; label < num_classes; ++label) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i * num_classes + label)));
      out.push_back({make_class_image(resolution, resolution, label, num_classes, rng), label});
    }
  }
  return out;
}

}  // namespace agglo
