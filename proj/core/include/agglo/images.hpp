// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Procedural images for desk-scale training and evaluation.

#pragma once

#include "agglo/rng.hpp"
#include "agglo/tensor.hpp"

#include <vector>

namespace agglo {

/// Random image whose distribution is translation invariant: random-phase
/// plane waves, wrap-around rectangles and white noise. Per-position
/// statistics therefore carry no positional signal.
Image make_random_image(int height, int width, Rng& rng);

/// Image whose dominant wave frequency, orientation and palette depend on
/// `label`, plus per-sample phase, distractors and noise.
Image make_class_image(int height, int width, int label, int num_classes, Rng& rng);

struct LabeledImage {
  Image image;
  int label = 0;
};

/// `per_class` images for each of `num_classes` labels, interleaved by label.
std::vector<LabeledImage> make_labeled_set(int resolution, int num_classes, int per_class, std::uint64_t seed);

}  // namespace agglo
