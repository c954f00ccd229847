// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Attention kernel and full-forward timings. Args are (grid side, window),
// window 0 meaning global.

#include "agglo/attention.hpp"
#include "agglo/images.hpp"
#include "agglo/params.hpp"
#include "agglo/student.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace agglo;

void BM_AttentionLayer(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const int window = static_cast<int>(state.range(1));
  constexpr int dim = 128;
  constexpr int heads = 4;
  const int tokens = side * side + 1;
  Rng rng(7);
  auto fill = [&](Mat& m, double s) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * s;
  };
  Mat x(tokens, dim), wqkv(dim, 3 * dim), bqkv(1, 3 * dim), wo(dim, dim), bo(1, dim);
  fill(x, 1.0);
  fill(wqkv, 0.1);
  fill(bqkv, 0.0);
  fill(wo, 0.1);
  fill(bo, 0.0);
  const AttentionWeights w{ConstMatMap(wqkv.data(), dim, 3 * dim), ConstMatMap(bqkv.data(), 1, 3 * dim),
                           ConstMatMap(wo.data(), dim, dim), ConstMatMap(bo.data(), 1, dim), heads};
  const auto groups = attention_groups(side, side, window == 0 ? AttentionWindow::global() : AttentionWindow::window(window), true);
  for (auto _ : state) {
    Mat y = attention_forward(x, w, groups, nullptr);
    benchmark::DoNotOptimize(y.data());
  }
  const AttentionWindow win = window == 0 ? AttentionWindow::global() : AttentionWindow::window(window);
  state.counters["flops"] = static_cast<double>(attention_flops({side, side, 16}, std::span(&win, 1), dim));
}

void BM_StudentForward(benchmark::State& state) {
  const int res = static_cast<int>(state.range(0));
  const bool global = state.range(1) == 0;
  const StudentConfig cfg = StudentConfig::desk_default();
  ParamLayout layout;
  const Student student(cfg, layout);
  std::vector<double> params(layout.total_size());
  Rng rng(1);
  layout.initialize(params, rng);
  const Image img = make_random_image(res, res, rng);
  const auto schedule = global ? cfg.global_schedule() : cfg.schedule;
  for (auto _ : state) {
    auto out = student.forward(params, img, schedule);
    benchmark::DoNotOptimize(out.summary.data());
  }
}

}  // namespace

BENCHMARK(BM_AttentionLayer)->Args({16, 0})->Args({16, 8})->Args({32, 0})->Args({32, 8})->Args({64, 0})->Args({64, 8})
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_StudentForward)->Args({256, 8})->Args({256, 0})->Args({512, 8})->Args({512, 0})
    ->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
