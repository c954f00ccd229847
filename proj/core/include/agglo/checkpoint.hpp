// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary training checkpoint. Little-endian throughout; every variable-length
// field carries its own u64 length so a reader never trusts the file blindly.
//
//   "AGCK" u32 version
//   student config, teacher names, params, ema (decay + shadow),
//   adam (steps, m, v), teacher stats, step, master seed

#pragma once

#include "agglo/normstats.hpp"
#include "agglo/params.hpp"
#include "agglo/student.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace agglo {

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  StudentConfig student;
  std::vector<std::string> teacher_names;
  std::vector<double> params;
  EmaState ema;
  AdamWState adam;
  std::vector<TeacherStats> stats;
  long step = 0;
  std::uint64_t seed = 0;

  bool operator==(const Checkpoint& o) const;
};

std::string serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& source = "checkpoint");

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace agglo
