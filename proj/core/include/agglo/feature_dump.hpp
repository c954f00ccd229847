// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0
//
// RFD1: a flat little-endian float32 dump of teacher outputs, so features
// computed by an external network can be replayed as a teacher.
//
//   offset 0   "RFD1"
//   offset 4   u32 version (1)
//   offset 8   u32 count
//   offset 12  u32 rows
//   offset 16  u32 cols
//   offset 20  u32 channels
//   offset 24  u32 summary_dim
//   offset 28  count records of summary_dim floats then rows*cols*channels floats

#pragma once

#include "agglo/teachers.hpp"

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace agglo {

struct FeatureDumpHeader {
  static constexpr std::uint32_t kVersion = 1;
  static constexpr std::size_t kBytes = 28;

  std::uint32_t version = kVersion;
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::uint32_t channels = 0;
  std::uint32_t summary_dim = 0;

  std::uint64_t record_floats() const;
  std::uint64_t file_bytes() const;
  void validate() const;
};

class DumpWriter {
 public:
  DumpWriter(const std::string& path, int rows, int cols, int channels, int summary_dim);
  ~DumpWriter();
  DumpWriter(const DumpWriter&) = delete;
  DumpWriter& operator=(const DumpWriter&) = delete;

  void write(const TeacherOutput& record);
  /// Patches the record count into the header and closes the file.
  void close();

 private:
  std::string path_;
  std::ofstream out_;
  FeatureDumpHeader header_;
  std::vector<char> buffer_;
};

class DumpReader {
 public:
  explicit DumpReader(const std::string& path);

  const FeatureDumpHeader& header() const { return header_; }
  /// False once every record has been read.
  bool next(TeacherOutput& record);

 private:
  std::string path_;
  std::ifstream in_;
  FeatureDumpHeader header_;
  std::uint32_t read_ = 0;
  std::vector<char> buffer_;
};

void write_dump(const std::string& path, std::span<const TeacherOutput> records);
std::vector<TeacherOutput> read_dump(const std::string& path);

}  // namespace agglo
