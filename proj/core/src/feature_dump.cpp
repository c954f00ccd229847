// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#include "agglo/feature_dump.hpp"

#include <bit>
#include <cstring>
#include <filesystem>

namespace agglo {

namespace {

constexpr char kMagic[4] = {'R', 'F', 'D', '1'};

void put_u32(char* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

void put_f32(char* p, double v) { put_u32(p, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
double get_f32(const char* p) { return std::bit_cast<float>(get_u32(p)); }

std::uint32_t checked_u32(int v, const char* what) {
  if (v < 0) throw std::invalid_argument(std::string("dump ") + what + " must be non-negative");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::uint64_t FeatureDumpHeader::record_floats() const {
  return static_cast<std::uint64_t>(rows) * cols * channels + summary_dim;
}

std::uint64_t FeatureDumpHeader::file_bytes() const { return kBytes + 4 * record_floats() * count; }

void FeatureDumpHeader::validate() const {
  if (version != kVersion) {
    throw FormatError("unsupported RFD1 version " + std::to_string(version) + " (expected " +
                      std::to_string(kVersion) + ")");
  }
  if (static_cast<std::uint64_t>(rows) * cols == 0) throw FormatError("RFD1 header has rows*cols = 0");
  if (channels == 0) throw FormatError("RFD1 header has zero channels");
}

DumpWriter::DumpWriter(const std::string& path, int rows, int cols, int channels, int summary_dim)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  header_.rows = checked_u32(rows, "rows");
  header_.cols = checked_u32(cols, "cols");
  header_.channels = checked_u32(channels, "channels");
  header_.summary_dim = checked_u32(summary_dim, "summary_dim");
  header_.validate();
  if (!out_) throw std::runtime_error("cannot open " + path + " for writing");
  char head[FeatureDumpHeader::kBytes] = {};
  std::memcpy(head, kMagic, 4);
  put_u32(head + 4, header_.version);
  put_u32(head + 8, 0);
  put_u32(head + 12, header_.rows);
  put_u32(head + 16, header_.cols);
  put_u32(head + 20, header_.channels);
  put_u32(head + 24, header_.summary_dim);
  out_.write(head, sizeof head);
  buffer_.resize(4 * header_.record_floats());
}

DumpWriter::~DumpWriter() {
  try {
    close();
  } catch (...) {
  }
}

void DumpWriter::write(const TeacherOutput& record) {
  if (!out_.is_open()) throw std::logic_error("DumpWriter: write after close");
  const auto& f = record.features;
  if (record.summary.size() != header_.summary_dim || f.rows != static_cast<int>(header_.rows) ||
      f.cols != static_cast<int>(header_.cols) || f.channels != static_cast<int>(header_.channels)) {
    throw ShapeError("dump record " + shape_string(f) + " / summary " + std::to_string(record.summary.size()) +
                     " does not match header " + std::to_string(header_.rows) + "x" + std::to_string(header_.cols) +
                     "x" + std::to_string(header_.channels) + " / " + std::to_string(header_.summary_dim));
  }
  char* p = buffer_.data();
  for (double v : record.summary) p = (put_f32(p, v), p + 4);
  for (double v : f.values) p = (put_f32(p, v), p + 4);
  out_.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
  if (!out_) throw std::runtime_error("write failed on " + path_);
  ++header_.count;
}

void DumpWriter::close() {
  if (!out_.is_open()) return;
  char count[4];
  put_u32(count, header_.count);
  out_.seekp(8);
  out_.write(count, 4);
  out_.close();
  if (out_.fail()) throw std::runtime_error("closing " + path_ + " failed");
}

DumpReader::DumpReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw std::runtime_error("cannot open " + path);
  const auto actual = static_cast<std::uint64_t>(std::filesystem::file_size(path));
  char head[FeatureDumpHeader::kBytes];
  in_.read(head, sizeof head);
  if (in_.gcount() != static_cast<std::streamsize>(sizeof head)) {
    throw FormatError(path + ": truncated header, expected " + std::to_string(FeatureDumpHeader::kBytes) +
                      " bytes, found " + std::to_string(actual));
  }
  if (std::memcmp(head, kMagic, 4) != 0) throw FormatError(path + ": bad magic (expected RFD1)");
  header_.version = get_u32(head + 4);
  header_.count = get_u32(head + 8);
  header_.rows = get_u32(head + 12);
  header_.cols = get_u32(head + 16);
  header_.channels = get_u32(head + 20);
  header_.summary_dim = get_u32(head + 24);
  header_.validate();
  const std::uint64_t expected = header_.file_bytes();
  if (actual != expected) {
    throw FormatError(path + ": " + (actual < expected ? "truncated payload" : "trailing bytes") + ", expected " +
                      std::to_string(expected) + " bytes, found " + std::to_string(actual));
  }
  buffer_.resize(4 * header_.record_floats());
}

bool DumpReader::next(TeacherOutput& record) {
  if (read_ >= header_.count) return false;
  in_.read(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
  if (in_.gcount() != static_cast<std::streamsize>(buffer_.size())) {
    throw FormatError(path_ + ": record " + std::to_string(read_) + " truncated");
  }
  const char* p = buffer_.data();
  record.summary.resize(header_.summary_dim);
  for (auto& v : record.summary) v = get_f32(p), p += 4;
  record.features = FeatureGrid(static_cast<int>(header_.rows), static_cast<int>(header_.cols),
                                static_cast<int>(header_.channels));
  for (auto& v : record.features.values) v = get_f32(p), p += 4;
  ++read_;
  return true;
}

void write_dump(const std::string& path, std::span<const TeacherOutput> records) {
  if (records.empty()) throw std::invalid_argument("write_dump: no records");
  const auto& f = records.front().features;
  DumpWriter w(path, f.rows, f.cols, f.channels, static_cast<int>(records.front().summary.size()));
  for (const auto& r : records) w.write(r);
  w.close();
}

std::vector<TeacherOutput> read_dump(const std::string& path) {
  DumpReader r(path);
  std::vector<TeacherOutput> out;
  out.reserve(r.header().count);
  TeacherOutput rec;
  while (r.next(rec)) out.push_back(rec);
  return out;
}

}  // namespace agglo
