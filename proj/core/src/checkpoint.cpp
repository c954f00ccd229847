// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#include "agglo/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace agglo {

namespace {

constexpr char kMagic[4] = {'A', 'G', 'C', 'K'};
// Guards against corrupt length fields before any allocation happens.
constexpr std::uint64_t kMaxLength = std::uint64_t{1} << 32;

class Writer {
 public:
  void u32(std::uint32_t v) { raw(v, 4); }
  void u64(std::uint64_t v) { raw(v, 8); }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    out_ += s;
  }
  void vec(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  std::string take() { return std::move(out_); }

 private:
  void raw(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& source) : in_(bytes), source_(source) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(raw(4)); }
  std::uint64_t u64() { return raw(8); }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  int i32() { return static_cast<int>(static_cast<std::int32_t>(u32())); }
  std::uint64_t length(const char* what) {
    const std::uint64_t n = u64();
    if (n > kMaxLength || n > remaining()) {
      throw FormatError(source_ + ": corrupt length " + std::to_string(n) + " for " + what);
    }
    return n;
  }
  std::string str(const char* what) {
    const auto n = length(what);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> vec(const char* what) {
    const auto n = length(what);
    if (n * 8 > remaining()) throw FormatError(source_ + ": corrupt length " + std::to_string(n) + " for " + what);
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::uint64_t raw(int bytes) {
    if (remaining() < static_cast<std::size_t>(bytes)) throw FormatError(source_ + ": truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  const std::string& in_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

bool Checkpoint::operator==(const Checkpoint& o) const {
  return student == o.student && teacher_names == o.teacher_names && params == o.params &&
         ema.shadow == o.ema.shadow && ema.decay == o.ema.decay && adam.m == o.adam.m && adam.v == o.adam.v &&
         adam.steps == o.adam.steps && stats == o.stats && step == o.step && seed == o.seed;
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  Writer w;
  w.u32(0x4b434741u);  // "AGCK" as little-endian bytes
  w.u32(Checkpoint::kVersion);
  const auto& s = ck.student;
  for (int v : {s.patch, s.dim, s.depth, s.heads, s.mlp_ratio, s.pos_grid}) w.u32(static_cast<std::uint32_t>(v));
  w.u64(s.schedule.size());
  for (const auto& win : s.schedule) w.u32(static_cast<std::uint32_t>(win.size));
  w.u64(ck.teacher_names.size());
  for (const auto& n : ck.teacher_names) w.str(n);
  w.vec(ck.params);
  w.f64(ck.ema.decay);
  w.vec(ck.ema.shadow);
  w.i64(ck.adam.steps);
  w.vec(ck.adam.m);
  w.vec(ck.adam.v);
  w.u64(ck.stats.size());
  for (const auto& st : ck.stats) {
    w.vec(st.channel_mean);
    w.vec(st.channel_scale);
    w.vec(st.mean_dir);
    w.f64(st.dispersion);
    w.u64(st.sample_count);
  }
  w.i64(ck.step);
  w.u64(ck.seed);
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& source) {
  Reader r(bytes, source);
  if (bytes.size() < 8 || bytes.compare(0, 4, kMagic, 4) != 0) throw FormatError(source + ": not a checkpoint (bad magic)");
  r.u32();
  const auto version = r.u32();
  if (version != Checkpoint::kVersion) {
    throw FormatError(source + ": checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(Checkpoint::kVersion) + ")");
  }
  Checkpoint ck;
  auto& s = ck.student;
  s.patch = r.i32();
  s.dim = r.i32();
  s.depth = r.i32();
  s.heads = r.i32();
  s.mlp_ratio = r.i32();
  s.pos_grid = r.i32();
  const auto layers = r.length("schedule");
  s.schedule.resize(layers);
  for (auto& win : s.schedule) win.size = r.i32();
  const auto names = r.length("teacher names");
  for (std::uint64_t i = 0; i < names; ++i) ck.teacher_names.push_back(r.str("teacher name"));
  ck.params = r.vec("params");
  ck.ema.decay = r.f64();
  ck.ema.shadow = r.vec("ema shadow");
  ck.adam.steps = r.i64();
  ck.adam.m = r.vec("adam m");
  ck.adam.v = r.vec("adam v");
  const auto nstats = r.length("teacher stats");
  for (std::uint64_t i = 0; i < nstats; ++i) {
    TeacherStats st;
    st.channel_mean = r.vec("channel mean");
    st.channel_scale = r.vec("channel scale");
    st.mean_dir = r.vec("mean dir");
    st.dispersion = r.f64();
    st.sample_count = r.u64();
    ck.stats.push_back(std::move(st));
  }
  ck.step = r.i64();
  ck.seed = r.u64();
  if (r.remaining() != 0) throw FormatError(source + ": " + std::to_string(r.remaining()) + " trailing bytes");
  if (ck.ema.shadow.size() != ck.params.size() || ck.adam.m.size() != ck.params.size() ||
      ck.adam.v.size() != ck.params.size()) {
    throw FormatError(source + ": parameter, EMA and optimizer sizes disagree");
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const std::string bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str(), path);
}

}  // namespace agglo
