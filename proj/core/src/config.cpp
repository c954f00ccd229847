// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#include "agglo/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace agglo {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

// Typed access to one section; remembers which keys were consumed so that
// leftovers can be reported as unknown.
class SectionReader {
 public:
  SectionReader(const IniDocument& doc, const IniSection& sec) : doc_(doc), sec_(sec) {}

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    const auto it = sec_.values.find(key);
    const int line = it == sec_.values.end() ? sec_.line : it->second.line;
    throw ConfigError(doc_.source + ":" + std::to_string(line) + ": [" + sec_.name + "] " + key + ": " + what);
  }

  const IniValue* raw(const std::string& key) {
    used_.insert(key);
    const auto it = sec_.values.find(key);
    return it == sec_.values.end() ? nullptr : &it->second;
  }

  void get(const std::string& key, int& out, int min, int max = std::numeric_limits<int>::max()) {
    const IniValue* v = raw(key);
    if (!v) return;
    int x = 0;
    const auto* b = v->text.data();
    const auto* e = b + v->text.size();
    const auto r = std::from_chars(b, e, x);
    if (r.ec != std::errc() || r.ptr != e) fail(key, "expected an integer, got '" + v->text + "'");
    if (x < min || x > max) {
      fail(key, "must lie in [" + std::to_string(min) + ", " + std::to_string(max) + "], got " + v->text);
    }
    out = x;
  }

  void get(const std::string& key, std::uint64_t& out) {
    const IniValue* v = raw(key);
    if (!v) return;
    std::uint64_t x = 0;
    const auto* b = v->text.data();
    const auto* e = b + v->text.size();
    const auto r = std::from_chars(b, e, x);
    if (r.ec != std::errc() || r.ptr != e) fail(key, "expected an unsigned integer, got '" + v->text + "'");
    out = x;
  }

  void get(const std::string& key, double& out, double min, double max = HUGE_VAL) {
    const IniValue* v = raw(key);
    if (!v) return;
    char* end = nullptr;
    const double x = std::strtod(v->text.c_str(), &end);
    if (v->text.empty() || *end != '\0' || !std::isfinite(x)) fail(key, "expected a number, got '" + v->text + "'");
    if (x < min || x > max) fail(key, "must lie in [" + fmt_double(min) + ", " + fmt_double(max) + "], got " + v->text);
    out = x;
  }

  void get(const std::string& key, bool& out) {
    const IniValue* v = raw(key);
    if (!v) return;
    if (v->text == "true" || v->text == "1" || v->text == "on") {
      out = true;
    } else if (v->text == "false" || v->text == "0" || v->text == "off") {
      out = false;
    } else {
      fail(key, "expected true or false, got '" + v->text + "'");
    }
  }

  void get(const std::string& key, std::string& out) {
    if (const IniValue* v = raw(key)) out = v->text;
  }

  void get_list(const std::string& key, std::vector<int>& out, int min) {
    const IniValue* v = raw(key);
    if (!v) return;
    std::vector<int> xs;
    std::stringstream ss(v->text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      int x = 0;
      const auto r = std::from_chars(item.data(), item.data() + item.size(), x);
      if (item.empty() || r.ec != std::errc() || r.ptr != item.data() + item.size()) {
        fail(key, "expected a comma-separated integer list, got '" + v->text + "'");
      }
      if (x < min) fail(key, "entries must be >= " + std::to_string(min) + ", got " + item);
      xs.push_back(x);
    }
    out = std::move(xs);
  }

  template <class Enum, class Parse>
  void get_enum(const std::string& key, Enum& out, Parse parse, const char* choices) {
    const IniValue* v = raw(key);
    if (!v) return;
    try {
      out = parse(v->text);
    } catch (const std::invalid_argument&) {
      fail(key, std::string("expected one of ") + choices + ", got '" + v->text + "'");
    }
  }

  void reject_unknown() const {
    for (const auto& [key, value] : sec_.values) {
      if (!used_.count(key)) {
        throw ConfigError(doc_.source + ":" + std::to_string(value.line) + ": unknown key '" + key + "' in [" +
                          sec_.name + "]");
      }
    }
  }

 private:
  const IniDocument& doc_;
  const IniSection& sec_;
  std::set<std::string> used_;
};

SummaryLossKind parse_summary_loss(const std::string& s) {
  if (s == "angle") return SummaryLossKind::angle;
  if (s == "cosine") return SummaryLossKind::cosine;
  throw std::invalid_argument(s);
}

TrainAttention parse_train_attention(const std::string& s) {
  if (s == "global") return TrainAttention::global;
  if (s == "schedule") return TrainAttention::schedule;
  throw std::invalid_argument(s);
}

constexpr double kMaxCone = 1.5707963267948966;

}  // namespace

IniDocument parse_ini(const std::string& text, const std::string& source) {
  IniDocument doc;
  doc.source = source;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  IniSection* current = nullptr;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(source + ":" + std::to_string(lineno) + ": unterminated section header");
      IniSection sec;
      sec.name = trim(std::string_view(s).substr(1, s.size() - 2));
      sec.line = lineno;
      if (sec.name.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty section name");
      if (!seen.insert(sec.name).second) {
        throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate section [" + sec.name + "]");
      }
      doc.sections.push_back(std::move(sec));
      current = &doc.sections.back();
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + s + "'");
    }
    if (!current) throw ConfigError(source + ":" + std::to_string(lineno) + ": key outside of any section");
    std::string key = trim(std::string_view(s).substr(0, eq));
    std::string value = trim(std::string_view(s).substr(eq + 1));
    if (const auto hash = value.find(" #"); hash != std::string::npos) value = trim(value.substr(0, hash));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (current->values.count(key)) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "' in [" +
                        current->name + "]");
    }
    current->values[key] = IniValue{value, lineno};
  }
  return doc;
}

SeedStreams SeedStreams::from_master(std::uint64_t master) {
  return {derive_seed(master, "data"), derive_seed(master, "shifts"), derive_seed(master, "damp"),
          derive_seed(master, "init"), derive_seed(master, "calib")};
}

LossWeights RunConfig::loss_weights() const {
  LossWeights w;
  w.mesa = w_mesa;
  for (const auto& t : teachers) w.teachers.push_back(t.weights);
  return w;
}

int RunConfig::teacher_index(const std::string& name) const {
  for (std::size_t i = 0; i < teachers.size(); ++i) {
    if (teachers[i].spec.name == name) return static_cast<int>(i);
  }
  return -1;
}

void RunConfig::validate() const {
  auto bad = [](const std::string& what) { throw ConfigError(what); };
  if (steps < 1) bad("[run] steps: must be >= 1");
  if (batch < 1) bad("[run] batch: must be >= 1");
  if (!(high_fraction >= 0.0 && high_fraction <= 1.0)) bad("[run] high_fraction: must lie in [0, 1]");
  if (high_fraction < 1.0 && low_resolutions.empty()) bad("[run] low_resolutions: empty but high_fraction < 1");
  if (high_fraction > 0.0 && high_resolutions.empty()) bad("[run] high_resolutions: empty but high_fraction > 0");
  if (teachers.empty()) bad("config declares no [teacher.NAME] section");
  try {
    student.validate();
  } catch (const std::exception& e) {
    bad(std::string("[student] ") + e.what());
  }
  for (const auto* list : {&low_resolutions, &high_resolutions}) {
    for (int r : *list) {
      if (r % student.patch != 0) {
        bad("[run] resolution " + std::to_string(r) + " is not a multiple of the student patch " +
            std::to_string(student.patch));
      }
      const int grid = r / student.patch;
      if (grid <= 2 * max_shift && max_shift > 0) {
        bad("[run] resolution " + std::to_string(r) + " gives a " + std::to_string(grid) +
            "-patch grid, too small for max_shift " + std::to_string(max_shift));
      }
    }
  }
  std::set<std::string> names;
  for (const auto& t : teachers) {
    const std::string where = "[teacher." + t.spec.name + "] ";
    if (!names.insert(t.spec.name).second) bad(where + "duplicate teacher name");
    try {
      t.spec.validate();
    } catch (const std::exception& e) {
      bad(where + e.what());
    }
    if (t.spec.patch != student.patch) bad(where + "patch must equal the student patch");
    if (t.weights.spatial < 0 || t.weights.summary < 0) bad(where + "loss weights must be >= 0");
  }
  if (eval.knn_k < 1) bad("[eval] knn_k: must be >= 1");
  if (bench.trials < 5) bad("[bench] trials: must be >= 5");
  if (bench.warmup < 2) bad("[bench] warmup: must be >= 2");
  try {
    loss_weights().validate();
  } catch (const std::invalid_argument& e) {
    bad(e.what());
  }
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  const IniDocument doc = parse_ini(text, source);
  RunConfig cfg;
  bool schedule_given = false;
  int window = 8;
  std::vector<int> global_layers;
  for (const auto& sec : doc.sections) {
    SectionReader r(doc, sec);
    if (sec.name == "run") {
      r.get("steps", cfg.steps, 1);
      r.get("batch", cfg.batch, 1);
      r.get("high_fraction", cfg.high_fraction, 0.0, 1.0);
      r.get_list("low_resolutions", cfg.low_resolutions, 1);
      r.get_list("high_resolutions", cfg.high_resolutions, 1);
      r.get("max_shift", cfg.max_shift, 0);
      r.get("ema_decay", cfg.ema_decay, 0.0, 1.0);
      r.get("w_mesa", cfg.w_mesa, 0.0);
      r.get_enum("summary_loss", cfg.summary_loss, parse_summary_loss, "angle, cosine");
      r.get_enum("train_attention", cfg.train_attention, parse_train_attention, "global, schedule");
      r.get("damp", cfg.damp.enabled);
      r.get("damp_sigma", cfg.damp.sigma, 0.0);
      r.get("lr", cfg.optim.lr, 0.0);
      r.get("beta1", cfg.optim.beta1, 0.0, 1.0);
      r.get("beta2", cfg.optim.beta2, 0.0, 1.0);
      r.get("adam_eps", cfg.optim.eps, 0.0);
      r.get("weight_decay", cfg.optim.weight_decay, 0.0);
      r.get("seed", cfg.seed);
      r.get("calib_samples", cfg.calib_samples, 2);
      r.get("calib_resolution", cfg.calib_resolution, 1);
      r.get("checkpoint_every", cfg.checkpoint_every, 0);
    } else if (sec.name == "student") {
      auto& s = cfg.student;
      r.get("patch", s.patch, 1);
      r.get("dim", s.dim, 1);
      r.get("depth", s.depth, 1);
      r.get("heads", s.heads, 1);
      r.get("mlp_ratio", s.mlp_ratio, 1);
      r.get("pos_grid", s.pos_grid, 2);
      if (r.raw("window") || r.raw("global_layers")) schedule_given = true;
      r.get("window", window, 0);
      global_layers = {2, 4, 6, 8};
      r.get_list("global_layers", global_layers, 1);
      if (schedule_given) {
        for (int l : global_layers) {
          if (l > s.depth) r.fail("global_layers", "layer " + std::to_string(l) + " exceeds depth " + std::to_string(s.depth));
        }
      }
    } else if (sec.name == "bench") {
      r.get("variant", cfg.bench.variant);
      r.get_list("resolutions", cfg.bench.resolutions, 1);
      r.get_list("windows", cfg.bench.windows, 0);
      r.get("warmup", cfg.bench.warmup, 2);
      r.get("trials", cfg.bench.trials, 5);
    } else if (sec.name == "eval") {
      auto& e = cfg.eval;
      r.get("resolution", e.resolution, 1);
      r.get("classes", e.classes, 2);
      r.get("per_class", e.per_class, 1);
      r.get("knn_k", e.knn_k, 1);
      r.get("probe_lambda", e.probe_lambda, 1e-12);
      r.get("train_fraction", e.train_fraction, 0.05, 0.95);
      r.get("fpn_images", e.fpn_images, 2);
      r.get("pca_images", e.pca_images, 1);
    } else if (sec.name.rfind("teacher.", 0) == 0) {
      TeacherConfig t;
      t.spec.name = sec.name.substr(8);
      if (t.spec.name.empty()) r.fail("", "teacher section needs a name");
      t.spec.patch = cfg.student.patch;
      r.get("channels", t.spec.channels, 1);
      r.get("summary_dim", t.spec.summary_dim, 2);
      r.get("patch", t.spec.patch, 1);
      r.get("semantic_seed", t.spec.semantic_seed);
      r.get("bias_amplitude", t.spec.bias_amplitude, 0.0);
      r.get("bias_period", t.spec.bias_period, 1e-9);
      r.get("ring_amplitude", t.spec.ring_amplitude, 0.0);
      r.get("cone_angle", t.spec.cone_angle, 0.0, kMaxCone);
      if (t.spec.cone_angle >= kMaxCone) r.fail("cone_angle", "must be < pi/2");
      r.get_enum("native", t.spec.native, parse_native_kind, "variable, fixed, low");
      r.get("native_pixels", t.spec.native_pixels, 0);
      r.get("target_dispersion", t.target_dispersion, 0.0);
      r.get("w_spatial", t.weights.spatial, 0.0);
      r.get("w_summary", t.weights.summary, 0.0);
      cfg.teachers.push_back(std::move(t));
    } else {
      throw ConfigError(doc.source + ":" + std::to_string(sec.line) + ": unknown section [" + sec.name + "]");
    }
    r.reject_unknown();
  }
  // Teacher patch defaults to the student patch even when [student] comes later.
  for (const auto& sec : doc.sections) {
    if (sec.name.rfind("teacher.", 0) != 0 || sec.values.count("patch")) continue;
    cfg.teachers[static_cast<std::size_t>(cfg.teacher_index(sec.name.substr(8)))].spec.patch = cfg.student.patch;
  }
  auto& s = cfg.student;
  if (schedule_given || s.depth != 8) {
    if (!schedule_given) global_layers = {2, 4, 6, 8};
    s.schedule.assign(static_cast<std::size_t>(s.depth),
                      window == 0 ? AttentionWindow::global() : AttentionWindow::window(window));
    for (int l : global_layers) {
      if (l <= s.depth) s.schedule[static_cast<std::size_t>(l - 1)] = AttentionWindow::global();
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path);
}

const char* summary_loss_name(SummaryLossKind kind) {
  return kind == SummaryLossKind::angle ? "angle" : "cosine";
}

const char* train_attention_name(TrainAttention mode) {
  return mode == TrainAttention::global ? "global" : "schedule";
}

std::string to_ini(const RunConfig& c) {
  std::ostringstream o;
  o << "[run]\n"
    << "steps = " << c.steps << "\n"
    << "batch = " << c.batch << "\n"
    << "high_fraction = " << fmt_double(c.high_fraction) << "\n"
    << "low_resolutions = " << join_ints(c.low_resolutions) << "\n"
    << "high_resolutions = " << join_ints(c.high_resolutions) << "\n"
    << "max_shift = " << c.max_shift << "\n"
    << "ema_decay = " << fmt_double(c.ema_decay) << "\n"
    << "w_mesa = " << fmt_double(c.w_mesa) << "\n"
    << "summary_loss = " << summary_loss_name(c.summary_loss) << "\n"
    << "train_attention = " << train_attention_name(c.train_attention) << "\n"
    << "damp = " << (c.damp.enabled ? "true" : "false") << "\n"
    << "damp_sigma = " << fmt_double(c.damp.sigma) << "\n"
    << "lr = " << fmt_double(c.optim.lr) << "\n"
    << "beta1 = " << fmt_double(c.optim.beta1) << "\n"
    << "beta2 = " << fmt_double(c.optim.beta2) << "\n"
    << "adam_eps = " << fmt_double(c.optim.eps) << "\n"
    << "weight_decay = " << fmt_double(c.optim.weight_decay) << "\n"
    << "seed = " << c.seed << "\n"
    << "calib_samples = " << c.calib_samples << "\n"
    << "calib_resolution = " << c.calib_resolution << "\n"
    << "checkpoint_every = " << c.checkpoint_every << "\n\n";

  const auto& s = c.student;
  // The schedule is written as a uniform window plus global layers; every
  // schedule StudentConfig::validate accepts has that form here.
  int window = 0;
  std::vector<int> globals;
  for (std::size_t i = 0; i < s.schedule.size(); ++i) {
    if (s.schedule[i].is_global()) {
      globals.push_back(static_cast<int>(i) + 1);
    } else {
      window = s.schedule[i].size;
    }
  }
  o << "[student]\n"
    << "patch = " << s.patch << "\n"
    << "dim = " << s.dim << "\n"
    << "depth = " << s.depth << "\n"
    << "heads = " << s.heads << "\n"
    << "mlp_ratio = " << s.mlp_ratio << "\n"
    << "pos_grid = " << s.pos_grid << "\n"
    << "window = " << window << "\n"
    << "global_layers = " << join_ints(globals) << "\n\n";

  for (const auto& t : c.teachers) {
    o << "[teacher." << t.spec.name << "]\n"
      << "channels = " << t.spec.channels << "\n"
      << "summary_dim = " << t.spec.summary_dim << "\n"
      << "patch = " << t.spec.patch << "\n"
      << "semantic_seed = " << t.spec.semantic_seed << "\n"
      << "bias_amplitude = " << fmt_double(t.spec.bias_amplitude) << "\n"
      << "bias_period = " << fmt_double(t.spec.bias_period) << "\n"
      << "ring_amplitude = " << fmt_double(t.spec.ring_amplitude) << "\n"
      << "cone_angle = " << fmt_double(t.spec.cone_angle) << "\n"
      << "native = " << native_kind_name(t.spec.native) << "\n"
      << "native_pixels = " << t.spec.native_pixels << "\n"
      << "target_dispersion = " << fmt_double(t.target_dispersion) << "\n"
      << "w_spatial = " << fmt_double(t.weights.spatial) << "\n"
      << "w_summary = " << fmt_double(t.weights.summary) << "\n\n";
  }

  o << "[bench]\n"
    << "variant = " << c.bench.variant << "\n"
    << "resolutions = " << join_ints(c.bench.resolutions) << "\n"
    << "windows = " << join_ints(c.bench.windows) << "\n"
    << "warmup = " << c.bench.warmup << "\n"
    << "trials = " << c.bench.trials << "\n\n";

  const auto& e = c.eval;
  o << "[eval]\n"
    << "resolution = " << e.resolution << "\n"
    << "classes = " << e.classes << "\n"
    << "per_class = " << e.per_class << "\n"
    << "knn_k = " << e.knn_k << "\n"
    << "probe_lambda = " << fmt_double(e.probe_lambda) << "\n"
    << "train_fraction = " << fmt_double(e.train_fraction) << "\n"
    << "fpn_images = " << e.fpn_images << "\n"
    << "pca_images = " << e.pca_images << "\n";
  return o.str();
}

}  // namespace agglo
