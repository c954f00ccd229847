// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include "agglo/checkpoint.hpp"
#include "agglo/config.hpp"
#include "agglo/evalbench.hpp"
#include "agglo/feature_dump.hpp"
#include "agglo/images.hpp"
#include "agglo/trainer.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>

namespace agglo::cli {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::string command;
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::string checkpoint;
  std::string resume;
  std::string dump;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Every output goes through here, so nothing escapes --out.
class OutputDir {
 public:
  explicit OutputDir(const std::string& dir) : dir_(dir) { fs::create_directories(dir_); }

  std::string path(const std::string& name) const {
    const fs::path p(name);
    if (name.empty() || p.is_absolute() || p.has_parent_path() || name == "." || name == "..") {
      throw std::invalid_argument("output name '" + name + "' must be a plain file name inside --out");
    }
    return (dir_ / p).string();
  }

  std::ofstream open(const std::string& name) const {
    std::ofstream f(path(name), std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path(name));
    return f;
  }

 private:
  fs::path dir_;
};

Trainer make_trainer(const RunConfig& cfg, const std::string& checkpoint) {
  Trainer t(cfg);
  if (!checkpoint.empty()) {
    t.restore(load_checkpoint(checkpoint));
  } else {
    t.calibrate();
  }
  return t;
}

std::vector<LabeledVector> student_embeddings(const Trainer& t, const EvalConfig& e, std::uint64_t seed) {
  std::vector<LabeledVector> out;
  for (auto& s : make_labeled_set(e.resolution, e.classes, e.per_class, seed)) {
    out.push_back({t.forward(s.image).summary, s.label});
  }
  return out;
}

Image eval_image(std::uint64_t seed, int index, int resolution) {
  Rng rng(derive_seed(derive_seed(seed, "eval"), static_cast<std::uint64_t>(index)));
  return make_random_image(resolution, resolution, rng);
}

int cmd_calibrate(const RunConfig& cfg, const OutputDir& out, std::ostream& log) {
  Trainer t(cfg);
  t.calibrate();
  auto f = out.open("calibration.csv");
  f << "teacher,channels,summary_dim,cone_angle,target_dispersion,dispersion,samples\n" << std::setprecision(17);
  for (std::size_t k = 0; k < t.teachers().size(); ++k) {
    const auto& spec = t.teachers()[k].spec();
    f << spec.name << ',' << spec.channels << ',' << spec.summary_dim << ',' << spec.cone_angle << ','
      << cfg.teachers[k].target_dispersion << ',' << t.stats()[k].dispersion << ',' << t.stats()[k].sample_count
      << '\n';
    log << spec.name << ": dispersion " << t.stats()[k].dispersion << " (cone " << spec.cone_angle << " rad)\n";
  }
  save_checkpoint(t.checkpoint(), out.path("calibrated.ckpt"));
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const Options& o, const OutputDir& out, std::ostream& log) {
  Trainer t(cfg);
  if (!o.resume.empty()) {
    t.restore(load_checkpoint(o.resume));
  } else {
    t.calibrate();
  }
  const bool append = !o.resume.empty() && fs::exists(out.path("train_log.csv"));
  std::ofstream csv(out.path("train_log.csv"), append ? std::ios::app : std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + out.path("train_log.csv"));
  if (!append) write_log_header(csv);
  while (t.step_count() < cfg.steps) {
    long target = cfg.steps;
    if (cfg.checkpoint_every > 0) {
      target = std::min<long>(target, (t.step_count() / cfg.checkpoint_every + 1) * cfg.checkpoint_every);
    }
    t.run_until(target, &csv);
    if (cfg.checkpoint_every > 0 && t.step_count() % cfg.checkpoint_every == 0 && t.step_count() < cfg.steps) {
      save_checkpoint(t.checkpoint(), out.path("step_" + std::to_string(t.step_count()) + ".ckpt"));
    }
  }
  save_checkpoint(t.checkpoint(), out.path("final.ckpt"));
  log << "trained to step " << t.step_count() << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const Options& o, const OutputDir& out, std::ostream& log, bool knn) {
  const Trainer model = make_trainer(cfg, o.checkpoint);
  const auto data = student_embeddings(model, cfg.eval, derive_seed(cfg.seed, "labeled"));
  auto f = out.open(knn ? "eval_knn.csv" : "eval_probe.csv");
  write_eval_header(f);
  if (knn) {
    const LabeledSplit split = split_labeled(data, cfg.eval.train_fraction, cfg.seed);
    const auto& train = split.train;
    const auto& test = split.test;
    const int k = std::min<int>(cfg.eval.knn_k, static_cast<int>(train.size()));
    const double acc = knn_accuracy(train, test, k);
    write_eval_row(f, "knn", "accuracy", acc, cfg.seed);
    write_eval_row(f, "knn", "k", k, cfg.seed);
    log << "knn accuracy " << acc << " (k=" << k << ")\n";
  } else {
    const ProbeResult r = linear_probe(data, cfg.eval.probe_lambda, cfg.eval.train_fraction, cfg.seed);
    write_eval_row(f, "probe", "accuracy", r.accuracy, cfg.seed);
    write_eval_row(f, "probe", "train_size", r.train_size, cfg.seed);
    write_eval_row(f, "probe", "test_size", r.test_size, cfg.seed);
    log << "probe accuracy " << r.accuracy << "\n";
  }
  return kExitOk;
}

int cmd_estimate_disp(const RunConfig& cfg, const Options& o, const OutputDir& out, std::ostream& log) {
  auto f = out.open("dispersion.csv");
  f << "source,target_dispersion,dispersion,samples\n" << std::setprecision(17);
  if (!o.dump.empty()) {
    DumpReader reader(o.dump);
    std::vector<std::vector<double>> summaries;
    TeacherOutput rec;
    while (reader.next(rec)) summaries.push_back(rec.summary);
    const SummaryStats s = fit_summary_stats(summaries);
    f << "dump," << 0 << ',' << s.dispersion << ',' << summaries.size() << '\n';
    log << "dump dispersion " << s.dispersion << "\n";
    return kExitOk;
  }
  Trainer t(cfg);
  t.calibrate();
  for (std::size_t k = 0; k < t.teachers().size(); ++k) {
    f << t.teachers()[k].spec().name << ',' << cfg.teachers[k].target_dispersion << ',' << t.stats()[k].dispersion
      << ',' << t.stats()[k].sample_count << '\n';
    log << t.teachers()[k].spec().name << " dispersion " << t.stats()[k].dispersion << "\n";
  }
  return kExitOk;
}

int cmd_estimate_fpn(const RunConfig& cfg, const Options& o, const OutputDir& out, std::ostream& log) {
  auto f = out.open("fpn.csv");
  write_eval_header(f);
  const int n = cfg.eval.fpn_images;
  if (!o.dump.empty()) {
    DumpReader reader(o.dump);
    FpnAccumulator acc;
    TeacherOutput rec;
    while (reader.next(rec)) acc.add(rec.features);
    const double e = acc.finish().energy;
    write_eval_row(f, "fpn.dump", "energy", e, cfg.seed);
    log << "dump fpn energy " << e << "\n";
    return kExitOk;
  }
  const Trainer t = make_trainer(cfg, o.checkpoint);
  const int res = cfg.eval.resolution;
  for (std::size_t k = 0; k < t.teachers().size(); ++k) {
    const auto& teacher = t.teachers()[k];
    const std::string name = teacher.spec().name;
    FpnAccumulator teacher_acc, student_acc;
    for (int i = 0; i < n; ++i) {
      const Image img = eval_image(cfg.seed, i, res);
      if (teacher.spec().native != NativeKind::fixed) {
        teacher_acc.add(normalize_features(teacher.forward_view(img).features, t.stats()[k]));
      }
      student_acc.add(t.predict_features(t.forward(img), static_cast<int>(k)));
    }
    if (teacher_acc.count() > 0) {
      write_eval_row(f, "fpn.teacher." + name, "energy", teacher_acc.finish().energy, cfg.seed);
    }
    const double e = student_acc.finish().energy;
    write_eval_row(f, "fpn.student." + name, "energy", e, cfg.seed);
    log << name << ": student fpn energy " << e << "\n";
  }
  return kExitOk;
}

int cmd_viz_pca(const RunConfig& cfg, const Options& o, const OutputDir& out, std::ostream& log) {
  const Trainer t = make_trainer(cfg, o.checkpoint);
  std::vector<FeatureGrid> grids;
  for (int i = 0; i < cfg.eval.pca_images; ++i) grids.push_back(t.forward(eval_image(cfg.seed, i, cfg.eval.resolution)).features);
  const auto images = pca_rgb(grids, cfg.student.patch);
  for (std::size_t i = 0; i < images.size(); ++i) write_ppm(out.path("pca_" + std::to_string(i) + ".ppm"), images[i]);
  log << "wrote " << images.size() << " PCA images\n";
  return kExitOk;
}

int cmd_bench(const RunConfig& cfg, const OutputDir& out, std::ostream& log) {
  const auto records = bench_attention(cfg.student, cfg.bench.variant, cfg.bench.resolutions, cfg.bench.windows,
                                       cfg.bench.warmup, cfg.bench.trials, cfg.seed);
  auto f = out.open("bench.csv");
  write_bench_header(f);
  for (const auto& r : records) {
    write_bench_row(f, r);
    write_bench_row(log, r);
  }
  return kExitOk;
}

int cmd_dump_teacher(const RunConfig& cfg, const Options& o, const OutputDir& out, std::ostream& log) {
  Trainer t(cfg);
  for (const auto& teacher : t.teachers()) {
    const auto& spec = teacher.spec();
    const int res = calibration_resolution(spec, cfg.eval.resolution);
    const std::string name =
        o.dump.empty() ? "teacher_" + spec.name + ".rfd" : (t.teachers().size() == 1 ? o.dump : spec.name + "_" + o.dump);
    std::unique_ptr<DumpWriter> w;
    for (int i = 0; i < cfg.eval.fpn_images; ++i) {
      const TeacherOutput r = teacher.forward(eval_image(cfg.seed, i, res));
      if (!w) {
        w = std::make_unique<DumpWriter>(out.path(name), r.features.rows, r.features.cols, r.features.channels,
                                         static_cast<int>(r.summary.size()));
      }
      w->write(r);
    }
    if (w) w->close();
    log << "wrote " << out.path(name) << "\n";
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"agglo: multi-teacher distillation engine"};
  app.require_subcommand(1);
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"calibrate", "fit teacher statistics and calibrate cone angles"},
      {"train", "run the distillation loop"},
      {"eval-knn", "kNN accuracy of student summaries"},
      {"eval-probe", "ridge linear-probe accuracy of student summaries"},
      {"estimate-disp", "angular dispersion of teacher summaries"},
      {"estimate-fpn", "fixed-pattern (position bias) energy"},
      {"viz-pca", "PCA visualization of student features as PPM"},
      {"bench-attn", "forward latency of windowed vs global schedules"},
      {"dump-teacher", "write teacher outputs in RFD1 format"},
  };
  for (const auto& [name, help] : commands) {
    auto* sc = app.add_subcommand(name, help);
    sc->add_option("--config", o.config, "configuration file")->required();
    sc->add_option("--out", o.out, "output directory")->capture_default_str();
    sc->add_option("--seed", o.seed, "override the master seed");
    sc->add_option("--checkpoint", o.checkpoint, "checkpoint to evaluate");
    sc->add_option("--dump", o.dump, "RFD1 dump: input for estimate-*, output name for dump-teacher");
    if (name == "train") {
      sc->add_option("--steps", o.steps, "override the step count");
      sc->add_option("--resume", o.resume, "checkpoint to resume from");
    }
    sc->callback([&o, name = name] { o.command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "agglo: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (!fs::exists(o.config)) throw UsageError("config file not found: " + o.config);
    RunConfig cfg = load_run_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.steps) cfg.steps = *o.steps;
    cfg.validate();
    const OutputDir dir(o.out);
    {
      auto snap = dir.open("resolved.cfg");
      snap << to_ini(cfg);
    }
    if (o.command == "calibrate") return cmd_calibrate(cfg, dir, out);
    if (o.command == "train") return cmd_train(cfg, o, dir, out);
    if (o.command == "eval-knn") return cmd_eval(cfg, o, dir, out, true);
    if (o.command == "eval-probe") return cmd_eval(cfg, o, dir, out, false);
    if (o.command == "estimate-disp") return cmd_estimate_disp(cfg, o, dir, out);
    if (o.command == "estimate-fpn") return cmd_estimate_fpn(cfg, o, dir, out);
    if (o.command == "viz-pca") return cmd_viz_pca(cfg, o, dir, out);
    if (o.command == "bench-attn") return cmd_bench(cfg, dir, out);
    if (o.command == "dump-teacher") return cmd_dump_teacher(cfg, o, dir, out);
    throw UsageError("unknown subcommand");
  } catch (const UsageError& e) {
    err << "agglo: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "agglo " << o.command << ": " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace agglo::cli
