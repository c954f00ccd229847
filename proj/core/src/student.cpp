// Copyright (c) 2026, The agglo Authors
// SPDX-License-Identifier: Apache-2.0

#include "agglo/student.hpp"

#include <cmath>
#include <numbers>

namespace agglo {

namespace {

constexpr double kStudentLnEps = 1e-6;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

// Row-wise layer norm: stores xhat and 1/std, returns xhat * g + b.
Mat layer_norm(const Mat& x, ConstMatMap g, ConstMatMap b, Mat& xhat, Vec& rstd) {
  const auto n = x.rows();
  const double d = static_cast<double>(x.cols());
  xhat.resize(n, x.cols());
  rstd.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = x.row(r).sum() / d;
    const double var = (x.row(r).array() - mean).square().sum() / d;
    rstd[r] = 1.0 / std::sqrt(var + kStudentLnEps);
    xhat.row(r) = (x.row(r).array() - mean) * rstd[r];
  }
  Mat y = xhat.array().rowwise() * g.row(0).array();
  y.rowwise() += b.row(0);
  return y;
}

Mat layer_norm_backward(const Mat& dy, const Mat& xhat, const Vec& rstd, ConstMatMap g, MatMap dg, MatMap db) {
  add_column_sums((dy.array() * xhat.array()).matrix(), dg);
  add_column_sums(dy, db);
  const Mat dxhat = dy.array().rowwise() * g.row(0).array();
  const double d = static_cast<double>(dy.cols());
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double m1 = dxhat.row(r).sum() / d;
    const double m2 = dxhat.row(r).dot(xhat.row(r)) / d;
    dx.row(r) = rstd[r] * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
  }
  return dx;
}

double gelu(double a) {
  return 0.5 * a * (1.0 + std::tanh(kGeluC * (a + kGeluA * a * a * a)));
}

double gelu_grad(double a) {
  const double t = std::tanh(kGeluC * (a + kGeluA * a * a * a));
  return 0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * a * a);
}

}  // namespace

StudentConfig StudentConfig::desk_default() {
  StudentConfig cfg;
  cfg.schedule.assign(static_cast<std::size_t>(cfg.depth), AttentionWindow::window(8));
  for (int layer = 1; layer < cfg.depth; layer += 2) {
    cfg.schedule[static_cast<std::size_t>(layer)] = AttentionWindow::global();
  }
  return cfg;
}

std::vector<AttentionWindow> StudentConfig::global_schedule() const {
  return std::vector<AttentionWindow>(static_cast<std::size_t>(depth), AttentionWindow::global());
}

void StudentConfig::validate() const {
  if (patch < 1 || dim < 1 || depth < 1 || heads < 1 || mlp_ratio < 1 || pos_grid < 2) {
    throw std::invalid_argument("student config: patch, dim, depth, heads, mlp_ratio must be >= 1 and pos_grid >= 2");
  }
  if (dim % heads != 0) {
    throw std::invalid_argument("student config: dim " + std::to_string(dim) + " not divisible by heads " +
                                std::to_string(heads));
  }
  if (static_cast<int>(schedule.size()) != depth) {
    throw std::invalid_argument("student config: window schedule has " + std::to_string(schedule.size()) +
                                " entries for depth " + std::to_string(depth));
  }
  bool any_global = false;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const auto& w = schedule[i];
    if (w.is_global()) {
      any_global = true;
    } else if (w.size < kMinWindow || w.size > kMaxWindow) {
      throw std::invalid_argument("student config: layer " + std::to_string(i + 1) + " window " +
                                  std::to_string(w.size) + " outside [" + std::to_string(kMinWindow) + ", " +
                                  std::to_string(kMaxWindow) + "]");
    }
  }
  if (!any_global) throw std::invalid_argument("student config: at least one layer must use global attention");
}

void StudentConfig::check_resolution(int height, int width, std::span<const AttentionWindow> sched) const {
  if (height < patch || width < patch || height % patch != 0 || width % patch != 0) {
    throw DivisibilityError("patch " + std::to_string(patch) + " does not divide image " + std::to_string(height) +
                            "x" + std::to_string(width));
  }
  if (static_cast<int>(sched.size()) != depth) throw std::invalid_argument("schedule length != depth");
  for (std::size_t i = 0; i < sched.size(); ++i) {
    const auto& w = sched[i];
    if (w.is_global()) continue;
    const int span = w.size * patch;
    if (height % span != 0) {
      throw DivisibilityError("layer " + std::to_string(i + 1) + ": window " + std::to_string(w.size) + " x patch " +
                              std::to_string(patch) + " = " + std::to_string(span) + " does not divide height " +
                              std::to_string(height));
    }
    if (width % span != 0) {
      throw DivisibilityError("layer " + std::to_string(i + 1) + ": window " + std::to_string(w.size) + " x patch " +
                              std::to_string(patch) + " = " + std::to_string(span) + " does not divide width " +
                              std::to_string(width));
    }
  }
}

Mat extract_patches(const Image& image, int patch) {
  if (patch < 1 || image.height % patch != 0 || image.width % patch != 0) {
    throw DivisibilityError("patch " + std::to_string(patch) + " does not divide image " +
                            std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  const int rows = image.height / patch, cols = image.width / patch;
  const int in = patch * patch * Image::kChannels;
  Mat out(rows * cols, in);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double* dst = out.row(r * cols + c).data();
      for (int py = 0; py < patch; ++py) {
        const double* src = &image.pixels[(static_cast<std::size_t>(r * patch + py) * image.width + c * patch) *
                                          Image::kChannels];
        std::copy(src, src + patch * Image::kChannels, dst + py * patch * Image::kChannels);
      }
    }
  }
  return out;
}

FeatureGrid interp_pos_embed(const FeatureGrid& base, const PatchGrid& target) {
  if (base.rows < 2 || base.cols < 2) throw ShapeError("position embedding base grid must be at least 2x2");
  target.validate();
  return resize_bilinear(base, target.rows, target.cols);
}

Student::Student(StudentConfig cfg, ParamLayout& layout, const std::string& prefix) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t before = layout.total_size();
  const int d = cfg_.dim;
  const int in = cfg_.patch * cfg_.patch * Image::kChannels;
  const int hidden = d * cfg_.mlp_ratio;
  auto add = [&](const std::string& name, int r, int c, ParamKind kind) {
    return layout.entry(layout.add(prefix + "." + name, r, c, kind));
  };
  patch_w_ = add("patch_embed.w", in, d, ParamKind::weight);
  patch_b_ = add("patch_embed.b", 1, d, ParamKind::bias);
  pos_ = add("pos_embed", cfg_.pos_grid * cfg_.pos_grid, d, ParamKind::embedding);
  summary_token_ = add("summary_token", 1, d, ParamKind::embedding);
  for (int i = 0; i < cfg_.depth; ++i) {
    const std::string b = "block" + std::to_string(i) + ".";
    BlockParams p{
        add(b + "ln1.g", 1, d, ParamKind::norm_gain),  add(b + "ln1.b", 1, d, ParamKind::norm_bias),
        add(b + "attn.wqkv", d, 3 * d, ParamKind::weight), add(b + "attn.bqkv", 1, 3 * d, ParamKind::bias),
        add(b + "attn.wo", d, d, ParamKind::weight),    add(b + "attn.bo", 1, d, ParamKind::bias),
        add(b + "ln2.g", 1, d, ParamKind::norm_gain),  add(b + "ln2.b", 1, d, ParamKind::norm_bias),
        add(b + "mlp.w1", d, hidden, ParamKind::weight), add(b + "mlp.b1", 1, hidden, ParamKind::bias),
        add(b + "mlp.w2", hidden, d, ParamKind::weight), add(b + "mlp.b2", 1, d, ParamKind::bias),
    };
    blocks_.push_back(std::move(p));
  }
  lnf_g_ = add("ln_final.g", 1, d, ParamKind::norm_gain);
  lnf_b_ = add("ln_final.b", 1, d, ParamKind::norm_bias);
  count_ = layout.total_size() - before;
}

StudentOutput Student::forward(std::span<const double> params, const Image& image, StudentCache* cache) const {
  return forward(params, image, cfg_.schedule, cache);
}

StudentOutput Student::forward(std::span<const double> params, const Image& image,
                               std::span<const AttentionWindow> schedule, StudentCache* cache) const {
  cfg_.check_resolution(image.height, image.width, schedule);
  const int rows = image.height / cfg_.patch, cols = image.width / cfg_.patch;
  const int t = rows * cols;
  const int d = cfg_.dim;

  Mat patches = extract_patches(image, cfg_.patch);
  FeatureGrid base(cfg_.pos_grid, cfg_.pos_grid, d);
  base.matrix() = param_view(params, pos_);
  const FeatureGrid pos = interp_pos_embed(base, {rows, cols, cfg_.patch});

  Mat x(t + 1, d);
  x.row(0) = param_view(params, summary_token_);
  x.bottomRows(t).noalias() = patches * param_view(params, patch_w_);
  x.bottomRows(t).rowwise() += param_view(params, patch_b_).row(0);
  x.bottomRows(t) += pos.matrix();

  if (cache) {
    cache->rows = rows;
    cache->cols = cols;
    cache->patches = std::move(patches);
    cache->groups.clear();
    cache->blocks.assign(blocks_.size(), {});
  }

  Mat xhat, act, pre;
  Vec rstd;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const BlockParams& bp = blocks_[i];
    auto groups = attention_groups(rows, cols, schedule[i], true);
    StudentBlockCache* bc = cache ? &cache->blocks[i] : nullptr;

    Mat h1 = layer_norm(x, param_view(params, bp.ln1_g), param_view(params, bp.ln1_b), xhat, rstd);
    const AttentionWeights aw{param_view(params, bp.wqkv), param_view(params, bp.bqkv), param_view(params, bp.wo),
                              param_view(params, bp.bo), cfg_.heads};
    Mat a = attention_forward(h1, aw, groups, bc ? &bc->attn : nullptr);
    if (bc) {
      bc->xhat1 = xhat;
      bc->rstd1 = rstd;
      bc->h1 = std::move(h1);
    }
    x += a;

    Mat h2 = layer_norm(x, param_view(params, bp.ln2_g), param_view(params, bp.ln2_b), xhat, rstd);
    pre.noalias() = h2 * param_view(params, bp.w1);
    pre.rowwise() += param_view(params, bp.b1).row(0);
    act = pre.unaryExpr([](double v) { return gelu(v); });
    Mat m = act * param_view(params, bp.w2);
    m.rowwise() += param_view(params, bp.b2).row(0);
    if (bc) {
      bc->xhat2 = xhat;
      bc->rstd2 = rstd;
      bc->h2 = std::move(h2);
      bc->pre = pre;
      bc->act = act;
    }
    x += m;
    if (cache) cache->groups.push_back(std::move(groups));
  }

  const Mat out = layer_norm(x, param_view(params, lnf_g_), param_view(params, lnf_b_), xhat, rstd);
  if (cache) {
    cache->xhat_final = xhat;
    cache->rstd_final = rstd;
  }

  StudentOutput result;
  result.summary.assign(out.row(0).data(), out.row(0).data() + d);
  result.features = FeatureGrid::from_matrix(rows, cols, out.bottomRows(t));
  return result;
}

void Student::backward(std::span<const double> params, const StudentCache& cache, std::span<const double> d_summary,
                       const FeatureGrid& d_features, std::span<double> grads) const {
  const int rows = cache.rows, cols = cache.cols, t = rows * cols, d = cfg_.dim;
  if (d_features.rows != rows || d_features.cols != cols || d_features.channels != d) {
    throw ShapeError("student backward: feature gradient " + shape_string(d_features) + " does not match output");
  }
  if (static_cast<int>(d_summary.size()) != d) throw ShapeError("student backward: summary gradient size mismatch");

  Mat dout(t + 1, d);
  dout.row(0) = Eigen::Map<const Eigen::RowVectorXd>(d_summary.data(), d);
  dout.bottomRows(t) = d_features.matrix();

  Mat dx = layer_norm_backward(dout, cache.xhat_final, cache.rstd_final, param_view(params, lnf_g_),
                               param_view(grads, lnf_g_), param_view(grads, lnf_b_));

  for (std::size_t ii = blocks_.size(); ii-- > 0;) {
    const BlockParams& bp = blocks_[ii];
    const StudentBlockCache& bc = cache.blocks[ii];

    // MLP branch.
    param_view(grads, bp.w2).noalias() += bc.act.transpose() * dx;
    add_column_sums(dx, param_view(grads, bp.b2));
    Mat dact = dx * param_view(params, bp.w2).transpose();
    dact.array() *= bc.pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
    param_view(grads, bp.w1).noalias() += bc.h2.transpose() * dact;
    add_column_sums(dact, param_view(grads, bp.b1));
    const Mat dh2 = dact * param_view(params, bp.w1).transpose();
    dx += layer_norm_backward(dh2, bc.xhat2, bc.rstd2, param_view(params, bp.ln2_g), param_view(grads, bp.ln2_g),
                              param_view(grads, bp.ln2_b));

    // Attention branch.
    const AttentionWeights aw{param_view(params, bp.wqkv), param_view(params, bp.bqkv), param_view(params, bp.wo),
                              param_view(params, bp.bo), cfg_.heads};
    AttentionGradients ag{param_view(grads, bp.wqkv), param_view(grads, bp.bqkv), param_view(grads, bp.wo),
                          param_view(grads, bp.bo)};
    const Mat dh1 = attention_backward(bc.h1, aw, cache.groups[ii], bc.attn, dx, ag);
    dx += layer_norm_backward(dh1, bc.xhat1, bc.rstd1, param_view(params, bp.ln1_g), param_view(grads, bp.ln1_g),
                              param_view(grads, bp.ln1_b));
  }

  param_view(grads, summary_token_).row(0) += dx.row(0);
  const Mat dpatch = dx.bottomRows(t);
  param_view(grads, patch_w_).noalias() += cache.patches.transpose() * dpatch;
  add_column_sums(dpatch, param_view(grads, patch_b_));
  const FeatureGrid dpos = resize_bilinear_adjoint(FeatureGrid::from_matrix(rows, cols, dpatch), cfg_.pos_grid,
                                                   cfg_.pos_grid);
  param_view(grads, pos_) += dpos.matrix();
}

}  // namespace agglo
