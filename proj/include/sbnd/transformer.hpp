// Copyright 2026 The sbnd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Causal transformer over spin configurations with optional angle-prefix
// conditioning. Backpropagation is written out by hand for this fixed
// architecture.
//
// Sequence layout: n_angles prefix tokens (one per angle), then n_sites spin
// positions. Spin position i reads token "begin" (i = 0) or x_{i-1}, and its
// output head gives the two logits (Y_0, Y_1) of x_i. All samples of a batch
// share the same angles, so the prefix is evaluated once per batch and its
// keys/values are broadcast to every sample's attention.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbnd/pauli.hpp"
#include "sbnd/rng.hpp"

namespace sbnd {

struct ArConfig {
  int n_sites = 0;
  /// Number of conditioning angles (prefix tokens); 0 for plain SND.
  int n_angles = 0;
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int d_ff = 128;

  void validate() const {
    if (n_sites < 1 || n_sites > kMaxSites)
      throw std::invalid_argument("ArConfig: n_sites out of range");
    if (n_angles < 0) throw std::invalid_argument("ArConfig: n_angles < 0");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
      throw std::invalid_argument("ArConfig: d_model must be a positive multiple of n_heads");
    if (n_layers < 1 || d_ff < 1) throw std::invalid_argument("ArConfig: bad depth/width");
  }
};

/// Named tensor inside the flat parameter vector (column-major).
struct TensorInfo {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

/// Parameter storage with a fixed base alignment, so vectorized kernels
/// sum in the same order for every allocation.
using AlignedVector = std::vector<double, Eigen::aligned_allocator<double>>;

namespace detail {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using MapM = Eigen::Map<Mat>;
using MapV = Eigen::Map<Vec>;

inline constexpr int kBeginToken = 2;

/// Column-wise layer norm: y = g * (x - mean) * rstd + b.
inline void layer_norm_fwd(const Eigen::Ref<const Mat>& x, const MapV& g, const MapV& b,
                           Eigen::Ref<Mat> xhat, Eigen::Ref<Eigen::RowVectorXd> rstd,
                           Eigen::Ref<Mat> y) {
  constexpr double kEps = 1e-5;
  const double inv_d = 1.0 / static_cast<double>(x.rows());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double mu = x.col(c).sum() * inv_d;
    xhat.col(c) = x.col(c).array() - mu;
    const double var = xhat.col(c).squaredNorm() * inv_d;
    const double r = 1.0 / std::sqrt(var + kEps);
    rstd[c] = r;
    xhat.col(c) *= r;
  }
  y = (xhat.array().colwise() * g.array()).colwise() + b.array();
}

/// Returns dx; accumulates dg, db.
inline Mat layer_norm_bwd(const Mat& dy, const Mat& xhat, const Eigen::RowVectorXd& rstd,
                          const MapV& g, MapV& dg, MapV& db) {
  dg += (dy.array() * xhat.array()).rowwise().sum().matrix();
  db += dy.rowwise().sum();
  const Mat dxhat = dy.array().colwise() * g.array();
  const double inv_d = 1.0 / static_cast<double>(dy.rows());
  const Eigen::RowVectorXd m1 = dxhat.colwise().sum() * inv_d;
  const Eigen::RowVectorXd m2 = (dxhat.array() * xhat.array()).colwise().sum().matrix() * inv_d;
  Mat dx = dxhat;
  dx.rowwise() -= m1;
  dx.array() -= xhat.array().rowwise() * m2.array();
  dx.array().rowwise() *= rstd.array();
  return dx;
}

struct LayerCache {
  Mat x_in, xhat1, ln1, q, k, v, attn, x_mid, xhat2, ln2, u;
  Eigen::RowVectorXd rstd1, rstd2;
  /// Attention weights per (position, head): (n_ctx + i + 1) x batch.
  std::vector<Mat> probs;
};

/// Activations of one token stream (the shared prefix or the spin batch).
struct Stream {
  int npos = 0;
  int batch = 0;
  std::vector<LayerCache> layers;
  Mat x_out;  // residual output of the last layer
  void resize(int n_layers, int d, int d_ff, int n_heads, int np, int b) {
    npos = np;
    batch = b;
    const Eigen::Index cols = static_cast<Eigen::Index>(np) * b;
    layers.resize(static_cast<std::size_t>(n_layers));
    for (auto& c : layers) {
      for (Mat* m : {&c.x_in, &c.xhat1, &c.ln1, &c.q, &c.k, &c.v, &c.attn, &c.x_mid,
                     &c.xhat2, &c.ln2})
        m->resize(d, cols);
      c.u.resize(d_ff, cols);
      c.rstd1.resize(cols);
      c.rstd2.resize(cols);
      c.probs.assign(static_cast<std::size_t>(np) * n_heads, Mat());
    }
    x_out.resize(d, cols);
  }
};

}  // namespace detail

/**
 * Reusable buffers for one batch: the prefix stream, the spin stream, the
 * sampled (or teacher-forced) configurations and their log-probabilities.
 * A workspace filled by ArModel::sample can be passed straight to backward.
 */
struct ArWorkspace {
  std::vector<Bitstring> configs;
  /// log P(x_b | theta) at the evaluation temperature.
  std::vector<double> log_prob;
  std::vector<double> theta;
  double temperature = 1.0;

  detail::Stream prefix;
  detail::Stream spins;
  detail::Mat xhatf, f, logits;  // final LN and head outputs (2 x cols)
  Eigen::RowVectorXd rstdf;
  detail::Mat prefix_embed;  // d x n_angles
};

class ArModel {
 public:
  ArModel() = default;

  /// Random initialization from the given stream; the output head starts at
  /// zero so the initial distribution is uniform.
  ArModel(const ArConfig& cfg, Rng rng) : cfg_(cfg) {
    cfg_.validate();
    build_layout();
    params_.assign(layout_total_, 0.0);
    init(rng);
  }

  const ArConfig& config() const { return cfg_; }
  int n_sites() const { return cfg_.n_sites; }
  int n_angles() const { return cfg_.n_angles; }
  std::size_t n_params() const { return params_.size(); }
  AlignedVector& params() { return params_; }
  const AlignedVector& params() const { return params_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }

  const TensorInfo& tensor(const std::string& name) const {
    for (const auto& t : tensors_)
      if (t.name == name) return t;
    throw std::out_of_range("ArModel: no tensor " + name);
  }

  /// Overwrite all parameters; sizes must match.
  void set_params(std::span<const double> p) {
    if (p.size() != params_.size()) throw std::invalid_argument("ArModel: parameter size mismatch");
    params_.assign(p.begin(), p.end());
  }

  /// Ancestral sampling of `batch` configurations at temperature T.
  void sample(ArWorkspace& ws, std::size_t batch, std::span<const double> theta, double T,
              Rng& rng) const {
    begin_batch(ws, batch, theta, T);
    const int B = static_cast<int>(batch);
    for (int i = 0; i < cfg_.n_sites; ++i) {
      forward_position(ws, i);
      const auto y = ws.logits.middleCols(static_cast<Eigen::Index>(i) * B, B);
      for (int b = 0; b < B; ++b) {
        const double p1 = prob_one(y(1, b) - y(0, b), T);
        const bool one = rng.uniform() < p1;
        if (one) ws.configs[static_cast<std::size_t>(b)] |= Bitstring{1} << i;
        ws.log_prob[static_cast<std::size_t>(b)] += log_prob_bit(y(1, b) - y(0, b), T, one);
      }
    }
  }

  /// Teacher-forced evaluation of given configurations; fills log_prob and
  /// the activation caches needed by backward.
  void evaluate(ArWorkspace& ws, std::span<const Bitstring> configs,
                std::span<const double> theta, double T) const {
    begin_batch(ws, configs.size(), theta, T);
    ws.configs.assign(configs.begin(), configs.end());
    const int B = static_cast<int>(configs.size());
    for (int i = 0; i < cfg_.n_sites; ++i) {
      forward_position(ws, i);
      const auto y = ws.logits.middleCols(static_cast<Eigen::Index>(i) * B, B);
      for (int b = 0; b < B; ++b) {
        const bool one = (ws.configs[static_cast<std::size_t>(b)] >> i) & 1u;
        ws.log_prob[static_cast<std::size_t>(b)] += log_prob_bit(y(1, b) - y(0, b), T, one);
      }
    }
  }

  double log_prob(Bitstring x, std::span<const double> theta = {}, double T = 1.0) const {
    ArWorkspace ws;
    const Bitstring one[1] = {x};
    evaluate(ws, one, theta, T);
    return ws.log_prob[0];
  }

  std::vector<double> log_probs(std::span<const Bitstring> xs, std::span<const double> theta = {},
                                double T = 1.0) const {
    ArWorkspace ws;
    evaluate(ws, xs, theta, T);
    return ws.log_prob;
  }

  /// Conditional logits (Y_0, Y_1) at every spin position for one
  /// configuration: column i holds position i.
  Eigen::MatrixXd conditional_logits(Bitstring x, std::span<const double> theta = {}) const {
    ArWorkspace ws;
    const Bitstring one[1] = {x};
    evaluate(ws, one, theta, 1.0);
    return ws.logits;
  }

  /**
   * Accumulates sum_b w_b * d log P(x_b | theta) / d(omega, theta) for the batch
   * held in `ws` into grad (size n_params) and grad_theta (size n_angles, may
   * be empty to skip).
   */
  void backward(const ArWorkspace& ws, std::span<const double> w, std::span<double> grad,
                std::span<double> grad_theta) const {
    using namespace detail;
    const int B = ws.spins.batch;
    const int N = cfg_.n_sites;
    const int P = cfg_.n_angles;
    if (w.size() != static_cast<std::size_t>(B))
      throw std::invalid_argument("ArModel::backward: weight count mismatch");
    if (grad.size() != params_.size())
      throw std::invalid_argument("ArModel::backward: gradient size mismatch");
    if (!grad_theta.empty() && grad_theta.size() != static_cast<std::size_t>(P))
      throw std::invalid_argument("ArModel::backward: theta gradient size mismatch");
    const Eigen::Index cols = static_cast<Eigen::Index>(N) * B;
    const double T = ws.temperature;

    // Head: d log p / dY = (onehot - softmax) / T, weighted.
    Mat dy(2, cols);
    for (int i = 0; i < N; ++i)
      for (int b = 0; b < B; ++b) {
        const Eigen::Index c = static_cast<Eigen::Index>(i) * B + b;
        const double p1 = prob_one(ws.logits(1, c) - ws.logits(0, c), T);
        const double one = ((ws.configs[static_cast<std::size_t>(b)] >> i) & 1u) ? 1.0 : 0.0;
        const double g1 = (one - p1) / T * w[static_cast<std::size_t>(b)];
        dy(1, c) = g1;
        dy(0, c) = -g1;
      }
    // Aligned scratch keeps Eigen's vectorized summation order independent
    // of the caller's buffer address.
    AlignedVector scratch(grad.size(), 0.0);
    double* gb = scratch.data();
    auto flush = [&] {
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += scratch[k];
    };
    MapM dWh = view(gb, "head.W");
    MapV dbh = vview(gb, "head.b");
    dWh.noalias() += dy * ws.f.transpose();
    dbh += dy.rowwise().sum();
    Mat df = view_c("head.W").transpose() * dy;
    MapV dgf = vview(gb, "lnf.g"), dbf = vview(gb, "lnf.b");
    Mat dx = layer_norm_bwd(df, ws.xhatf, ws.rstdf, vview_c("lnf.g"), dgf, dbf);

    std::vector<Mat> dctx_k(static_cast<std::size_t>(cfg_.n_layers)),
        dctx_v(static_cast<std::size_t>(cfg_.n_layers));
    for (int l = cfg_.n_layers - 1; l >= 0; --l) {
      Mat& dk = dctx_k[static_cast<std::size_t>(l)];
      Mat& dv = dctx_v[static_cast<std::size_t>(l)];
      dk.setZero(cfg_.d_model, P);
      dv.setZero(cfg_.d_model, P);
      layer_backward(ws.spins, P > 0 ? &ws.prefix : nullptr, l, dx, gb, &dk, &dv, nullptr,
                     nullptr);
    }
    // Spin embeddings.
    MapM dtok = view(gb, "embed.token");
    MapM dpos = view(gb, "embed.position");
    for (int i = 0; i < N; ++i)
      for (int b = 0; b < B; ++b) {
        const Eigen::Index c = static_cast<Eigen::Index>(i) * B + b;
        dtok.col(input_token(ws.configs[static_cast<std::size_t>(b)], i)) += dx.col(c);
      }
    for (int i = 0; i < N; ++i)
      dpos.col(P + i) += dx.middleCols(static_cast<Eigen::Index>(i) * B, B).rowwise().sum();

    if (P == 0) {
      flush();
      return;
    }
    // Prefix stream: its top output is unused, keys/values receive the
    // spin-query gradients.
    Mat dxp = Mat::Zero(cfg_.d_model, P);
    for (int l = cfg_.n_layers - 1; l >= 0; --l)
      layer_backward(ws.prefix, nullptr, l, dxp, gb, nullptr, nullptr,
                     &dctx_k[static_cast<std::size_t>(l)], &dctx_v[static_cast<std::size_t>(l)]);
    MapM dangw = view(gb, "angle.W");
    MapV dangb = vview(gb, "angle.b");
    const auto angw = view_c("angle.W");
    for (int j = 0; j < P; ++j) {
      const double th = ws.theta[static_cast<std::size_t>(j)];
      const double c = std::cos(th), s = std::sin(th);
      dpos.col(j) += dxp.col(j);
      dangb += dxp.col(j);
      dangw.col(0) += c * dxp.col(j);
      dangw.col(1) += s * dxp.col(j);
      if (!grad_theta.empty()) {
        const Eigen::Vector2d dcs = angw.transpose() * dxp.col(j);
        grad_theta[static_cast<std::size_t>(j)] += -s * dcs[0] + c * dcs[1];
      }
    }
    flush();
  }

 private:
  struct LayerW {
    detail::MapV ln1_g, ln1_b;
    detail::MapM wq;
    detail::MapV bq;
    detail::MapM wk;
    detail::MapV bk;
    detail::MapM wv;
    detail::MapV bv;
    detail::MapM wo;
    detail::MapV bo;
    detail::MapV ln2_g, ln2_b;
    detail::MapM w1;
    detail::MapV b1;
    detail::MapM w2;
    detail::MapV b2;
  };

  static double prob_one(double dy, double T) { return 1.0 / (1.0 + std::exp(-dy / T)); }

  /// log softmax(Y / T)[bit] from dy = Y_1 - Y_0.
  static double log_prob_bit(double dy, double T, bool one) {
    const double z = one ? dy / T : -dy / T;  // log sigmoid(z)
    return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
  }

  static int input_token(Bitstring x, int i) {
    return i == 0 ? detail::kBeginToken : static_cast<int>((x >> (i - 1)) & 1u);
  }

  void add_tensor(const std::string& name, int r, int c) {
    tensors_.push_back({name, r, c, layout_total_});
    layout_total_ += static_cast<std::size_t>(r) * c;
  }

  void build_layout() {
    const int d = cfg_.d_model;
    add_tensor("embed.token", d, 3);
    add_tensor("embed.position", d, cfg_.n_angles + cfg_.n_sites);
    if (cfg_.n_angles > 0) {
      add_tensor("angle.W", d, 2);
      add_tensor("angle.b", d, 1);
    }
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      add_tensor(p + "ln1.g", d, 1);
      add_tensor(p + "ln1.b", d, 1);
      add_tensor(p + "attn.Wq", d, d);
      add_tensor(p + "attn.bq", d, 1);
      add_tensor(p + "attn.Wk", d, d);
      add_tensor(p + "attn.bk", d, 1);
      add_tensor(p + "attn.Wv", d, d);
      add_tensor(p + "attn.bv", d, 1);
      add_tensor(p + "attn.Wo", d, d);
      add_tensor(p + "attn.bo", d, 1);
      add_tensor(p + "ln2.g", d, 1);
      add_tensor(p + "ln2.b", d, 1);
      add_tensor(p + "ffn.W1", cfg_.d_ff, d);
      add_tensor(p + "ffn.b1", cfg_.d_ff, 1);
      add_tensor(p + "ffn.W2", d, cfg_.d_ff);
      add_tensor(p + "ffn.b2", d, 1);
    }
    add_tensor("lnf.g", d, 1);
    add_tensor("lnf.b", d, 1);
    add_tensor("head.W", 2, d);
    add_tensor("head.b", 2, 1);
  }

  void init(Rng& rng) {
    auto fill = [&](const std::string& name, double stdev) {
      const TensorInfo& t = tensor(name);
      for (std::size_t k = 0; k < t.size(); ++k) params_[t.offset + k] = stdev * rng.normal();
    };
    auto ones = [&](const std::string& name) {
      const TensorInfo& t = tensor(name);
      for (std::size_t k = 0; k < t.size(); ++k) params_[t.offset + k] = 1.0;
    };
    const double d = cfg_.d_model;
    const double resid = 1.0 / std::sqrt(2.0 * cfg_.n_layers);
    fill("embed.token", 1.0);
    fill("embed.position", 1.0);
    if (cfg_.n_angles > 0) fill("angle.W", 1.0 / std::sqrt(2.0));
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      ones(p + "ln1.g");
      ones(p + "ln2.g");
      fill(p + "attn.Wq", 1.0 / std::sqrt(d));
      fill(p + "attn.Wk", 1.0 / std::sqrt(d));
      fill(p + "attn.Wv", 1.0 / std::sqrt(d));
      fill(p + "attn.Wo", resid / std::sqrt(d));
      fill(p + "ffn.W1", 1.0 / std::sqrt(d));
      fill(p + "ffn.W2", resid / std::sqrt(static_cast<double>(cfg_.d_ff)));
    }
    ones("lnf.g");
    // head.W and head.b stay zero.
  }

  detail::MapM view(double* base, const std::string& name) const {
    const TensorInfo& t = tensor(name);
    return detail::MapM(base + t.offset, t.rows, t.cols);
  }
  detail::MapV vview(double* base, const std::string& name) const {
    const TensorInfo& t = tensor(name);
    return detail::MapV(base + t.offset, static_cast<Eigen::Index>(t.size()));
  }
  detail::MapM view_c(const std::string& name) const {
    return view(const_cast<double*>(params_.data()), name);
  }
  detail::MapV vview_c(const std::string& name) const {
    return vview(const_cast<double*>(params_.data()), name);
  }

  LayerW layer(double* base, int l) const {
    const std::string p = "layer" + std::to_string(l) + ".";
    return LayerW{vview(base, p + "ln1.g"),   vview(base, p + "ln1.b"),  view(base, p + "attn.Wq"),
                  vview(base, p + "attn.bq"), view(base, p + "attn.Wk"), vview(base, p + "attn.bk"),
                  view(base, p + "attn.Wv"),  vview(base, p + "attn.bv"), view(base, p + "attn.Wo"),
                  vview(base, p + "attn.bo"), vview(base, p + "ln2.g"),  vview(base, p + "ln2.b"),
                  view(base, p + "ffn.W1"),   vview(base, p + "ffn.b1"), view(base, p + "ffn.W2"),
                  vview(base, p + "ffn.b2")};
  }
  LayerW layer_c(int l) const { return layer(const_cast<double*>(params_.data()), l); }

  void begin_batch(ArWorkspace& ws, std::size_t batch, std::span<const double> theta,
                   double T) const {
    if (!(T > 0.0) || !std::isfinite(T)) throw std::invalid_argument("ArModel: T must be > 0");
    if (theta.size() != static_cast<std::size_t>(cfg_.n_angles))
      throw std::invalid_argument("ArModel: expected " + std::to_string(cfg_.n_angles) +
                                  " angles, got " + std::to_string(theta.size()));
    if (batch == 0) throw std::invalid_argument("ArModel: empty batch");
    const int B = static_cast<int>(batch);
    const int N = cfg_.n_sites;
    const int d = cfg_.d_model;
    ws.temperature = T;
    ws.theta.assign(theta.begin(), theta.end());
    ws.configs.assign(batch, 0);
    ws.log_prob.assign(batch, 0.0);
    ws.spins.resize(cfg_.n_layers, d, cfg_.d_ff, cfg_.n_heads, N, B);
    const Eigen::Index cols = static_cast<Eigen::Index>(N) * B;
    ws.xhatf.resize(d, cols);
    ws.f.resize(d, cols);
    ws.logits.resize(2, cols);
    ws.rstdf.resize(cols);

    const int P = cfg_.n_angles;
    if (P > 0) {
      ws.prefix.resize(cfg_.n_layers, d, cfg_.d_ff, cfg_.n_heads, P, 1);
      const auto angw = view_c("angle.W");
      const auto angb = vview_c("angle.b");
      const auto pos = view_c("embed.position");
      ws.prefix_embed.resize(d, P);
      for (int j = 0; j < P; ++j)
        ws.prefix_embed.col(j) = angw.col(0) * std::cos(theta[static_cast<std::size_t>(j)]) +
                                 angw.col(1) * std::sin(theta[static_cast<std::size_t>(j)]) +
                                 angb + pos.col(j);
      for (int j = 0; j < P; ++j) {
        detail::Mat x = ws.prefix_embed.col(j);
        run_layers(ws.prefix, nullptr, j, x);
      }
    }
  }

  /// Runs all layers at position i of a stream; x holds the embedded input
  /// (d x batch) on entry and the residual output on exit.
  void run_layers(detail::Stream& s, const detail::Stream* ctx, int i, detail::Mat& x) const {
    using namespace detail;
    const int B = s.batch;
    const Eigen::Index c0 = static_cast<Eigen::Index>(i) * B;
    for (int l = 0; l < cfg_.n_layers; ++l) {
      LayerCache& c = s.layers[static_cast<std::size_t>(l)];
      const LayerW W = layer_c(l);
      c.x_in.middleCols(c0, B) = x;
      layer_norm_fwd(x, W.ln1_g, W.ln1_b, c.xhat1.middleCols(c0, B), c.rstd1.segment(c0, B),
                     c.ln1.middleCols(c0, B));
      const auto a = c.ln1.middleCols(c0, B);
      c.q.middleCols(c0, B).noalias() = W.wq * a;
      c.q.middleCols(c0, B).colwise() += W.bq;
      c.k.middleCols(c0, B).noalias() = W.wk * a;
      c.k.middleCols(c0, B).colwise() += W.bk;
      c.v.middleCols(c0, B).noalias() = W.wv * a;
      c.v.middleCols(c0, B).colwise() += W.bv;
      attention_fwd(s, ctx ? &ctx->layers[static_cast<std::size_t>(l)] : nullptr, l, i);
      x.noalias() += W.wo * c.attn.middleCols(c0, B);
      x.colwise() += W.bo;
      c.x_mid.middleCols(c0, B) = x;
      layer_norm_fwd(x, W.ln2_g, W.ln2_b, c.xhat2.middleCols(c0, B), c.rstd2.segment(c0, B),
                     c.ln2.middleCols(c0, B));
      c.u.middleCols(c0, B).noalias() = W.w1 * c.ln2.middleCols(c0, B);
      c.u.middleCols(c0, B).colwise() += W.b1;
      x.noalias() += W.w2 * c.u.middleCols(c0, B).cwiseMax(0.0);
      x.colwise() += W.b2;
    }
    s.x_out.middleCols(c0, B) = x;
  }

  void attention_fwd(detail::Stream& s, const detail::LayerCache* ctx, int l, int i) const {
    using namespace detail;
    LayerCache& c = s.layers[static_cast<std::size_t>(l)];
    const int B = s.batch;
    const int H = cfg_.n_heads;
    const int dh = cfg_.d_model / H;
    const int P = ctx ? static_cast<int>(ctx->k.cols()) : 0;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const Eigen::Index c0 = static_cast<Eigen::Index>(i) * B;
    for (int h = 0; h < H; ++h) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(h) * dh;
      const Mat qh = c.q.block(r0, c0, dh, B) * scale;
      Mat& a = c.probs[static_cast<std::size_t>(i) * H + h];
      a.resize(P + i + 1, B);
      if (P > 0) a.topRows(P).noalias() = ctx->k.middleRows(r0, dh).transpose() * qh;
      for (int j = 0; j <= i; ++j)
        a.row(P + j) = (qh.array() * c.k.block(r0, static_cast<Eigen::Index>(j) * B, dh, B).array())
                           .colwise()
                           .sum();
      const Eigen::RowVectorXd mx = a.colwise().maxCoeff();
      a.rowwise() -= mx;
      a = a.array().exp();
      const Eigen::RowVectorXd z = a.colwise().sum();
      a.array().rowwise() /= z.array();
      auto o = c.attn.block(r0, c0, dh, B);
      if (P > 0)
        o.noalias() = ctx->v.middleRows(r0, dh) * a.topRows(P);
      else
        o.setZero();
      for (int j = 0; j <= i; ++j)
        o.array() += c.v.block(r0, static_cast<Eigen::Index>(j) * B, dh, B).array().rowwise() *
                     a.row(P + j).array();
    }
  }

  void forward_position(ArWorkspace& ws, int i) const {
    using namespace detail;
    const int B = ws.spins.batch;
    const Eigen::Index c0 = static_cast<Eigen::Index>(i) * B;
    const auto tok = view_c("embed.token");
    const auto pos = view_c("embed.position");
    Mat x(cfg_.d_model, B);
    for (int b = 0; b < B; ++b)
      x.col(b) = tok.col(input_token(ws.configs[static_cast<std::size_t>(b)], i)) +
                 pos.col(cfg_.n_angles + i);
    run_layers(ws.spins, cfg_.n_angles > 0 ? &ws.prefix : nullptr, i, x);
    layer_norm_fwd(x, vview_c("lnf.g"), vview_c("lnf.b"), ws.xhatf.middleCols(c0, B),
                   ws.rstdf.segment(c0, B), ws.f.middleCols(c0, B));
    ws.logits.middleCols(c0, B).noalias() = view_c("head.W") * ws.f.middleCols(c0, B);
    ws.logits.middleCols(c0, B).colwise() += vview_c("head.b");
  }

  /**
   * Backward through layer l of stream s. dx holds d(loss)/d(layer output) on
   * entry and d(loss)/d(layer input) on exit. Gradients w.r.t. the context
   * keys/values (prefix) are accumulated into dctx_k/dctx_v; extra_dk/extra_dv
   * are added to this stream's own key/value gradients.
   */
  void layer_backward(const detail::Stream& s, const detail::Stream* ctx, int l, detail::Mat& dx,
                      double* gb, detail::Mat* dctx_k, detail::Mat* dctx_v,
                      const detail::Mat* extra_dk, const detail::Mat* extra_dv) const {
    using namespace detail;
    const LayerCache& c = s.layers[static_cast<std::size_t>(l)];
    const LayerW W = layer_c(l);
    LayerW G = layer(gb, l);

    // FFN block.
    const Mat r = c.u.cwiseMax(0.0);
    G.w2.noalias() += dx * r.transpose();
    G.b2 += dx.rowwise().sum();
    Mat du = W.w2.transpose() * dx;
    du.array() *= (c.u.array() > 0.0).cast<double>();
    G.w1.noalias() += du * c.ln2.transpose();
    G.b1 += du.rowwise().sum();
    const Mat dln2 = W.w1.transpose() * du;
    dx += layer_norm_bwd(dln2, c.xhat2, c.rstd2, W.ln2_g, G.ln2_g, G.ln2_b);

    // Attention block.
    G.wo.noalias() += dx * c.attn.transpose();
    G.bo += dx.rowwise().sum();
    const Mat dattn = W.wo.transpose() * dx;
    Mat dq, dk, dv;
    attention_bwd(s, ctx ? &ctx->layers[static_cast<std::size_t>(l)] : nullptr, l, dattn, dq, dk,
                  dv, dctx_k, dctx_v);
    if (extra_dk) dk += *extra_dk;
    if (extra_dv) dv += *extra_dv;
    G.wq.noalias() += dq * c.ln1.transpose();
    G.bq += dq.rowwise().sum();
    G.wk.noalias() += dk * c.ln1.transpose();
    G.bk += dk.rowwise().sum();
    G.wv.noalias() += dv * c.ln1.transpose();
    G.bv += dv.rowwise().sum();
    Mat dln1 = W.wq.transpose() * dq;
    dln1.noalias() += W.wk.transpose() * dk;
    dln1.noalias() += W.wv.transpose() * dv;
    dx += layer_norm_bwd(dln1, c.xhat1, c.rstd1, W.ln1_g, G.ln1_g, G.ln1_b);
  }

  void attention_bwd(const detail::Stream& s, const detail::LayerCache* ctx, int l,
                     const detail::Mat& dattn, detail::Mat& dq, detail::Mat& dk, detail::Mat& dv,
                     detail::Mat* dctx_k, detail::Mat* dctx_v) const {
    using namespace detail;
    const LayerCache& c = s.layers[static_cast<std::size_t>(l)];
    const int B = s.batch;
    const int H = cfg_.n_heads;
    const int dh = cfg_.d_model / H;
    const int P = ctx ? static_cast<int>(ctx->k.cols()) : 0;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    dq.setZero(c.q.rows(), c.q.cols());
    dk.setZero(c.k.rows(), c.k.cols());
    dv.setZero(c.v.rows(), c.v.cols());
    for (int i = 0; i < s.npos; ++i) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(i) * B;
      for (int h = 0; h < H; ++h) {
        const Eigen::Index r0 = static_cast<Eigen::Index>(h) * dh;
        const Mat& a = c.probs[static_cast<std::size_t>(i) * H + h];
        const auto dout = dattn.block(r0, c0, dh, B);
        Mat da(P + i + 1, B);
        if (P > 0) {
          da.topRows(P).noalias() = ctx->v.middleRows(r0, dh).transpose() * dout;
          dctx_v->middleRows(r0, dh).noalias() += dout * a.topRows(P).transpose();
        }
        for (int j = 0; j <= i; ++j) {
          const Eigen::Index cj = static_cast<Eigen::Index>(j) * B;
          da.row(P + j) = (dout.array() * c.v.block(r0, cj, dh, B).array()).colwise().sum();
          dv.block(r0, cj, dh, B).array() += dout.array().rowwise() * a.row(P + j).array();
        }
        // Softmax backward.
        const Eigen::RowVectorXd dot = (a.array() * da.array()).colwise().sum();
        Mat ds = a.array() * (da.array().rowwise() - dot.array());
        ds *= scale;
        const Mat qh = c.q.block(r0, c0, dh, B);
        auto dqh = dq.block(r0, c0, dh, B);
        if (P > 0) {
          dqh.noalias() += ctx->k.middleRows(r0, dh) * ds.topRows(P);
          dctx_k->middleRows(r0, dh).noalias() += qh * ds.topRows(P).transpose();
        }
        for (int j = 0; j <= i; ++j) {
          const Eigen::Index cj = static_cast<Eigen::Index>(j) * B;
          dqh.array() += c.k.block(r0, cj, dh, B).array().rowwise() * ds.row(P + j).array();
          dk.block(r0, cj, dh, B).array() += qh.array().rowwise() * ds.row(P + j).array();
        }
      }
    }
  }

  ArConfig cfg_;
  std::vector<TensorInfo> tensors_;
  std::size_t layout_total_ = 0;
  AlignedVector params_;
};

}  // namespace sbnd
