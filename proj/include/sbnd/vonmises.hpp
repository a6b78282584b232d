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

// Sampled-angle variant of adaptive-basis training: a second autoregressive
// network draws the basis angles from a product of conditional Von Mises
// distributions and is trained with the same baselined score function.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "sbnd/absnd.hpp"
#include "sbnd/adam.hpp"
#include "sbnd/rng.hpp"

namespace sbnd {

/// log I0(k) for k >= 0; large-argument series above 700.
inline double log_bessel_i0(double k) {
  if (k < 700.0) return std::log(std::cyl_bessel_i(0.0, k));
  const double r = 1.0 / k;
  return k - 0.5 * std::log(2.0 * std::numbers::pi * k) +
         std::log1p(r / 8.0 + 9.0 * r * r / 128.0 + 225.0 * r * r * r / 3072.0);
}

/// I1(k) / I0(k), the derivative of log I0.
inline double bessel_ratio_i1_i0(double k) {
  if (k < 700.0) return std::cyl_bessel_i(1.0, k) / std::cyl_bessel_i(0.0, k);
  const double r = 1.0 / k;
  return 1.0 - 0.5 * r - 0.125 * r * r - 0.125 * r * r * r;
}

/// log density of VonMises(mu, k) at theta.
inline double vonmises_log_pdf(double theta, double mu, double k) {
  return k * std::cos(theta - mu) - std::log(2.0 * std::numbers::pi) - log_bessel_i0(k);
}

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  const double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a + std::numbers::pi, two_pi);
  if (a <= 0.0) a += two_pi;
  return a - std::numbers::pi;
}

/**
 * One Von Mises draw. Best-Fisher rejection sampling; a wrapped normal for
 * k > 1e5 and a uniform draw for k < 1e-8. Result in (-pi, pi].
 */
inline double sample_vonmises(double mu, double k, Rng& rng) {
  const double pi = std::numbers::pi;
  if (k < 1e-8) return wrap_angle(pi * (2.0 * rng.uniform() - 1.0));
  if (k > 1e5) return wrap_angle(mu + rng.normal() / std::sqrt(k));
  double s;
  if (k < 1e-5) {
    s = 1.0 / k + k;
  } else {
    const double r = 1.0 + std::sqrt(1.0 + 4.0 * k * k);
    const double rho = (r - std::sqrt(2.0 * r)) / (2.0 * k);
    s = (1.0 + rho * rho) / (2.0 * rho);
  }
  double w;
  for (;;) {
    const double u = rng.uniform();
    const double z = std::cos(pi * u);
    w = (1.0 + s * z) / (s + z);
    const double y = k * (s - w);
    const double v = rng.uniform_open0();
    if (y * (2.0 - y) - v >= 0.0 || std::log(y / v) + 1.0 - y >= 0.0) break;
  }
  double res = std::acos(std::clamp(w, -1.0, 1.0));
  if (rng.uniform() < 0.5) res = -res;
  return wrap_angle(res + mu);
}

/**
 * Autoregressive angle model: a masked one-hidden-layer MLP (tanh) mapping
 * (cos theta_j, sin theta_j), j < i, to the location mu_i and concentration
 * kappa_i = softplus(raw_i) + 1e-3. Hidden unit u has degree u mod n and sees
 * angles j < degree; output i sees hidden units with degree <= i.
 */
class VonMisesNet {
 public:
  static constexpr double kKappaFloor = 1e-3;

  VonMisesNet() = default;
  VonMisesNet(int n_angles, int hidden, double kappa0, Rng rng)
      : n_(n_angles), hid_(hidden) {
    if (n_angles < 1 || hidden < 1) throw std::invalid_argument("VonMisesNet: bad shape");
    if (!(kappa0 > kKappaFloor)) throw std::invalid_argument("VonMisesNet: kappa0 too small");
    params_.assign(n_params_for(n_, hid_), 0.0);
    mask_in_.setZero(hid_, 2 * n_);
    mask_out_.setZero(n_, hid_);
    for (int u = 0; u < hid_; ++u) {
      const int deg = u % n_;
      for (int j = 0; j < deg; ++j) mask_in_(u, 2 * j) = mask_in_(u, 2 * j + 1) = 1.0;
      for (int i = deg; i < n_; ++i) mask_out_(i, u) = 1.0;
    }
    auto w1 = w_in(params_.data());
    for (Eigen::Index k = 0; k < w1.size(); ++k) w1.data()[k] = rng.normal() / std::sqrt(2.0 * n_);
    // Output weights start at zero: mu = 0, kappa = kappa0 everywhere.
    const double raw = std::log(std::expm1(kappa0 - kKappaFloor));
    auto bk = b_kappa(params_.data());
    bk.setConstant(raw);
  }

  int n_angles() const { return n_; }
  std::size_t n_params() const { return params_.size(); }
  AlignedVector& params() { return params_; }
  const AlignedVector& params() const { return params_; }

  struct Outputs {
    Eigen::VectorXd hidden, mu, raw, kappa;
  };

  /// Conditional parameters for all positions given a full angle vector
  /// (output i depends only on theta_j, j < i).
  Outputs forward(std::span<const double> theta) const {
    check(theta);
    Eigen::VectorXd enc(2 * n_);
    for (int j = 0; j < n_; ++j) {
      enc[2 * j] = std::cos(theta[static_cast<std::size_t>(j)]);
      enc[2 * j + 1] = std::sin(theta[static_cast<std::size_t>(j)]);
    }
    double* p = const_cast<double*>(params_.data());
    Outputs o;
    o.hidden = ((w_in(p).cwiseProduct(mask_in_)) * enc + b_in(p)).array().tanh();
    o.mu = w_mu(p).cwiseProduct(mask_out_) * o.hidden + b_mu(p);
    o.raw = w_kappa(p).cwiseProduct(mask_out_) * o.hidden + b_kappa(p);
    o.kappa.resize(n_);
    for (int i = 0; i < n_; ++i) o.kappa[i] = softplus(o.raw[i]) + kKappaFloor;
    return o;
  }

  double log_prob(std::span<const double> theta) const {
    const Outputs o = forward(theta);
    double s = 0.0;
    for (int i = 0; i < n_; ++i)
      s += vonmises_log_pdf(theta[static_cast<std::size_t>(i)], o.mu[i], o.kappa[i]);
    return s;
  }

  /// Accumulates w * d log P(theta) / d nu into grad.
  void log_prob_grad(std::span<const double> theta, double w, std::span<double> grad) const {
    if (grad.size() != params_.size()) throw std::invalid_argument("VonMisesNet: grad size");
    const Outputs o = forward(theta);
    Eigen::VectorXd dmu(n_), draw(n_), enc(2 * n_);
    for (int i = 0; i < n_; ++i) {
      const double d = theta[static_cast<std::size_t>(i)] - o.mu[i];
      dmu[i] = w * o.kappa[i] * std::sin(d);
      const double dk = std::cos(d) - bessel_ratio_i1_i0(o.kappa[i]);
      draw[i] = w * dk * sigmoid(o.raw[i]);
    }
    for (int j = 0; j < n_; ++j) {
      enc[2 * j] = std::cos(theta[static_cast<std::size_t>(j)]);
      enc[2 * j + 1] = std::sin(theta[static_cast<std::size_t>(j)]);
    }
    double* p = const_cast<double*>(params_.data());
    AlignedVector scratch(grad.size(), 0.0);
    double* g = scratch.data();
    w_mu(g) += (dmu * o.hidden.transpose()).cwiseProduct(mask_out_);
    b_mu(g) += dmu;
    w_kappa(g) += (draw * o.hidden.transpose()).cwiseProduct(mask_out_);
    b_kappa(g) += draw;
    const Eigen::VectorXd dh = w_mu(p).cwiseProduct(mask_out_).transpose() * dmu +
                               w_kappa(p).cwiseProduct(mask_out_).transpose() * draw;
    const Eigen::VectorXd dpre = dh.array() * (1.0 - o.hidden.array().square());
    w_in(g) += (dpre * enc.transpose()).cwiseProduct(mask_in_);
    b_in(g) += dpre;
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += scratch[k];
  }

  /// Sequential draw theta_i ~ VonMises(mu_i(theta_<i), kappa_i(theta_<i)).
  std::vector<double> sample(Rng& rng) const {
    std::vector<double> th(static_cast<std::size_t>(n_), 0.0);
    for (int i = 0; i < n_; ++i) {
      const Outputs o = forward(th);
      th[static_cast<std::size_t>(i)] = sample_vonmises(o.mu[i], o.kappa[i], rng);
    }
    return th;
  }

  /// Sequential modes theta_i = mu_i(theta_<i).
  std::vector<double> mode() const {
    std::vector<double> th(static_cast<std::size_t>(n_), 0.0);
    for (int i = 0; i < n_; ++i) th[static_cast<std::size_t>(i)] = wrap_angle(forward(th).mu[i]);
    return th;
  }

 private:
  using MapM = Eigen::Map<Eigen::MatrixXd>;
  using MapV = Eigen::Map<Eigen::VectorXd>;

  static std::size_t n_params_for(int n, int hid) {
    return static_cast<std::size_t>(hid) * 2 * n + hid + 2 * (static_cast<std::size_t>(n) * hid + n);
  }
  static double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }
  static double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

  MapM w_in(double* p) const { return MapM(p, hid_, 2 * n_); }
  MapV b_in(double* p) const { return MapV(p + hid_ * 2 * n_, hid_); }
  MapM w_mu(double* p) const { return MapM(p + hid_ * 2 * n_ + hid_, n_, hid_); }
  MapV b_mu(double* p) const { return MapV(p + hid_ * 2 * n_ + hid_ + n_ * hid_, n_); }
  MapM w_kappa(double* p) const {
    return MapM(p + hid_ * 2 * n_ + hid_ + n_ * hid_ + n_, n_, hid_);
  }
  MapV b_kappa(double* p) const {
    return MapV(p + hid_ * 2 * n_ + hid_ + 2 * n_ * hid_ + n_, n_);
  }

  void check(std::span<const double> theta) const {
    if (static_cast<int>(theta.size()) != n_)
      throw std::invalid_argument("VonMisesNet: angle count mismatch");
  }

  int n_ = 0;
  int hid_ = 0;
  AlignedVector params_;
  Eigen::MatrixXd mask_in_, mask_out_;
};

struct VonMisesGradient {
  std::vector<double> nu;
  std::vector<double> omega;
};

/**
 * Gradients of the sampled-angle surrogate
 *   (1/K) sum_k [log P_nu(theta_k) + sum_x log P_omega(x | theta_k)] (E_k - mean E).
 * Workspace k must hold batch k sampled (or evaluated) at angles thetas[k].
 */
inline VonMisesGradient vonmises_gradients(const VonMisesNet& net, const ArModel& m,
                                           std::span<const std::vector<double>> thetas,
                                           std::span<const ArWorkspace> batches,
                                           std::span<const double> energies) {
  if (thetas.size() != batches.size() || energies.size() != batches.size() || batches.empty())
    throw std::invalid_argument("vonmises_gradients: K mismatch");
  VonMisesGradient g{std::vector<double>(net.n_params(), 0.0),
                     std::vector<double>(m.n_params(), 0.0)};
  snd_gradient(m, batches, energies, g.omega);
  const double K = static_cast<double>(batches.size());
  double mean = 0.0;
  for (double e : energies) mean += e;
  mean /= K;
  for (std::size_t k = 0; k < batches.size(); ++k)
    net.log_prob_grad(thetas[k], (energies[k] - mean) / K, g.nu);
  return g;
}

struct VonMisesOptions {
  TransformSpec spec;
  int hidden = 64;
  /// Initial concentration of every angle (locations start at 0).
  double kappa0 = 20.0;
  double lr_nu = 1e-2;
};

struct VonMisesResult {
  ArModel model;
  VonMisesNet net;
  /// Sequential modes of the trained angle model, used for inference.
  std::vector<double> theta;
  TrainTrace trace;
};

inline VonMisesResult train_absnd_vonmises(const PauliSum& h, const TrainConfig& cfg,
                                           const VonMisesOptions& opt, Rng rng,
                                           const std::function<void(int, double)>& on_step = {}) {
  cfg.validate();
  EnergyBackend backend(h, opt.spec, EnergyBackendKind::Pauli);
  VonMisesResult res{make_conditioned_model(h, cfg, opt.spec, rng),
                     VonMisesNet(opt.spec.n_params(), opt.hidden, opt.kappa0,
                                 rng.split("angle-model-init")),
                     {},
                     {}};
  ArModel& m = res.model;
  Rng srng = rng.split("train-sampling");
  Rng arng = rng.split("angle-sampling");
  Adam opt_w(m.n_params(), {.lr = cfg.lr});
  Adam opt_nu(res.net.n_params(), {.lr = opt.lr_nu});
  const std::size_t K = static_cast<std::size_t>(cfg.K);
  std::vector<ArWorkspace> ws(K);
  std::vector<std::vector<double>> thetas(K);
  std::vector<double> energies(K);
  for (int step = 0; step < cfg.steps; ++step) {
    opt_w.set_lr(cfg.lr * cfg.lr_scale(step));
    opt_nu.set_lr(opt.lr_nu * cfg.lr_scale(step));
    double mean = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      thetas[k] = res.net.sample(arng);
      backend.prepare(thetas[k], false);
      m.sample(ws[k], static_cast<std::size_t>(cfg.batch_size), thetas[k], cfg.temperature, srng);
      energies[k] = backend.evaluate(ConfigSet(ws[k].configs)).energy;
      mean += energies[k];
    }
    mean /= static_cast<double>(K);
    const VonMisesGradient g = vonmises_gradients(res.net, m, thetas, ws, energies);
    opt_w.step(m.params(), g.omega);
    opt_nu.step(res.net.params(), g.nu);
    res.trace.mean_energy.push_back(mean);
    res.trace.theta.push_back(res.net.mode());
    if (on_step) on_step(step, mean);
  }
  res.theta = res.net.mode();
  return res;
}

}  // namespace sbnd
