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

// Adaptive-basis training: joint updates of the sampler weights and the
// basis-change angles, with the operator-path (Hellmann-Feynman) angle
// gradient evaluated either on conjugated Pauli sums or on a statevector
// circuit.

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbnd/models.hpp"
#include "sbnd/qcircuit.hpp"
#include "sbnd/sampler.hpp"

namespace sbnd {

enum class TransformFamily { SingleSpinRy, PairwiseBlocks, CircuitAnsatz };

inline std::string_view transform_family_name(TransformFamily f) {
  switch (f) {
    case TransformFamily::SingleSpinRy: return "single_spin_ry";
    case TransformFamily::PairwiseBlocks: return "pairwise_blocks";
    default: return "circuit_ansatz";
  }
}

inline TransformFamily parse_transform_family(std::string_view s) {
  if (s == "single_spin_ry") return TransformFamily::SingleSpinRy;
  if (s == "pairwise_blocks") return TransformFamily::PairwiseBlocks;
  if (s == "circuit_ansatz") return TransformFamily::CircuitAnsatz;
  throw std::invalid_argument("unknown transform family: " + std::string(s));
}

/**
 * Trainable basis-change pattern.
 *
 *  single_spin_ry:  RY(theta_i) on every spin; N angles.
 *  pairwise_blocks: RY on every spin, then RZZ on the disjoint pairs {0,1},
 *                   {2,3}, ..., then RX on every spin; 2N + floor(N/2) angles
 *                   numbered in that gate order.
 *  circuit_ansatz:  RY layer plus two (RZZ on `pairs`, RX layer) blocks.
 */
struct TransformSpec {
  TransformFamily family = TransformFamily::SingleSpinRy;
  int n_sites = 0;
  std::vector<std::pair<int, int>> pairs;  // circuit_ansatz only

  static TransformSpec single_spin(int n) { return {TransformFamily::SingleSpinRy, n, {}}; }
  static TransformSpec pairwise(int n) { return {TransformFamily::PairwiseBlocks, n, {}}; }
  static TransformSpec circuit(const LatticeSpec& spec) {
    return {TransformFamily::CircuitAnsatz, spec.n_sites(), bond_pairs(spec)};
  }

  int n_params() const {
    switch (family) {
      case TransformFamily::SingleSpinRy: return n_sites;
      case TransformFamily::PairwiseBlocks: return 2 * n_sites + n_sites / 2;
      default: return ansatz_sec4_size(n_sites, pairs.size());
    }
  }

  void validate() const {
    if (n_sites < 1 || n_sites > kMaxSites) throw std::invalid_argument("TransformSpec: bad N");
    if (family == TransformFamily::CircuitAnsatz && pairs.empty() && n_sites > 1)
      throw std::invalid_argument("TransformSpec: circuit ansatz needs a pair list");
  }

  BasisTransform transform(std::span<const double> theta) const {
    if (static_cast<int>(theta.size()) != n_params())
      throw std::invalid_argument("TransformSpec: expected " + std::to_string(n_params()) +
                                  " angles, got " + std::to_string(theta.size()));
    BasisTransform t(n_sites);
    const int n = n_sites;
    switch (family) {
      case TransformFamily::SingleSpinRy:
        for (int i = 0; i < n; ++i)
          t.gates.push_back(RotationGate::ry(i, theta[static_cast<std::size_t>(i)], i));
        break;
      case TransformFamily::PairwiseBlocks: {
        int k = 0;
        for (int i = 0; i < n; ++i, ++k)
          t.gates.push_back(RotationGate::ry(i, theta[static_cast<std::size_t>(k)], k));
        for (int i = 0; i + 1 < n; i += 2, ++k)
          t.gates.push_back(RotationGate::rzz(i, i + 1, theta[static_cast<std::size_t>(k)], k));
        for (int i = 0; i < n; ++i, ++k)
          t.gates.push_back(RotationGate::rx(i, theta[static_cast<std::size_t>(k)], k));
        break;
      }
      case TransformFamily::CircuitAnsatz:
        return ansatz_sec4(n, theta, pairs);
    }
    return t;
  }
};

/// Operator-path angle gradient: component i is psi^dag M'_i psi with M'_i the
/// subspace matrix of d(U^dag H U)/d theta_i.
inline std::vector<double> hf_angle_gradient(const PauliSum& h, const BasisTransform& t,
                                             const ConfigSet& c, const Eigen::VectorXcd& psi) {
  if (psi.size() != static_cast<Eigen::Index>(c.size()))
    throw std::invalid_argument("hf_angle_gradient: eigenvector size mismatch");
  std::vector<double> g(static_cast<std::size_t>(t.n_params()), 0.0);
  for (int i = 0; i < t.n_params(); ++i)
    g[static_cast<std::size_t>(i)] =
        projected_expectation(d_conjugate_transform(h, t, i), c, psi).real();
  return g;
}

enum class EnergyBackendKind { Pauli, Circuit };

/**
 * Subspace energies for a fixed angle vector. prepare() is called once per
 * training step; evaluate() once per batch.
 */
class EnergyBackend {
 public:
  EnergyBackend(const PauliSum& h, TransformSpec spec, EnergyBackendKind kind,
                ExpectationOptions shots = {})
      : h_(h), spec_(std::move(spec)), kind_(kind), shots_(shots) {
    spec_.validate();
    if (h.n_sites != spec_.n_sites) throw std::invalid_argument("EnergyBackend: size mismatch");
    if (kind_ == EnergyBackendKind::Circuit && spec_.n_sites > kMaxCircuitQubits)
      throw std::invalid_argument("EnergyBackend: circuit backend needs N <= 12");
  }

  const TransformSpec& spec() const { return spec_; }
  EnergyBackendKind kind() const { return kind_; }

  void prepare(std::span<const double> theta, bool with_gradient) {
    t_ = spec_.transform(theta);
    with_gradient_ = with_gradient;
    if (kind_ == EnergyBackendKind::Pauli) {
      h_rot_ = conjugate_transform(h_, t_);
      dh_.clear();
      if (with_gradient)
        for (int i = 0; i < t_.n_params(); ++i) dh_.push_back(d_conjugate_transform(h_, t_, i));
    }
  }

  const BasisTransform& transform() const { return t_; }
  /// U^dag H U (Pauli backend; empty otherwise).
  const PauliSum& rotated() const { return h_rot_; }

  BatchEnergy evaluate(const ConfigSet& c) const {
    BatchEnergy out;
    if (kind_ == EnergyBackendKind::Pauli) {
      SubspaceResult r = sbd_energy_rotated(h_rot_, c);
      out.energy = r.energy;
      out.psi = std::move(r.vector);
      if (with_gradient_) {
        out.hf.resize(dh_.size());
        for (std::size_t i = 0; i < dh_.size(); ++i)
          out.hf[i] = projected_expectation(dh_[i], c, out.psi).real();
      }
      return out;
    }
    const Eigen::MatrixXcd m = subspace_matrix_circuit(t_, h_, c, shots_);
    Eigen::MatrixXcd mh = 0.5 * (m + m.adjoint());  // shot noise can break symmetry
    Eigenpair ep = lowest_eigenpair(shots_.shots > 0 ? mh : m);
    out.energy = ep.energy;
    out.psi = std::move(ep.vector);
    if (with_gradient_) {
      StateVector phi{t_.n_sites,
                      Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(std::size_t{1} << t_.n_sites))};
      for (std::size_t l = 0; l < c.size(); ++l)
        phi.amp[static_cast<Eigen::Index>(dense_index(c[l], t_.n_sites))] =
            out.psi[static_cast<Eigen::Index>(l)];
      out.hf.resize(static_cast<std::size_t>(t_.n_params()));
      for (int i = 0; i < t_.n_params(); ++i)
        out.hf[static_cast<std::size_t>(i)] = param_shift_grad_state(t_, h_, phi, i, shots_);
    }
    return out;
  }

 private:
  PauliSum h_;
  TransformSpec spec_;
  EnergyBackendKind kind_;
  ExpectationOptions shots_;
  BasisTransform t_;
  PauliSum h_rot_;
  std::vector<PauliSum> dh_;
  bool with_gradient_ = false;
};

struct AbsndGradient {
  std::vector<double> omega;
  std::vector<double> theta;
};

/**
 * Joint gradient of the AB-SND surrogate:
 *   omega: as snd_gradient with theta-conditioned log-probabilities;
 *   theta: (1/K) sum_k [(sum_x d log P(x|theta)/d theta)(E_k - mean E) + hf_k].
 */
inline AbsndGradient absnd_gradient(const ArModel& m, std::span<const ArWorkspace> batches,
                                    std::span<const double> energies,
                                    std::span<const std::vector<double>> hf) {
  if (hf.size() != batches.size())
    throw std::invalid_argument("absnd_gradient: batch/HF count mismatch");
  AbsndGradient g{std::vector<double>(m.n_params(), 0.0),
                  std::vector<double>(static_cast<std::size_t>(m.n_angles()), 0.0)};
  snd_gradient(m, batches, energies, g.omega, g.theta);
  const double K = static_cast<double>(batches.size());
  for (const auto& v : hf) {
    if (v.size() != g.theta.size())
      throw std::invalid_argument("absnd_gradient: HF length mismatch");
    for (std::size_t i = 0; i < v.size(); ++i) g.theta[i] += v[i] / K;
  }
  return g;
}

struct AbsndOptions {
  TransformSpec spec;
  EnergyBackendKind backend = EnergyBackendKind::Pauli;
  ExpectationOptions shots{};
  /// When set, every batch uses this set instead of sampled configurations;
  /// network weights are then not trained.
  std::optional<ConfigSet> fixed_configs{};
  /// Initial angles; zeros (identity transform) when empty.
  std::vector<double> theta0{};
};

struct AbsndResult {
  ArModel model;
  std::vector<double> theta;
  TrainTrace trace;
};

/// Angle-conditioned sampler over the given transform family.
inline ArModel make_conditioned_model(const PauliSum& h, const TrainConfig& cfg,
                                      const TransformSpec& spec, Rng rng) {
  ArConfig arch = cfg.arch;
  arch.n_sites = h.n_sites;
  arch.n_angles = spec.n_params();
  return ArModel(arch, rng.split("model-init"));
}

/// Joint optimization of omega and theta with the operator-path gradient.
inline AbsndResult train_absnd(const PauliSum& h, const TrainConfig& cfg, const AbsndOptions& opt,
                               Rng rng, const std::function<void(int, double)>& on_step = {}) {
  cfg.validate();
  EnergyBackend backend(h, opt.spec, opt.backend, opt.shots);
  AbsndResult res{make_conditioned_model(h, cfg, opt.spec, rng), {}, {}};
  const std::size_t na = static_cast<std::size_t>(opt.spec.n_params());
  res.theta = opt.theta0.empty() ? std::vector<double>(na, 0.0) : opt.theta0;
  if (res.theta.size() != na) throw std::invalid_argument("train_absnd: theta0 length mismatch");
  ArModel& m = res.model;
  Rng srng = rng.split("train-sampling");
  Adam opt_w(m.n_params(), {.lr = cfg.lr});
  Adam opt_t(na, {.lr = cfg.lr_theta});
  std::vector<ArWorkspace> ws;
  std::vector<BatchEnergy> be;
  std::vector<double> energies;
  std::vector<std::vector<double>> hf;
  for (int step = 0; step < cfg.steps; ++step) {
    opt_w.set_lr(cfg.lr * cfg.lr_scale(step));
    opt_t.set_lr(cfg.lr_theta * cfg.lr_scale(step));
    backend.prepare(res.theta, true);
    double mean = 0.0;
    if (opt.fixed_configs) {
      const BatchEnergy b = backend.evaluate(*opt.fixed_configs);
      mean = b.energy;
      opt_t.step(res.theta, b.hf);
    } else {
      mean = detail::draw_and_evaluate(m, res.theta, cfg, srng, ws, be,
                                       [&](const ConfigSet& c) { return backend.evaluate(c); });
      energies.clear();
      hf.clear();
      for (auto& b : be) {
        energies.push_back(b.energy);
        hf.push_back(std::move(b.hf));
      }
      const AbsndGradient g = absnd_gradient(m, ws, energies, hf);
      opt_w.step(m.params(), g.omega);
      opt_t.step(res.theta, g.theta);
    }
    res.trace.mean_energy.push_back(mean);
    res.trace.theta.push_back(res.theta);
    if (on_step) on_step(step, mean);
  }
  return res;
}

}  // namespace sbnd
