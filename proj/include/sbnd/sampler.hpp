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

// Sampling front end of the neural sampler and the score-function (SND)
// training loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "sbnd/adam.hpp"
#include "sbnd/subspace.hpp"
#include "sbnd/transformer.hpp"

namespace sbnd {

struct TrainConfig {
  /// Batches per step.
  int K = 16;
  /// Bitstrings drawn per batch (duplicates included).
  int batch_size = 128;
  int steps = 200;
  /// Adam rate for network weights.
  double lr = 1e-3;
  /// Adam rate for basis angles.
  double lr_theta = 1e-2;
  /// Both rates follow a cosine schedule from 1 down to this fraction of
  /// their initial value; 1 keeps them constant.
  double lr_final_fraction = 1.0;
  /// Sampling temperature during training.
  double temperature = 1.0;
  /// Network shape; n_sites and n_angles are filled in by the trainers.
  ArConfig arch{};

  void validate() const {
    if (K < 1) throw std::invalid_argument("TrainConfig: K must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (steps < 0) throw std::invalid_argument("TrainConfig: steps must be >= 0");
    if (!(lr >= 0) || !(lr_theta >= 0)) throw std::invalid_argument("TrainConfig: negative rate");
    if (!(lr_final_fraction >= 0) || lr_final_fraction > 1)
      throw std::invalid_argument("TrainConfig: lr_final_fraction must be in [0, 1]");
    if (!(temperature > 0)) throw std::invalid_argument("TrainConfig: temperature must be > 0");
  }

  /// Rate multiplier at a given step.
  double lr_scale(int step) const {
    if (lr_final_fraction == 1.0 || steps <= 1) return 1.0;
    const double c = 0.5 * (1.0 + std::cos(std::numbers::pi * step / (steps - 1)));
    return lr_final_fraction + (1.0 - lr_final_fraction) * c;
  }
};

struct TrainTrace {
  /// Per-step mean batch energy.
  std::vector<double> mean_energy;
  /// Per-step angles (empty for SND).
  std::vector<std::vector<double>> theta;
};

struct UniqueSample {
  ConfigSet configs;
  /// Total draws consumed, duplicates included.
  std::size_t draws = 0;
  /// draw_index[s] = draws consumed when configuration s first appeared.
  std::vector<std::size_t> draw_index;
  /// True when max_draws ran out before reaching the target.
  bool partial = false;
  double ratio() const {
    return draws == 0 ? 0.0 : static_cast<double>(configs.size()) / static_cast<double>(draws);
  }
};

/**
 * Draws configurations until `target` distinct ones are seen or max_draws are
 * used. Distinct configurations keep first-seen order; draws past the one that
 * completes the target are not counted.
 */
inline UniqueSample sample_unique(const ArModel& m, std::size_t target,
                                  std::span<const double> theta, double T, Rng& rng,
                                  std::size_t max_draws, std::size_t chunk = 2048) {
  const int n = m.n_sites();
  if (n < 64 && target > (std::size_t{1} << n))
    throw std::invalid_argument("sample_unique: target exceeds 2^N");
  if (chunk == 0) throw std::invalid_argument("sample_unique: chunk must be > 0");
  UniqueSample out;
  ArWorkspace ws;
  while (out.configs.size() < target && out.draws < max_draws) {
    const std::size_t b = std::min(chunk, max_draws - out.draws);
    m.sample(ws, b, theta, T, rng);
    for (Bitstring x : ws.configs) {
      ++out.draws;
      if (out.configs.insert(x)) {
        out.draw_index.push_back(out.draws);
        if (out.configs.size() == target) break;
      }
    }
  }
  out.partial = out.configs.size() < target;
  return out;
}

/**
 * Score-function gradient with the mean-energy baseline:
 *   grad = (1/K) sum_k [sum_{x in batch k} d log P(x) / d omega] (E_k - mean E).
 * Every drawn bitstring contributes, duplicates included. Angle gradients of
 * the same surrogate are accumulated into grad_theta when it is non-empty.
 */
inline void snd_gradient(const ArModel& m, std::span<const ArWorkspace> batches,
                         std::span<const double> energies, std::span<double> grad,
                         std::span<double> grad_theta = {}) {
  if (batches.size() != energies.size() || batches.empty())
    throw std::invalid_argument("snd_gradient: batch/energy count mismatch");
  const double K = static_cast<double>(batches.size());
  double mean = 0.0;
  for (double e : energies) mean += e;
  mean /= K;
  std::vector<double> w;
  for (std::size_t k = 0; k < batches.size(); ++k) {
    w.assign(batches[k].configs.size(), (energies[k] - mean) / K);
    m.backward(batches[k], w, grad, grad_theta);
  }
}

/// Convenience form taking raw bitstring lists (teacher-forced).
inline std::vector<double> snd_gradient(const ArModel& m,
                                        const std::vector<std::vector<Bitstring>>& batches,
                                        std::span<const double> energies,
                                        std::span<const double> theta = {}) {
  std::vector<ArWorkspace> ws(batches.size());
  for (std::size_t k = 0; k < batches.size(); ++k) m.evaluate(ws[k], batches[k], theta, 1.0);
  std::vector<double> g(m.n_params(), 0.0);
  snd_gradient(m, ws, energies, g);
  return g;
}

/// Subspace energy oracle used by training: lowest eigenpair on a set, and
/// optionally the operator-path angle gradient.
struct BatchEnergy {
  double energy = 0.0;
  Eigen::VectorXcd psi;
  std::vector<double> hf;  // empty when angles are not trained
};

namespace detail {

/// Draws K batches, evaluates their subspace energies and returns the mean.
/// Workspaces keep the caches for backward.
template <class EnergyFn>
double draw_and_evaluate(const ArModel& m, std::span<const double> theta, const TrainConfig& cfg,
                         Rng& rng, std::vector<ArWorkspace>& ws, std::vector<BatchEnergy>& out,
                         EnergyFn&& energy) {
  ws.resize(static_cast<std::size_t>(cfg.K));
  out.resize(static_cast<std::size_t>(cfg.K));
  double mean = 0.0;
  for (int k = 0; k < cfg.K; ++k) {
    ArWorkspace& w = ws[static_cast<std::size_t>(k)];
    m.sample(w, static_cast<std::size_t>(cfg.batch_size), theta, cfg.temperature, rng);
    const ConfigSet c(w.configs);
    out[static_cast<std::size_t>(k)] = energy(c);
    mean += out[static_cast<std::size_t>(k)].energy;
  }
  return mean / cfg.K;
}

}  // namespace detail

struct InferenceRow {
  /// Requested and obtained subspace sizes.
  std::size_t target = 0;
  std::size_t size = 0;
  /// Draws needed to collect `size` distinct configurations.
  std::size_t draws = 0;
  double energy = 0.0;
  bool partial = false;
};

/**
 * Energies at several subspace sizes from one sampling run: configurations
 * are drawn once up to the largest size, and each smaller size uses the
 * first-seen prefix.
 */
template <class EnergyFn>
std::vector<InferenceRow> infer_energies(const ArModel& m, std::span<const double> theta,
                                         std::span<const std::size_t> sizes, double T,
                                         std::size_t max_draws, Rng& rng, EnergyFn&& energy) {
  std::vector<InferenceRow> rows;
  if (sizes.empty()) return rows;
  const std::size_t smax = *std::max_element(sizes.begin(), sizes.end());
  const UniqueSample u = sample_unique(m, smax, theta, T, rng, max_draws);
  for (std::size_t s : sizes) {
    InferenceRow r;
    r.target = s;
    r.size = std::min(s, u.configs.size());
    r.partial = r.size < s;
    r.draws = r.size == 0 ? 0 : (r.partial ? u.draws : u.draw_index[r.size - 1]);
    if (r.size > 0) r.energy = energy(u.configs.prefix(r.size));
    rows.push_back(r);
  }
  return rows;
}

struct SndResult {
  ArModel model;
  TrainTrace trace;
};

/// Trains a plain (unrotated) sampler against H.
inline SndResult train_snd(const PauliSum& h, const TrainConfig& cfg, Rng rng,
                           const std::function<void(int, double)>& on_step = {}) {
  cfg.validate();
  ArConfig arch = cfg.arch;
  arch.n_sites = h.n_sites;
  arch.n_angles = 0;
  SndResult res{ArModel(arch, rng.split("model-init")), {}};
  ArModel& m = res.model;
  Rng srng = rng.split("train-sampling");
  Adam opt(m.n_params(), {.lr = cfg.lr});
  std::vector<ArWorkspace> ws;
  std::vector<BatchEnergy> be;
  std::vector<double> energies, grad(m.n_params());
  for (int step = 0; step < cfg.steps; ++step) {
    const double mean = detail::draw_and_evaluate(m, {}, cfg, srng, ws, be, [&](const ConfigSet& c) {
      const SubspaceResult r = sbd_energy_rotated(h, c);
      return BatchEnergy{r.energy, {}, {}};
    });
    energies.clear();
    for (const auto& b : be) energies.push_back(b.energy);
    std::fill(grad.begin(), grad.end(), 0.0);
    snd_gradient(m, ws, energies, grad);
    opt.set_lr(cfg.lr * cfg.lr_scale(step));
    opt.step(m.params(), grad);
    res.trace.mean_energy.push_back(mean);
    if (on_step) on_step(step, mean);
  }
  return res;
}

}  // namespace sbnd
