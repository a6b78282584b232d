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


#include "sbnd/absnd.hpp"

#include <gtest/gtest.h>

#include <numbers>

#include "sbnd/models.hpp"

using namespace sbnd;

namespace {

ArConfig tiny(int n) {
  ArConfig c;
  c.n_sites = n;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 8;
  return c;
}

std::vector<double> random_angles(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> t(static_cast<std::size_t>(n));
  for (double& v : t) v = -std::numbers::pi + 2 * std::numbers::pi * rng.uniform();
  return t;
}

double rotated_energy(const PauliSum& h, const TransformSpec& s, std::span<const double> th,
                      const ConfigSet& c) {
  return sbd_energy(h, s.transform(th), c).energy;
}

}  // namespace

TEST(transform_spec, parameter_counts_and_gate_order) {
  EXPECT_EQ(TransformSpec::single_spin(7).n_params(), 7);
  EXPECT_EQ(TransformSpec::pairwise(6).n_params(), 15);
  EXPECT_EQ(TransformSpec::pairwise(5).n_params(), 12);
  EXPECT_EQ(TransformSpec::circuit(LatticeSpec::square(2, 3, 1.0, false)).n_params(),
            ansatz_sec4_size(6, 7));
  const std::vector<double> th = random_angles(15, 1);
  const BasisTransform t = TransformSpec::pairwise(6).transform(th);
  ASSERT_EQ(t.gates.size(), 15u);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(t.gates[static_cast<std::size_t>(i)].kind, GateKind::RY);
  for (int i = 6; i < 9; ++i) EXPECT_EQ(t.gates[static_cast<std::size_t>(i)].kind, GateKind::RZZ);
  for (int i = 9; i < 15; ++i) EXPECT_EQ(t.gates[static_cast<std::size_t>(i)].kind, GateKind::RX);
  EXPECT_THROW(TransformSpec::single_spin(3).transform(random_angles(2, 1)), std::invalid_argument);
  EXPECT_EQ(parse_transform_family("pairwise_blocks"), TransformFamily::PairwiseBlocks);
  EXPECT_THROW(parse_transform_family("bogus"), std::invalid_argument);
}

TEST(hf_angle_gradient, matches_finite_differences) {
  // Random angles, random sets and all three families for N <= 4.
  int checked = 0;
  for (int n = 2; n <= 4; ++n) {
    const LatticeSpec lat = LatticeSpec::chain(n, 0.9);
    const PauliSum h = build_hamiltonian(lat);
    for (const TransformSpec& s :
         {TransformSpec::single_spin(n), TransformSpec::pairwise(n), TransformSpec::circuit(lat)}) {
      for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        Rng rng(seed * 31 + static_cast<std::uint64_t>(n));
        ConfigSet c;
        const std::size_t size = 1 + rng.below(std::size_t{1} << (n - 1));
        while (c.size() < size) c.insert(rng.below(std::size_t{1} << n));
        std::vector<double> th = random_angles(s.n_params(), seed + 100);
        const BasisTransform t = s.transform(th);
        const SubspaceResult r = sbd_energy(h, t, c);
        const auto g = hf_angle_gradient(h, t, c, r.vector);
        for (int i = 0; i < s.n_params(); ++i) {
          const double step = 1e-5, save = th[static_cast<std::size_t>(i)];
          th[static_cast<std::size_t>(i)] = save + step;
          const double ep = rotated_energy(h, s, th, c);
          th[static_cast<std::size_t>(i)] = save - step;
          const double em = rotated_energy(h, s, th, c);
          th[static_cast<std::size_t>(i)] = save;
          const double fd = (ep - em) / (2 * step);
          EXPECT_NEAR(g[static_cast<std::size_t>(i)], fd, 1e-6 * std::max(1.0, std::abs(fd)));
          ++checked;
        }
      }
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(hf_angle_gradient, vanishes_for_commuting_gate_and_full_basis) {
  // RZZ commutes with a ZZ-only Hamiltonian.
  PauliSum h(2);
  h.add("ZZ", -1.0);
  h.add("ZI", 0.3);
  BasisTransform t(2);
  t.gates.push_back(RotationGate::rzz(0, 1, 0.7, 0));
  const ConfigSet c{0b01};
  const SubspaceResult r = sbd_energy(h, t, c);
  EXPECT_NEAR(hf_angle_gradient(h, t, c, r.vector)[0], 0.0, 1e-14);
  // Full basis: the spectrum is unitarily invariant.
  const PauliSum h3 = build_hamiltonian(LatticeSpec::chain(3, 1.1));
  const TransformSpec s = TransformSpec::pairwise(3);
  const BasisTransform t3 = s.transform(random_angles(s.n_params(), 4));
  const ConfigSet all = ConfigSet::full_basis(3);
  const SubspaceResult r3 = sbd_energy(h3, t3, all);
  for (double v : hf_angle_gradient(h3, t3, all, r3.vector)) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(energy_backend, circuit_matches_pauli) {
  const LatticeSpec lat = LatticeSpec::chain(4, 0.8);
  const PauliSum h = build_hamiltonian(lat);
  const TransformSpec s = TransformSpec::circuit(lat);
  EnergyBackend pauli(h, s, EnergyBackendKind::Pauli), circ(h, s, EnergyBackendKind::Circuit);
  const auto th = random_angles(s.n_params(), 7);
  pauli.prepare(th, true);
  circ.prepare(th, true);
  const ConfigSet c{0b0000, 0b0101, 0b1110, 0b0011};
  const BatchEnergy a = pauli.evaluate(c), b = circ.evaluate(c);
  EXPECT_NEAR(a.energy, b.energy, 1e-10);
  ASSERT_EQ(a.hf.size(), b.hf.size());
  for (std::size_t i = 0; i < a.hf.size(); ++i) EXPECT_NEAR(a.hf[i], b.hf[i], 1e-9);
  EXPECT_THROW(EnergyBackend(build_hamiltonian(LatticeSpec::chain(13, 1.0)),
                             TransformSpec::single_spin(13), EnergyBackendKind::Circuit),
               std::invalid_argument);
}

TEST(absnd_gradient, zero_encoder_reduces_to_mean_hf) {
  const PauliSum h = build_hamiltonian(LatticeSpec::chain(3, 0.7));
  const TransformSpec s = TransformSpec::single_spin(3);
  ArConfig a = tiny(3);
  a.n_angles = 3;
  ArModel m(a, Rng(2));
  Rng rng(5);
  for (double& p : m.params()) p += 0.5 * rng.normal();
  const TensorInfo& w = m.tensor("angle.W");
  std::fill_n(m.params().begin() + static_cast<std::ptrdiff_t>(w.offset), w.rows * w.cols, 0.0);
  const auto th = random_angles(3, 8);
  EnergyBackend be(h, s, EnergyBackendKind::Pauli);
  be.prepare(th, true);
  std::vector<ArWorkspace> ws(3);
  std::vector<double> e;
  std::vector<std::vector<double>> hf;
  for (auto& wk : ws) {
    m.sample(wk, 4, th, 1.0, rng);
    const BatchEnergy b = be.evaluate(ConfigSet(wk.configs));
    e.push_back(b.energy);
    hf.push_back(b.hf);
  }
  const AbsndGradient g = absnd_gradient(m, ws, e, hf);
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_NEAR(g.theta[i], (hf[0][i] + hf[1][i] + hf[2][i]) / 3.0, 1e-14);
}

TEST(absnd_gradient, expectation_matches_enumeration) {
  // N=2, BS=1, K=2: E[estimator] = (1 - 1/K) * sum dP E + sum P dE.
  const PauliSum h = build_hamiltonian(LatticeSpec::chain(2, 0.8));
  const TransformSpec s = TransformSpec::single_spin(2);
  ArConfig a = tiny(2);
  a.n_angles = 2;
  ArModel m(a, Rng(3));
  Rng rng(6);
  for (double& p : m.params()) p += 0.7 * rng.normal();
  std::vector<double> th = {0.4, -0.9};
  auto energies = [&](std::span<const double> t) {
    std::vector<double> e(4);
    for (Bitstring x = 0; x < 4; ++x) e[x] = rotated_energy(h, s, t, ConfigSet{x});
    return e;
  };
  const auto e = energies(th);
  std::vector<double> p(4);
  for (Bitstring x = 0; x < 4; ++x) p[x] = std::exp(m.log_prob(x, th));
  std::array<double, 2> score_part{}, hf_part{};
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector<double> tp = th, tm = th;
    tp[i] += 1e-5;
    tm[i] -= 1e-5;
    const auto ep = energies(tp), em = energies(tm);
    for (Bitstring x = 0; x < 4; ++x) {
      score_part[i] += (std::exp(m.log_prob(x, tp)) - std::exp(m.log_prob(x, tm))) / 2e-5 * e[x];
      hf_part[i] += p[x] * (ep[x] - em[x]) / 2e-5;
    }
  }
  ASSERT_GT(std::abs(score_part[0]) + std::abs(score_part[1]), 1e-3);
  EnergyBackend be(h, s, EnergyBackendKind::Pauli);
  be.prepare(th, true);
  std::array<double, 2> mean{};
  for (Bitstring x0 = 0; x0 < 4; ++x0)
    for (Bitstring x1 = 0; x1 < 4; ++x1) {
      std::vector<ArWorkspace> ws(2);
      m.evaluate(ws[0], std::vector<Bitstring>{x0}, th, 1.0);
      m.evaluate(ws[1], std::vector<Bitstring>{x1}, th, 1.0);
      const BatchEnergy b0 = be.evaluate(ConfigSet{x0}), b1 = be.evaluate(ConfigSet{x1});
      const double en[] = {b0.energy, b1.energy};
      const std::vector<std::vector<double>> hf = {b0.hf, b1.hf};
      const AbsndGradient g = absnd_gradient(m, ws, en, hf);
      for (std::size_t i = 0; i < 2; ++i) mean[i] += p[x0] * p[x1] * g.theta[i];
    }
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(mean[i], 0.5 * score_part[i] + hf_part[i], 1e-8);
}

TEST(absnd_gradient, stationary_at_single_spin_optimum) {
  // H = -hX - gZ on one spin, sampler pinned to |0>: the optimum sits at
  // theta* with tan(theta*) = h/g, where the angle gradient must vanish.
  const double hx = 1.3, gz = 0.4;
  PauliSum h(1);
  h.add("X", -hx);
  h.add("Z", -gz);
  const TransformSpec s = TransformSpec::single_spin(1);
  ArConfig a = tiny(1);
  a.n_angles = 1;
  ArModel m(a, Rng(4));
  m.params()[m.tensor("head.b").offset] = 80.0;
  const std::vector<double> th = {std::atan2(hx, gz)};
  EXPECT_NEAR(rotated_energy(h, s, th, ConfigSet{0}), -std::hypot(hx, gz), 1e-12);
  EnergyBackend be(h, s, EnergyBackendKind::Pauli);
  be.prepare(th, true);
  Rng rng(1);
  std::vector<ArWorkspace> ws(4);
  std::vector<double> e;
  std::vector<std::vector<double>> hf;
  for (auto& w : ws) {
    m.sample(w, 8, th, 1.0, rng);
    const BatchEnergy b = be.evaluate(ConfigSet(w.configs));
    e.push_back(b.energy);
    hf.push_back(b.hf);
  }
  EXPECT_LT(std::abs(absnd_gradient(m, ws, e, hf).theta[0]), 1e-4);
}

TEST(train_absnd, fixed_full_basis_is_exact_every_step) {
  const PauliSum h = build_hamiltonian(LatticeSpec::chain(3, 0.9));
  const double e0 = exact_diag(h).energy;
  TrainConfig cfg;
  cfg.steps = 15;
  cfg.arch = tiny(3);
  AbsndOptions opt{TransformSpec::pairwise(3)};
  opt.fixed_configs = ConfigSet::full_basis(3);
  opt.theta0 = random_angles(opt.spec.n_params(), 3);
  const AbsndResult r = train_absnd(h, cfg, opt, Rng(1));
  for (double e : r.trace.mean_energy) EXPECT_NEAR(e, e0, 1e-9);
}

TEST(train_absnd, fixed_reference_reaches_direct_minimum) {
  // One configuration and single-spin rotations: the variational limit.
  const PauliSum h = build_hamiltonian(LatticeSpec::chain(2, 0.8));
  const TransformSpec s = TransformSpec::single_spin(2);
  // Direct minimization on a grid followed by coordinate refinement.
  std::vector<double> best = {0, 0};
  double ebest = 1e9;
  for (int i = 0; i < 200; ++i)
    for (int j = 0; j < 200; ++j) {
      const std::vector<double> t = {-std::numbers::pi + 2 * std::numbers::pi * i / 200,
                                     -std::numbers::pi + 2 * std::numbers::pi * j / 200};
      const double e = rotated_energy(h, s, t, ConfigSet{0});
      if (e < ebest) ebest = e, best = t;
    }
  for (double d = 1e-2; d > 1e-9; d *= 0.5)
    for (int rep = 0; rep < 4; ++rep)
      for (std::size_t k = 0; k < 2; ++k)
        for (double sg : {-1.0, 1.0}) {
          std::vector<double> t = best;
          t[k] += sg * d;
          const double e = rotated_energy(h, s, t, ConfigSet{0});
          if (e < ebest) ebest = e, best = t;
        }
  TrainConfig cfg;
  cfg.steps = 600;
  cfg.lr_theta = 2e-2;
  cfg.arch = tiny(2);
  AbsndOptions opt{s};
  opt.fixed_configs = ConfigSet{0};
  const AbsndResult r = train_absnd(h, cfg, opt, Rng(2));
  EXPECT_NEAR(r.trace.mean_energy.back(), ebest, 1e-5);
  EXPECT_LT(ebest, rotated_energy(h, s, std::vector<double>{0, 0}, ConfigSet{0}) - 0.1);
}

TEST(train_absnd, strong_field_rotates_to_x_basis) {
  const LatticeSpec lat = LatticeSpec::chain(4, 10.0);
  const PauliSum h = build_hamiltonian(lat);
  TrainConfig cfg;
  cfg.K = 4;
  cfg.batch_size = 4;
  cfg.steps = 300;
  cfg.lr_theta = 3e-2;
  cfg.arch = tiny(4);
  const AbsndResult r = train_absnd(h, cfg, {TransformSpec::single_spin(4)}, Rng(3));
  for (double t : r.theta) EXPECT_NEAR(std::abs(std::remainder(t, 2 * std::numbers::pi)),
                                       std::numbers::pi / 2, 0.05);
  EXPECT_EQ(r.trace.theta.size(), 300u);
  EXPECT_LT(r.trace.mean_energy.back(), r.trace.mean_energy.front());
}
