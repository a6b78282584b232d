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

#include "sbnd/subspace.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numbers>

#include "sbnd/models.hpp"
#include "test_util.hpp"

using namespace sbnd;
using sbnd::testing::random_pauli_sum;
using sbnd::testing::random_transform;

namespace {

ConfigSet random_subset(int n, std::size_t count, Rng& rng) {
  std::vector<Bitstring> all;
  for (Bitstring x = 0; x < (Bitstring{1} << n); ++x) all.push_back(x);
  for (std::size_t i = all.size() - 1; i > 0; --i) std::swap(all[i], all[rng.below(i + 1)]);
  all.resize(count);
  return ConfigSet(all);
}

}  // namespace

TEST(config_set, unique_and_indexed) {
  ConfigSet c;
  EXPECT_TRUE(c.insert(5));
  EXPECT_TRUE(c.insert(2));
  EXPECT_FALSE(c.insert(5));
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.find(5), 0);
  EXPECT_EQ(c.find(2), 1);
  EXPECT_EQ(c.find(7), -1);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(c.find(c[i]), static_cast<int>(i));
}

TEST(subspace_matrix, single_classical_state) {
  const PauliSum h = build_hamiltonian(LatticeSpec::chain(3, 0.0));
  const SubspaceMatrix m = subspace_matrix(h, ConfigSet{0b000});
  ASSERT_EQ(m.dim, 1);
  EXPECT_EQ(m(0, 0), cplx(-3.0));
}

TEST(subspace_matrix, two_states_with_field) {
  const PauliSum h = build_hamiltonian(LatticeSpec::chain(3, 0.5));
  // |100>: site 0 flipped.
  const SubspaceMatrix m = subspace_matrix(h, ConfigSet{0b000, 0b001});
  Eigen::Matrix2cd expect;
  expect << -3.0, -0.5, -0.5, 1.0;
  EXPECT_LT((m.to_dense() - expect).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(subspace_matrix, full_basis_is_permuted_dense_matrix) {
  Rng rng(9);
  for (int n : {3, 5}) {
    const PauliSum h = random_pauli_sum(n, 12, rng);
    ConfigSet c = random_subset(n, std::size_t{1} << n, rng);
    const Eigen::MatrixXcd m = subspace_matrix(h, c).to_dense();
    const Eigen::MatrixXcd d = dense_matrix(h);
    for (std::size_t l = 0; l < c.size(); ++l)
      for (std::size_t k = 0; k < c.size(); ++k)
        EXPECT_LT(std::abs(m(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(k)) -
                           d(static_cast<Eigen::Index>(dense_index(c[l], n)),
                             static_cast<Eigen::Index>(dense_index(c[k], n)))),
                  1e-14);
  }
}

TEST(subspace_matrix, errors) {
  const PauliSum h = build_hamiltonian(LatticeSpec::chain(3, 0.5));
  EXPECT_THROW(subspace_matrix(h, ConfigSet{}), std::invalid_argument);
  EXPECT_THROW(subspace_matrix(h, ConfigSet{0b1000}), std::invalid_argument);
}

TEST(lowest_eigenpair, closed_form_two_by_two) {
  Eigen::MatrixXcd m(2, 2);
  m << -3.0, -0.5, -0.5, 1.0;
  const Eigenpair ep = lowest_eigenpair(m);
  // (a+d)/2 - sqrt(((a-d)/2)^2 + b^2) with a=-3, d=1, b=-0.5.
  EXPECT_NEAR(ep.energy, -1.0 - std::sqrt(4.25), 1e-14);
  EXPECT_NEAR(ep.vector.norm(), 1.0, 1e-12);
}

TEST(lowest_eigenpair, diagonal) {
  Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(4, 4);
  m.diagonal() << 3.0, -1.0, 2.0, 0.5;
  const Eigenpair ep = lowest_eigenpair(m);
  EXPECT_EQ(ep.energy, -1.0);
  EXPECT_NEAR(std::abs(ep.vector[1]), 1.0, 1e-15);
}

TEST(lowest_eigenpair, full_basis_chain_matches_exact) {
  const PauliSum h = build_hamiltonian(LatticeSpec::chain(8, 0.5));
  const Eigenpair ep = lowest_eigenpair(subspace_matrix(h, ConfigSet::full_basis(8)));
  EXPECT_NEAR(ep.energy, exact_diag(h).energy, 1e-9);
}

TEST(lowest_eigenpair, rejects_non_hermitian) {
  Eigen::MatrixXcd m(2, 2);
  m << 1.0, 0.5, 0.2, 1.0;
  EXPECT_THROW(lowest_eigenpair(m), std::invalid_argument);
}

TEST(lowest_eigenpair, sparse_path_matches_dense_solver) {
  Rng rng(31);
  const PauliSum h = conjugate_transform(build_hamiltonian(LatticeSpec::chain(10, 1.0)),
                                         random_transform(10, 6, rng));
  const ConfigSet c = random_subset(10, 700, rng);
  const SubspaceMatrix m = subspace_matrix(h, c);
  ASSERT_FALSE(m.dense_storage);
  const Eigenpair sparse = lowest_eigenpair(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(m.to_dense());
  EXPECT_NEAR(sparse.energy, es.eigenvalues()[0], 1e-10);
  Eigen::VectorXcd r(m.dim);
  m.apply(sparse.vector, r);
  EXPECT_LT((r - sparse.energy * sparse.vector).norm(), 1e-8 * m.to_dense().norm());
  EXPECT_NEAR(sparse.vector.norm(), 1.0, 1e-12);
}

TEST(sbd_energy, full_basis_is_exact) {
  const PauliSum h = build_hamiltonian(LatticeSpec::square(3, 3, 0.8, false));
  EXPECT_NEAR(sbd_energy(h, std::nullopt, ConfigSet::full_basis(9)).energy,
              exact_diag(h).energy, 1e-9);
}

TEST(sbd_energy, rotated_single_spin) {
  const double hf = 1.3;
  PauliSum h(1);
  h.add("X", -hf);
  BasisTransform t(1);
  t.gates = {RotationGate::ry(0, std::numbers::pi / 2, 0)};
  EXPECT_NEAR(sbd_energy(h, t, ConfigSet{0}).energy, -hf, 1e-14);
}

TEST(sbd_energy, adding_configurations_never_raises_energy) {
  Rng rng(12);
  const PauliSum h = build_hamiltonian(LatticeSpec::chain(8, 1.2));
  const ConfigSet all = random_subset(8, 256, rng);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t s = 1; s <= 256; s += 15) {
    const double e = sbd_energy(h, std::nullopt, all.prefix(s)).energy;
    EXPECT_LE(e, prev + 1e-10);
    prev = e;
  }
}

TEST(relative_error, examples) {
  EXPECT_EQ(relative_error(-3, -3), 0.0);
  EXPECT_NEAR(relative_error(-2.97, -3), 0.01, 1e-15);
  EXPECT_THROW(relative_error(1.0, 0.0), std::invalid_argument);
  const double e0 = exact_diag(build_hamiltonian(LatticeSpec::chain(3, 0.5))).energy;
  const double e2 = -1.0 - std::sqrt(4.25);
  EXPECT_NEAR(relative_error(e2, e0), std::abs((e2 - e0) / e0), 1e-15);
  EXPECT_GT(relative_error(e2, e0), 0.0);
}

TEST(subspace_properties, permutation_invariance) {
  Rng rng(44);
  const PauliSum h = conjugate_transform(build_hamiltonian(LatticeSpec::chain(6, 0.9)),
                                         random_transform(6, 5, rng));
  const ConfigSet c = random_subset(6, 20, rng);
  std::vector<Bitstring> perm = c.configs();
  std::reverse(perm.begin(), perm.end());
  const ConfigSet cp(perm);
  const auto a = sbd_energy_rotated(h, c), b = sbd_energy_rotated(h, cp);
  EXPECT_NEAR(a.energy, b.energy, 1e-12);
  // Same state up to a phase, with entries permuted.
  cplx overlap = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i)
    overlap += std::conj(a.vector[static_cast<Eigen::Index>(i)]) *
               b.vector[cp.find(c[i])];
  EXPECT_NEAR(std::abs(overlap), 1.0, 1e-9);
}

TEST(subspace_properties, hermitian_residual_and_variational) {
  Rng rng(45);
  for (int rep = 0; rep < 30; ++rep) {
    const int n = 3 + static_cast<int>(rng.below(6));
    const LatticeSpec spec = LatticeSpec::chain(n, 2.0 * rng.uniform());
    const PauliSum h0 = build_hamiltonian(spec);
    const PauliSum h = conjugate_transform(h0, random_transform(n, 4, rng));
    const ConfigSet c = random_subset(n, 1 + rng.below(std::size_t{1} << n), rng);
    const SubspaceResult r = sbd_energy_rotated(h, c);
    EXPECT_LT(r.matrix.hermiticity_defect(), 1e-12);
    EXPECT_NEAR(r.vector.norm(), 1.0, 1e-12);
    const Eigen::MatrixXcd d = r.matrix.to_dense();
    EXPECT_LE((d * r.vector - r.energy * r.vector).norm(), 1e-8 * std::max(1.0, d.norm()));
    EXPECT_GE(r.energy, exact_diag(h0).energy - 1e-9);
  }
}

TEST(subspace_properties, nested_sets_are_monotone) {
  Rng rng(46);
  const PauliSum h = conjugate_transform(build_hamiltonian(LatticeSpec::chain(7, 1.0)),
                                         random_transform(7, 7, rng));
  const ConfigSet c = random_subset(7, 128, rng);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t a = 1 + rng.below(127);
    const std::size_t b = a + rng.below(128 - a + 1);
    EXPECT_LE(sbd_energy_rotated(h, c.prefix(b)).energy,
              sbd_energy_rotated(h, c.prefix(a)).energy + 1e-10);
  }
}

TEST(projected_expectation, matches_matrix_sandwich) {
  Rng rng(47);
  const PauliSum h = random_pauli_sum(5, 20, rng);
  const ConfigSet c = random_subset(5, 13, rng);
  Eigen::VectorXcd psi = Eigen::VectorXcd::Random(13);
  const cplx direct = psi.dot(subspace_matrix(h, c).to_dense() * psi);
  EXPECT_LT(std::abs(projected_expectation(h, c, psi) - direct), 1e-12);
}
