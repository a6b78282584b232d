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

#include "sbnd/pauli.hpp"

#include <gtest/gtest.h>

#include <numbers>

#include "sbnd/models.hpp"
#include "test_util.hpp"

using namespace sbnd;
using sbnd::testing::max_abs_diff;
using sbnd::testing::random_pauli_sum;
using sbnd::testing::random_transform;

namespace {

constexpr double kPi = std::numbers::pi;

PauliSum single_term(int n, std::string_view ops, cplx c) {
  PauliSum s(n);
  s.add(ops, c);
  return s;
}

Eigen::MatrixXcd conj_oracle(const PauliSum& h, const BasisTransform& t) {
  const Eigen::MatrixXcd u = dense_unitary(t);
  return u.adjoint() * dense_matrix(h) * u;
}

}  // namespace

TEST(pauli_string, apply_single_site) {
  auto z = string_apply(PauliString::from_ops("Z"), 0b0, 1);
  EXPECT_EQ(z.y, 0b0u);
  EXPECT_EQ(z.amp, cplx(1, 0));

  auto x = string_apply(PauliString::from_ops("X"), 0b0, 1);
  EXPECT_EQ(x.y, 0b1u);
  EXPECT_EQ(x.amp, cplx(1, 0));

  auto y = string_apply(PauliString::from_ops("Y"), 0b0, 1);
  EXPECT_EQ(y.y, 0b1u);
  EXPECT_EQ(y.amp, cplx(0, 1));

  auto y1 = string_apply(PauliString::from_ops("Y"), 0b1, 1);
  EXPECT_EQ(y1.y, 0b0u);
  EXPECT_EQ(y1.amp, cplx(0, -1));
}

TEST(pauli_string, apply_flips_exactly_x_and_y_sites) {
  Rng rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    PauliString p;
    p.x = rng() & 0xff;
    p.z = rng() & 0xff;
    p.coeff = cplx(rng.normal(), rng.normal());
    const Bitstring x = rng() & 0xff;
    const auto r = string_apply(p, x, 8);
    EXPECT_EQ(r.y ^ x, p.x);
    EXPECT_NEAR(std::abs(r.amp), std::abs(p.coeff), 1e-15);
  }
}

TEST(pauli_string, apply_rejects_length_mismatch) {
  EXPECT_THROW(string_apply(PauliString::from_ops("XX"), 0b0, 1), std::invalid_argument);
  EXPECT_THROW(string_apply(PauliString::from_ops("Z"), 0b10, 1), std::invalid_argument);
}

TEST(pauli_string, multiply_matches_dense) {
  Rng rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    PauliString a, b;
    a.x = rng() & 7; a.z = rng() & 7;
    b.x = rng() & 7; b.z = rng() & 7;
    PauliSum sa(3), sb(3), sab(3);
    sa.add(a); sb.add(b); sab.add(multiply(a, b));
    EXPECT_LT(max_abs_diff(dense_matrix(sa) * dense_matrix(sb), dense_matrix(sab)), 1e-14);
  }
}

TEST(conjugate_gate, zero_angle_is_identity) {
  Rng rng(5);
  const PauliSum h = random_pauli_sum(3, 10, rng);
  const PauliSum r = conjugate_gate(h, RotationGate::ry(1, 0.0));
  EXPECT_LT(max_abs_diff(dense_matrix(r), dense_matrix(h)), 1e-15);
}

TEST(conjugate_gate, ry_quarter_turn_maps_x_to_z) {
  const double h = 0.7;
  const PauliSum r = conjugate_gate(single_term(1, "X", -h), RotationGate::ry(0, kPi / 2));
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r.terms[0].ops_str(1), "Z");
  EXPECT_NEAR(r.terms[0].coeff.real(), -h, 1e-15);
  EXPECT_NEAR(r.terms[0].coeff.imag(), 0.0, 1e-15);
}

TEST(conjugate_gate, single_spin_rules) {
  const double th = 0.37;
  const auto g = RotationGate::ry(0, th);
  const PauliSum z = conjugate_gate(single_term(1, "Z", 1), g);
  PauliSum zexp(1);
  zexp.add("Z", std::cos(th)).add("X", -std::sin(th));
  EXPECT_LT(max_abs_diff(dense_matrix(z), dense_matrix(zexp)), 1e-15);

  const PauliSum y = conjugate_gate(single_term(1, "Y", 1), g);
  EXPECT_LT(max_abs_diff(dense_matrix(y), dense_matrix(single_term(1, "Y", 1))), 1e-15);

  // Against the explicit 2x2 matrices.
  for (auto gate : {RotationGate::ry(0, th), RotationGate::rx(0, th)}) {
    BasisTransform t(1);
    t.gates = {gate};
    for (auto ops : {"X", "Y", "Z"}) {
      const PauliSum obs = single_term(1, ops, 1);
      EXPECT_LT(max_abs_diff(dense_matrix(conjugate_gate(obs, gate)), conj_oracle(obs, t)),
                1e-14);
    }
  }
}

TEST(conjugate_gate, rzz_on_x_identity) {
  const double gam = 0.9;
  const PauliSum r = conjugate_gate(single_term(2, "XI", 1), RotationGate::rzz(0, 1, gam));
  PauliSum expect(2);
  expect.add("XI", std::cos(gam)).add("YZ", -std::sin(gam));
  EXPECT_LT(max_abs_diff(dense_matrix(r), dense_matrix(expect)), 1e-15);

  // Commuting strings pass through.
  const PauliSum zz = conjugate_gate(single_term(2, "ZI", 1), RotationGate::rzz(0, 1, gam));
  ASSERT_EQ(zz.size(), 1u);
  EXPECT_EQ(zz.terms[0].ops_str(2), "ZI");
}

TEST(conjugate_gate, rejects_bad_sites) {
  const PauliSum h = single_term(2, "XI", 1);
  EXPECT_THROW(conjugate_gate(h, RotationGate::ry(2, 0.1)), std::out_of_range);
  EXPECT_THROW(conjugate_gate(h, RotationGate::rzz(1, 1, 0.1)), std::out_of_range);
}

TEST(conjugate_transform, empty_transform) {
  Rng rng(8);
  const PauliSum h = random_pauli_sum(3, 8, rng);
  const PauliSum r = conjugate_transform(h, BasisTransform(3));
  EXPECT_LT(max_abs_diff(dense_matrix(r), dense_matrix(h)), 1e-15);
}

TEST(conjugate_transform, ry_pi_on_zz_chain) {
  const PauliSum h = build_hamiltonian(LatticeSpec::chain(3, 0.0));
  BasisTransform t(3);
  for (int i = 0; i < 3; ++i) t.gates.push_back(RotationGate::ry(i, kPi, i));
  const PauliSum r = conjugate_transform(h, t);
  EXPECT_LT(max_abs_diff(dense_matrix(r), dense_matrix(h)), 1e-12);
  EXPECT_LT(max_abs_diff(dense_matrix(r), conj_oracle(h, t)), 1e-12);
}

TEST(conjugate_transform, gate_order_convention) {
  // Non-commuting gates on one site: order matters and must match
  // U = gates[1] * gates[0].
  BasisTransform t(1);
  t.gates = {RotationGate::ry(0, 0.4, 0), RotationGate::rx(0, 1.1, 1)};
  const PauliSum z = single_term(1, "Z", 1);
  EXPECT_LT(max_abs_diff(dense_matrix(conjugate_transform(z, t)), conj_oracle(z, t)), 1e-14);
}

TEST(conjugate_transform, random_two_gate_n3) {
  Rng rng(21);
  for (int rep = 0; rep < 20; ++rep) {
    const PauliSum h = random_pauli_sum(3, 6, rng);
    const BasisTransform t = random_transform(3, 2, rng);
    EXPECT_LT(max_abs_diff(dense_matrix(conjugate_transform(h, t)), conj_oracle(h, t)), 1e-12);
  }
}

TEST(d_conjugate_transform, ry_derivative_of_z_at_zero) {
  BasisTransform t(1);
  t.gates = {RotationGate::ry(0, 0.0, 0)};
  const PauliSum d = d_conjugate_transform(single_term(1, "Z", 1), t, 0);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.terms[0].ops_str(1), "X");
  EXPECT_NEAR(d.terms[0].coeff.real(), -1.0, 1e-15);

  // Central finite differences.
  const double step = 1e-5;
  BasisTransform tp = t, tm = t;
  tp.gates[0].angle = step;
  tm.gates[0].angle = -step;
  const Eigen::MatrixXcd fd = (dense_matrix(conjugate_transform(single_term(1, "Z", 1), tp)) -
                               dense_matrix(conjugate_transform(single_term(1, "Z", 1), tm))) /
                              (2 * step);
  EXPECT_LT(max_abs_diff(fd, dense_matrix(d)), 1e-8);
}

TEST(d_conjugate_transform, commuting_gate_gives_zero) {
  BasisTransform t(2);
  t.gates = {RotationGate::rzz(0, 1, 0.3, 0)};
  const PauliSum d = d_conjugate_transform(single_term(2, "ZZ", 1), t, 0);
  EXPECT_TRUE(d.empty());
}

TEST(d_conjugate_transform, unknown_index) {
  BasisTransform t(1);
  t.gates = {RotationGate::ry(0, 0.0, 0)};
  EXPECT_THROW(d_conjugate_transform(single_term(1, "Z", 1), t, 1), std::out_of_range);
}

TEST(merge_and_prune, examples) {
  PauliSum a(1);
  a.add("X", 0.5).add("X", 0.5);
  auto ra = merge_and_prune(a);
  ASSERT_EQ(ra.size(), 1u);
  EXPECT_EQ(ra.terms[0].coeff, cplx(1.0));

  PauliSum b(1);
  b.add("Z", 1.0).add("Z", -1.0);
  EXPECT_TRUE(merge_and_prune(b).empty());

  PauliSum c(1);
  c.add("Z", 1.0).add("X", 1e-15);
  auto rc = merge_and_prune(c, 1e-12);
  ASSERT_EQ(rc.size(), 1u);
  EXPECT_EQ(rc.terms[0].ops_str(1), "Z");
}

TEST(merge_and_prune, preserves_dense_matrix) {
  Rng rng(4);
  PauliSum h = random_pauli_sum(3, 40, rng);
  PauliSum doubled = h;
  for (const auto& t : h.terms) doubled.add(t);
  EXPECT_LT(max_abs_diff(dense_matrix(merge_and_prune(doubled)), 2.0 * dense_matrix(h)), 1e-12);
}

TEST(dense_matrix, small_cases) {
  Eigen::MatrixXcd z(2, 2);
  z << 1, 0, 0, -1;
  EXPECT_EQ(dense_matrix(single_term(1, "Z", 1)), z);

  Eigen::MatrixXcd xx = Eigen::MatrixXcd::Zero(4, 4);
  xx(0, 3) = xx(1, 2) = xx(2, 1) = xx(3, 0) = 1;
  EXPECT_EQ(dense_matrix(single_term(2, "XX", 1)), xx);

  // Site 0 is the most significant bit: Z on site 0 is diag(1, 1, -1, -1).
  const Eigen::MatrixXcd z0 = dense_matrix(single_term(2, "ZI", 1));
  EXPECT_EQ(z0.diagonal(), Eigen::Vector4cd(1, 1, -1, -1));
}

TEST(dense_matrix, tfim_two_sites) {
  const double h = 0.3;
  const PauliSum ham = build_hamiltonian(LatticeSpec::chain(2, h));
  Eigen::Matrix2cd z, x, id;
  z << 1, 0, 0, -1;
  x << 0, 1, 1, 0;
  id.setIdentity();
  auto kron = [](const Eigen::Matrix2cd& a, const Eigen::Matrix2cd& b) {
    Eigen::MatrixXcd k(4, 4);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) k.block(2 * i, 2 * j, 2, 2) = a(i, j) * b;
    return k;
  };
  const Eigen::MatrixXcd expect = -kron(z, z) - h * (kron(x, id) + kron(id, x));
  EXPECT_LT(max_abs_diff(dense_matrix(ham), expect), 1e-15);
}

TEST(dense_matrix, rejects_large_n) {
  EXPECT_THROW(dense_matrix(PauliSum(13)), std::invalid_argument);
}

TEST(dense_gate, matches_explicit_matrices) {
  const double a = 0.8, c = std::cos(a / 2), s = std::sin(a / 2);
  const cplx I(0, 1);
  Eigen::Matrix2cd ry, rx;
  ry << c, -s, s, c;
  rx << c, -I * s, -I * s, c;
  EXPECT_LT(max_abs_diff(dense_gate(RotationGate::ry(0, a), 1), ry), 1e-15);
  EXPECT_LT(max_abs_diff(dense_gate(RotationGate::rx(0, a), 1), rx), 1e-15);
  const Eigen::MatrixXcd rzz = dense_gate(RotationGate::rzz(0, 1, a), 2);
  const Eigen::Vector4cd d(std::exp(-I * a / 2.0), std::exp(I * a / 2.0), std::exp(I * a / 2.0),
                           std::exp(-I * a / 2.0));
  EXPECT_LT(max_abs_diff(rzz, Eigen::MatrixXcd(d.asDiagonal())), 1e-15);
}

// Property suites over random observables and transforms.

TEST(pauli_properties, conjugation_oracle_and_spectrum) {
  Rng rng(2026);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 1 + static_cast<int>(rng.below(4));
    const PauliSum h = random_pauli_sum(n, 1 + static_cast<int>(rng.below(8)), rng);
    const BasisTransform t = random_transform(n, 1 + static_cast<int>(rng.below(6)), rng);
    const PauliSum r = conjugate_transform(h, t);
    const Eigen::MatrixXcd dr = dense_matrix(r);
    ASSERT_LT(max_abs_diff(dr, conj_oracle(h, t)), 1e-12) << "case " << rep;
    EXPECT_LT(max_abs_diff(dr, dr.adjoint()), 1e-12);
    for (const auto& term : r.terms) EXPECT_NEAR(term.coeff.imag(), 0.0, 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> e1(dense_matrix(h)), e2(dr);
    EXPECT_LT((e1.eigenvalues() - e2.eigenvalues()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(pauli_properties, involution) {
  Rng rng(77);
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 1 + static_cast<int>(rng.below(4));
    const PauliSum h = random_pauli_sum(n, 6, rng);
    const BasisTransform t = random_transform(n, 5, rng);
    // (U^-1)^dag (U^dag H U) U^-1 = H
    const PauliSum back = conjugate_transform(conjugate_transform(h, t), t.inverse());
    EXPECT_LT(max_abs_diff(dense_matrix(back), dense_matrix(h)), 1e-12);
  }
}

TEST(pauli_properties, derivative_oracle) {
  Rng rng(99);
  const double step = 1e-5;
  for (int rep = 0; rep < 60; ++rep) {
    const int n = 1 + static_cast<int>(rng.below(3)) + (rep % 2 ? 0 : 1);
    const PauliSum h = random_pauli_sum(n, 6, rng);
    const BasisTransform t = random_transform(n, 4, rng);
    const int i = static_cast<int>(rng.below(4));
    const Eigen::MatrixXcd d = dense_matrix(d_conjugate_transform(h, t, i));
    BasisTransform tp = t, tm = t;
    tp.gates[static_cast<std::size_t>(t.gate_of_param(i))].angle += step;
    tm.gates[static_cast<std::size_t>(t.gate_of_param(i))].angle -= step;
    const Eigen::MatrixXcd fd =
        (dense_matrix(conjugate_transform(h, tp)) - dense_matrix(conjugate_transform(h, tm))) /
        (2 * step);
    const double scale = std::max(1.0, d.cwiseAbs().maxCoeff());
    EXPECT_LT(max_abs_diff(d, fd) / scale, 1e-6);
    EXPECT_LT(max_abs_diff(d, d.adjoint()), 1e-12);
  }
}
