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

// Statevector backend for circuit-defined basis changes. Matrix elements of
// U^dag H U are obtained only from expectation values, as a device would
// provide them: diagonal entries directly, off-diagonal entries from two
// superposition states per pair.

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "sbnd/models.hpp"
#include "sbnd/pauli.hpp"
#include "sbnd/rng.hpp"
#include "sbnd/subspace.hpp"

namespace sbnd {

inline constexpr int kMaxCircuitQubits = 12;

/// A circuit is an ordered gate list; gates[0] acts first.
using Circuit = BasisTransform;

inline void validate_circuit(const Circuit& c) {
  if (c.n_sites < 1 || c.n_sites > kMaxCircuitQubits)
    throw std::invalid_argument("circuit: qubit count must be in [1, 12]");
  c.validate();
}

/// 2^n amplitudes in dense order (site 0 is the most significant bit).
struct StateVector {
  int n = 0;
  Eigen::VectorXcd amp;

  static StateVector basis(int n, Bitstring x) {
    StateVector s{n, Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(std::size_t{1} << n))};
    s.amp[static_cast<Eigen::Index>(dense_index(x, n))] = 1.0;
    return s;
  }
};

/// Exact or shot-sampled expectation values.
struct ExpectationOptions {
  /// 0 means exact; otherwise each Pauli term is estimated from this many
  /// single-term measurements (binomial outcomes).
  long shots = 0;
  Rng* rng = nullptr;
};

namespace detail {

inline Bitstring reverse_sites(Bitstring m, int n) {
  Bitstring r = 0;
  for (int i = 0; i < n; ++i)
    if ((m >> i) & 1u) r |= Bitstring{1} << (n - 1 - i);
  return r;
}

}  // namespace detail

inline void apply_gate(StateVector& s, const RotationGate& g) {
  g.validate(s.n);
  const std::size_t dim = static_cast<std::size_t>(s.amp.size());
  const double c = std::cos(g.angle / 2), sn = std::sin(g.angle / 2);
  const std::size_t m0 = std::size_t{1} << (s.n - 1 - g.site0);
  switch (g.kind) {
    case GateKind::RY:
    case GateKind::RX: {
      const cplx off = g.kind == GateKind::RY ? cplx(-sn, 0) : cplx(0, -sn);
      const cplx off1 = g.kind == GateKind::RY ? cplx(sn, 0) : cplx(0, -sn);
      for (std::size_t i = 0; i < dim; ++i) {
        if (i & m0) continue;
        const cplx a0 = s.amp[static_cast<Eigen::Index>(i)];
        const cplx a1 = s.amp[static_cast<Eigen::Index>(i | m0)];
        s.amp[static_cast<Eigen::Index>(i)] = c * a0 + off * a1;
        s.amp[static_cast<Eigen::Index>(i | m0)] = off1 * a0 + c * a1;
      }
      break;
    }
    case GateKind::RZZ: {
      const std::size_t m1 = std::size_t{1} << (s.n - 1 - g.site1);
      const cplx same = std::polar(1.0, -g.angle / 2), diff = std::polar(1.0, g.angle / 2);
      for (std::size_t i = 0; i < dim; ++i)
        s.amp[static_cast<Eigen::Index>(i)] *= (((i & m0) != 0) == ((i & m1) != 0)) ? same : diff;
      break;
    }
  }
}

/// U|s>, gates applied in list order.
inline StateVector apply(const Circuit& c, StateVector s) {
  if (s.n != c.n_sites) throw std::invalid_argument("apply: qubit count mismatch");
  if (s.amp.size() != static_cast<Eigen::Index>(std::size_t{1} << s.n))
    throw std::invalid_argument("apply: state dimension mismatch");
  for (const auto& g : c.gates) apply_gate(s, g);
  return s;
}

/// <s|op|s> computed exactly.
inline cplx pauli_expectation(const StateVector& s, const PauliSum& op) {
  if (op.n_sites != s.n) throw std::invalid_argument("expectation: size mismatch");
  cplx total = 0.0;
  const std::size_t dim = static_cast<std::size_t>(s.amp.size());
  for (const auto& t : op.terms) {
    PauliString d = t;
    d.x = detail::reverse_sites(t.x, s.n);
    d.z = detail::reverse_sites(t.z, s.n);
    cplx acc = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const Applied a = apply_unchecked(d, i);
      acc += std::conj(s.amp[static_cast<Eigen::Index>(a.y)]) * a.amp *
             s.amp[static_cast<Eigen::Index>(i)];
    }
    total += acc;
  }
  return total;
}

/// Energy of a normalized state, exact or shot-sampled per term.
inline double energy_expectation(const StateVector& s, const PauliSum& h,
                                 const ExpectationOptions& opt = {}) {
  if (opt.shots <= 0) {
    const cplx e = pauli_expectation(s, h);
    return e.real();
  }
  if (!opt.rng) throw std::invalid_argument("shot mode needs an rng");
  double total = 0.0;
  for (const auto& t : h.terms) {
    PauliSum one(h.n_sites);
    PauliString unit = t;
    unit.coeff = 1.0;
    one.terms.push_back(unit);
    // Hermitian term: coeff * P with P having eigenvalues +-1.
    const double mean = std::clamp(pauli_expectation(s, one).real(), -1.0, 1.0);
    std::binomial_distribution<long> dist(opt.shots, (1.0 + mean) / 2.0);
    const double est = 2.0 * static_cast<double>(dist(*opt.rng)) / static_cast<double>(opt.shots) - 1.0;
    total += t.coeff.real() * est;
  }
  return total;
}

/// <x|U^dag H U|x>.
inline double expval(const Circuit& c, const PauliSum& h, Bitstring x,
                     const ExpectationOptions& opt = {}) {
  if (h.n_sites != c.n_sites) throw std::invalid_argument("expval: size mismatch");
  return energy_expectation(apply(c, StateVector::basis(c.n_sites, x)), h, opt);
}

namespace detail {

/// Off-diagonal element from cached rotated basis states and their diagonal
/// energies: Re from (|l> + |m>)/sqrt2, Im from (|l> + i|m>)/sqrt2.
inline cplx offdiag_from_states(const StateVector& ul, const StateVector& um, double hl,
                                double hm, const PauliSum& h, const ExpectationOptions& opt) {
  const double r = 1.0 / std::sqrt(2.0);
  StateVector plus{ul.n, (ul.amp + um.amp) * r};
  StateVector iplus{ul.n, (ul.amp + cplx(0, 1) * um.amp) * r};
  const double h_plus = energy_expectation(plus, h, opt);
  const double h_iplus = energy_expectation(iplus, h, opt);
  return {h_plus - hl / 2 - hm / 2, -h_iplus + hl / 2 + hm / 2};
}

}  // namespace detail

/// <x_l|U^dag H U|x_m> for x_l != x_m.
inline cplx offdiag_element(const Circuit& c, const PauliSum& h, Bitstring xl, Bitstring xm,
                            const ExpectationOptions& opt = {}) {
  if (xl == xm) throw std::invalid_argument("offdiag_element: identical configurations");
  if (h.n_sites != c.n_sites) throw std::invalid_argument("offdiag_element: size mismatch");
  const StateVector ul = apply(c, StateVector::basis(c.n_sites, xl));
  const StateVector um = apply(c, StateVector::basis(c.n_sites, xm));
  return detail::offdiag_from_states(ul, um, energy_expectation(ul, h, opt),
                                     energy_expectation(um, h, opt), h, opt);
}

/// S x S subspace matrix of U^dag H U from expectation values only.
inline Eigen::MatrixXcd subspace_matrix_circuit(const Circuit& c, const PauliSum& h,
                                                const ConfigSet& cs,
                                                const ExpectationOptions& opt = {}) {
  validate_circuit(c);
  if (h.n_sites != c.n_sites) throw std::invalid_argument("subspace_matrix_circuit: size mismatch");
  if (cs.empty()) throw std::invalid_argument("subspace_matrix_circuit: empty set");
  const Eigen::Index s = static_cast<Eigen::Index>(cs.size());
  std::vector<StateVector> u;
  u.reserve(cs.size());
  for (Bitstring x : cs) {
    if ((x & ~site_mask(c.n_sites)) != 0)
      throw std::invalid_argument("subspace_matrix_circuit: configuration outside register");
    u.push_back(apply(c, StateVector::basis(c.n_sites, x)));
  }
  Eigen::VectorXd diag(s);
  for (Eigen::Index l = 0; l < s; ++l)
    diag[l] = energy_expectation(u[static_cast<std::size_t>(l)], h, opt);
  Eigen::MatrixXcd m(s, s);
  for (Eigen::Index l = 0; l < s; ++l) {
    m(l, l) = diag[l];
    for (Eigen::Index k = l + 1; k < s; ++k) {
      const cplx v = detail::offdiag_from_states(u[static_cast<std::size_t>(l)],
                                                 u[static_cast<std::size_t>(k)], diag[l], diag[k],
                                                 h, opt);
      m(l, k) = v;
      m(k, l) = std::conj(v);
    }
  }
  return m;
}

/// d/d(angle i) of <phi|U^dag H U|phi> by the two-point shift rule, where phi
/// = sum_l w_l |x_l> over the set (normalized by the caller).
inline double param_shift_grad_state(const Circuit& c, const PauliSum& h, const StateVector& phi,
                                     int i, const ExpectationOptions& opt = {}) {
  bool found = false;
  double g = 0.0;
  for (std::size_t j = 0; j < c.gates.size(); ++j) {
    if (c.gates[j].param != i) continue;
    found = true;
    Circuit cp = c, cm = c;
    cp.gates[j].angle += std::numbers::pi / 2;
    cm.gates[j].angle -= std::numbers::pi / 2;
    g += 0.5 * (energy_expectation(apply(cp, phi), h, opt) -
                energy_expectation(apply(cm, phi), h, opt));
  }
  if (!found) throw std::out_of_range("param_shift_grad: unknown angle index");
  return g;
}

/// d<x|U^dag H U|x>/d(angle i).
inline double param_shift_grad(const Circuit& c, const PauliSum& h, Bitstring x, int i,
                               const ExpectationOptions& opt = {}) {
  return param_shift_grad_state(c, h, StateVector::basis(c.n_sites, x), i, opt);
}

/// Number of ansatz angles for n qubits and the given pair list.
inline int ansatz_sec4_size(int n, std::size_t n_pairs) {
  return n + 2 * (static_cast<int>(n_pairs) + n);
}

/**
 * RY on every qubit, then two blocks of (RZZ on every listed pair, RX on
 * every qubit). Angle k of `params` drives the k-th gate in that order.
 */
inline Circuit ansatz_sec4(int n, std::span<const double> params,
                           const std::vector<std::pair<int, int>>& pairs) {
  if (static_cast<int>(params.size()) != ansatz_sec4_size(n, pairs.size()))
    throw std::invalid_argument("ansatz_sec4: expected " +
                                std::to_string(ansatz_sec4_size(n, pairs.size())) +
                                " parameters, got " + std::to_string(params.size()));
  Circuit c(n);
  int k = 0;
  auto next = [&] { return params[static_cast<std::size_t>(k)]; };
  for (int q = 0; q < n; ++q, ++k) c.gates.push_back(RotationGate::ry(q, next(), k));
  for (int block = 0; block < 2; ++block) {
    for (auto [a, b] : pairs) {
      c.gates.push_back(RotationGate::rzz(a, b, next(), k));
      ++k;
    }
    for (int q = 0; q < n; ++q, ++k) c.gates.push_back(RotationGate::rx(q, next(), k));
  }
  validate_circuit(c);
  return c;
}

/// Ansatz on the model's bond list.
inline Circuit ansatz_sec4(const LatticeSpec& spec, std::span<const double> params) {
  return ansatz_sec4(spec.n_sites(), params, bond_pairs(spec));
}

}  // namespace sbnd
