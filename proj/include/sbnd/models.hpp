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

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sbnd/lanczos.hpp"
#include "sbnd/pauli.hpp"
#include "sbnd/rng.hpp"

namespace sbnd {

enum class LatticeKind { chain_periodic, square_open, square_periodic };
enum class CouplingKind { uniform, gaussian };

inline std::string_view lattice_kind_name(LatticeKind k) {
  switch (k) {
    case LatticeKind::chain_periodic: return "chain_periodic";
    case LatticeKind::square_open: return "square_open";
    default: return "square_periodic";
  }
}

inline LatticeKind parse_lattice_kind(std::string_view s) {
  if (s == "chain_periodic") return LatticeKind::chain_periodic;
  if (s == "square_open") return LatticeKind::square_open;
  if (s == "square_periodic") return LatticeKind::square_periodic;
  throw std::invalid_argument("unknown lattice kind '" + std::string(s) + "'");
}

struct Bond {
  int i;
  int j;
  double coupling;
};

/**
 * Ising testbed: H = -sum_<ij> J_ij Z_i Z_j - h sum_i X_i.
 *
 * Square lattices index site (x, y) as y * lx + x and list, per site in index
 * order, the bond to the right neighbour and then the one below. Gaussian
 * couplings (Edwards-Anderson) are drawn i.i.d. N(0, 1) in bond order from
 * Rng(seed).split("eam-couplings").
 */
struct LatticeSpec {
  LatticeKind kind = LatticeKind::chain_periodic;
  int lx = 2;
  int ly = 1;
  double h = 0.0;
  CouplingKind couplings = CouplingKind::uniform;
  std::uint64_t seed = 0;

  static LatticeSpec chain(int n, double h) {
    return {LatticeKind::chain_periodic, n, 1, h, CouplingKind::uniform, 0};
  }
  static LatticeSpec square(int lx, int ly, double h, bool periodic) {
    return {periodic ? LatticeKind::square_periodic : LatticeKind::square_open,
            lx, ly, h, CouplingKind::uniform, 0};
  }
  static LatticeSpec eam(int lx, int ly, double h, std::uint64_t seed) {
    return {LatticeKind::square_periodic, lx, ly, h, CouplingKind::gaussian, seed};
  }

  int n_sites() const {
    return kind == LatticeKind::chain_periodic ? lx : lx * ly;
  }

  void validate() const {
    if (h < 0) throw std::invalid_argument("LatticeSpec: h must be >= 0");
    switch (kind) {
      case LatticeKind::chain_periodic:
        if (lx < 2) throw std::invalid_argument("LatticeSpec: periodic chain needs N >= 2");
        break;
      case LatticeKind::square_open:
        if (lx < 1 || ly < 1) throw std::invalid_argument("LatticeSpec: bad dims");
        break;
      case LatticeKind::square_periodic:
        if (lx < 3 || ly < 3)
          throw std::invalid_argument(
              "LatticeSpec: periodic square lattice needs Lx, Ly >= 3");
        break;
    }
    if (n_sites() > kMaxSites) throw std::invalid_argument("LatticeSpec: too many sites");
  }

  std::vector<Bond> bonds() const {
    validate();
    std::vector<std::pair<int, int>> pairs;
    if (kind == LatticeKind::chain_periodic) {
      const int n = lx;
      // N = 2: (0,1) and (1,0) are the same bond; keep one.
      const int nb = n == 2 ? 1 : n;
      for (int i = 0; i < nb; ++i) pairs.emplace_back(i, (i + 1) % n);
    } else {
      const bool periodic = kind == LatticeKind::square_periodic;
      for (int y = 0; y < ly; ++y)
        for (int x = 0; x < lx; ++x) {
          const int s = y * lx + x;
          if (x + 1 < lx || periodic) pairs.emplace_back(s, y * lx + (x + 1) % lx);
          if (y + 1 < ly || periodic) pairs.emplace_back(s, ((y + 1) % ly) * lx + x);
        }
    }
    std::vector<Bond> out;
    out.reserve(pairs.size());
    Rng rng = Rng(seed).split("eam-couplings");
    for (auto [i, j] : pairs) {
      const double c = couplings == CouplingKind::gaussian ? rng.normal() : 1.0;
      out.push_back({i, j, c});
    }
    return out;
  }
};

inline PauliSum build_hamiltonian(const LatticeSpec& spec) {
  spec.validate();
  const int n = spec.n_sites();
  PauliSum h(n);
  for (const Bond& b : spec.bonds()) {
    PauliString p;
    p.z = (Bitstring{1} << b.i) | (Bitstring{1} << b.j);
    p.coeff = -b.coupling;
    h.add(p);
  }
  if (spec.h != 0.0)
    for (int i = 0; i < n; ++i) h.add(PauliString::single(Pauli::X, i, -spec.h));
  return h;
}

/// Nearest-neighbour pairs of the lattice, in bond order.
inline std::vector<std::pair<int, int>> bond_pairs(const LatticeSpec& spec) {
  std::vector<std::pair<int, int>> out;
  for (const Bond& b : spec.bonds()) out.emplace_back(b.i, b.j);
  return out;
}

// ---------------------------------------------------------------------------
// Exact references
// ---------------------------------------------------------------------------

struct ExactSolution {
  double energy = 0.0;
  /// Amplitudes in dense_index order (site 0 most significant). Empty when
  /// the energy came from the free-fermion formula.
  Eigen::VectorXcd psi0;
  std::string source;

  bool has_state() const { return psi0.size() > 0; }
};

inline constexpr int kMaxExactSites = 16;
inline constexpr int kMaxDenseExactSites = 8;

/// True if every matrix element of the observable is real.
inline bool is_real_operator(const PauliSum& h) {
  return std::all_of(h.terms.begin(), h.terms.end(), [](const PauliString& p) {
    return std::abs((p.coeff * ipow(p.y_count())).imag()) == 0.0;
  });
}

namespace detail {

// out = H in, vectors indexed by the Bitstring value.
template <class Vec>
void apply_pauli_sum(const PauliSum& h, const Vec& in, Vec& out) {
  using Scalar = typename Vec::Scalar;
  out.setZero();
  const auto dim = static_cast<Bitstring>(in.size());
  for (const auto& p : h.terms) {
    const cplx base = p.coeff * ipow(p.y_count());
    for (Bitstring x = 0; x < dim; ++x) {
      const double sign = (std::popcount(x & p.z) & 1) ? -1.0 : 1.0;
      if constexpr (std::is_same_v<Scalar, double>)
        out[static_cast<Eigen::Index>(x ^ p.x)] +=
            base.real() * sign * in[static_cast<Eigen::Index>(x)];
      else
        out[static_cast<Eigen::Index>(x ^ p.x)] +=
            base * sign * in[static_cast<Eigen::Index>(x)];
    }
  }
}

template <class Vec>
Eigen::VectorXcd to_dense_order(const Vec& v, int n) {
  Eigen::VectorXcd out(v.size());
  for (Eigen::Index x = 0; x < v.size(); ++x)
    out[static_cast<Eigen::Index>(dense_index(static_cast<Bitstring>(x), n))] = v[x];
  return out;
}

}  // namespace detail

/**
 * Ground state by exact diagonalization.
 *
 * Diagonal operators return the indicator of the lowest-energy configuration
 * that comes first in dense_index order. Up to kMaxDenseExactSites a dense
 * eigensolver is used; beyond that, matrix-free Lanczos (real arithmetic when
 * the operator is real).
 */
inline ExactSolution exact_diag(const PauliSum& h, const LanczosOptions& opt = {}) {
  const int n = h.n_sites;
  if (n > kMaxExactSites) throw std::invalid_argument("exact_diag: N too large");
  const std::size_t dim = std::size_t{1} << n;
  ExactSolution sol;
  if (h.is_diagonal()) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_idx = 0;
    for (std::size_t idx = 0; idx < dim; ++idx) {
      const Bitstring x = from_dense_index(idx, n);
      double e = 0.0;
      for (const auto& p : h.terms) e += apply_unchecked(p, x).amp.real();
      if (e < best - 1e-12) {
        best = e;
        best_idx = idx;
      }
    }
    sol.energy = best;
    sol.psi0 = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(dim));
    sol.psi0[static_cast<Eigen::Index>(best_idx)] = 1.0;
    sol.source = "exact_diag";
    return sol;
  }
  if (n <= kMaxDenseExactSites) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(dense_matrix(h));
    sol.energy = es.eigenvalues()[0];
    sol.psi0 = es.eigenvectors().col(0);
  } else if (is_real_operator(h)) {
    auto r = lanczos_lowest<double>(
        [&](const Eigen::VectorXd& in, Eigen::VectorXd& out) {
          detail::apply_pauli_sum(h, in, out);
        },
        static_cast<Eigen::Index>(dim), opt);
    sol.energy = r.eigenvalue;
    sol.psi0 = detail::to_dense_order(r.vector, n);
  } else {
    auto r = lanczos_lowest<cplx>(
        [&](const Eigen::VectorXcd& in, Eigen::VectorXcd& out) {
          detail::apply_pauli_sum(h, in, out);
        },
        static_cast<Eigen::Index>(dim), opt);
    sol.energy = r.eigenvalue;
    sol.psi0 = detail::to_dense_order(r.vector, n);
  }
  sol.psi0.normalize();
  sol.source = "exact_diag";
  return sol;
}

/**
 * Ground energy of the periodic chain -sum Z_i Z_{i+1} - h sum X_i (N >= 3)
 * from the free-fermion modes of the even-parity sector, k = (2m + 1) pi / N:
 *   E0 = -sum_k sqrt(1 + h^2 - 2 h cos k).
 */
inline double jw_energy_1d(int n, double h) {
  if (n < 1) throw std::invalid_argument("jw_energy_1d: N < 1");
  double e = 0.0;
  for (int m = 0; m < n; ++m) {
    const double k = (2.0 * m + 1.0) * std::numbers::pi / n;
    e -= std::sqrt(std::max(0.0, 1.0 + h * h - 2.0 * h * std::cos(k)));
  }
  return e;
}

/// Reference energy for a lattice: free fermions for chains, exact
/// diagonalization otherwise. Records which one in `source`.
inline ExactSolution reference_energy(const LatticeSpec& spec, bool need_state) {
  if (spec.kind == LatticeKind::chain_periodic && spec.lx >= 3 &&
      spec.couplings == CouplingKind::uniform && !need_state) {
    ExactSolution s;
    s.energy = jw_energy_1d(spec.lx, spec.h);
    s.source = "jw_energy_1d";
    return s;
  }
  return exact_diag(build_hamiltonian(spec));
}

/// i.i.d. draws from |psi0(x)|^2.
inline std::vector<Bitstring> ground_state_sample(const ExactSolution& sol,
                                                  std::size_t count, Rng& rng) {
  if (!sol.has_state())
    throw std::invalid_argument("ground_state_sample: no state vector");
  const auto dim = static_cast<std::size_t>(sol.psi0.size());
  const int n = std::countr_zero(dim);
  std::vector<double> cdf(dim);
  double acc = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    acc += std::norm(sol.psi0[static_cast<Eigen::Index>(i)]);
    cdf[i] = acc;
  }
  std::vector<Bitstring> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const double u = rng.uniform() * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t idx = static_cast<std::size_t>(it - cdf.begin());
    if (idx >= dim) idx = dim - 1;
    out.push_back(from_dense_index(idx, n));
  }
  return out;
}

}  // namespace sbnd
