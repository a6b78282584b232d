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
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sbnd {

using cplx = std::complex<double>;

/// Computational-basis configuration. Bit i holds the value of site i
/// (0 means |0>, the +1 eigenstate of Z).
using Bitstring = std::uint64_t;

inline constexpr int kMaxSites = 64;
inline constexpr double kDefaultPruneTol = 1e-12;

inline Bitstring site_mask(int n) {
  return n >= 64 ? ~Bitstring{0} : (Bitstring{1} << n) - 1;
}

/// Dense-matrix row/column index of a configuration: site 0 is the most
/// significant bit.
inline std::size_t dense_index(Bitstring x, int n) {
  std::size_t idx = 0;
  for (int i = 0; i < n; ++i) idx = (idx << 1) | ((x >> i) & 1U);
  return idx;
}

inline Bitstring from_dense_index(std::size_t idx, int n) {
  Bitstring x = 0;
  for (int i = n - 1; i >= 0; --i) {
    x |= static_cast<Bitstring>(idx & 1U) << i;
    idx >>= 1;
  }
  return x;
}

/// "0110" with site 0 first.
inline std::string bitstring_str(Bitstring x, int n) {
  std::string s(static_cast<std::size_t>(n), '0');
  for (int i = 0; i < n; ++i)
    if ((x >> i) & 1U) s[static_cast<std::size_t>(i)] = '1';
  return s;
}

enum class Pauli : std::uint8_t { I = 0, X = 1, Y = 2, Z = 3 };

/**
 * coeff * (sigma_0 (x) sigma_1 (x) ...), each sigma Hermitian.
 *
 * Symplectic encoding: site i carries X if only x bit i is set, Z if only z
 * bit i is set and Y if both are. With Y = i X Z, a string with masks (x, z)
 * equals i^{|x & z|} X^x Z^z.
 */
struct PauliString {
  cplx coeff{1.0, 0.0};
  Bitstring x = 0;
  Bitstring z = 0;

  static PauliString from_ops(std::string_view ops, cplx c = 1.0) {
    PauliString p;
    p.coeff = c;
    if (ops.size() > kMaxSites)
      throw std::invalid_argument("PauliString: more than 64 sites");
    for (std::size_t i = 0; i < ops.size(); ++i) {
      const Bitstring b = Bitstring{1} << i;
      switch (ops[i]) {
        case 'I': case '_': break;
        case 'X': p.x |= b; break;
        case 'Y': p.x |= b; p.z |= b; break;
        case 'Z': p.z |= b; break;
        default:
          throw std::invalid_argument("PauliString: bad op '" +
                                      std::string(1, ops[i]) + "'");
      }
    }
    return p;
  }

  static PauliString single(Pauli op, int site, cplx c = 1.0) {
    PauliString p;
    p.coeff = c;
    const Bitstring b = Bitstring{1} << site;
    if (op == Pauli::X || op == Pauli::Y) p.x |= b;
    if (op == Pauli::Z || op == Pauli::Y) p.z |= b;
    return p;
  }

  Pauli op(int site) const {
    const bool bx = (x >> site) & 1U, bz = (z >> site) & 1U;
    if (bx && bz) return Pauli::Y;
    if (bx) return Pauli::X;
    if (bz) return Pauli::Z;
    return Pauli::I;
  }

  std::string ops_str(int n) const {
    std::string s(static_cast<std::size_t>(n), 'I');
    for (int i = 0; i < n; ++i) s[static_cast<std::size_t>(i)] = "IXYZ"[static_cast<int>(op(i))];
    return s;
  }

  int y_count() const { return std::popcount(x & z); }
  Bitstring support() const { return x | z; }
  bool same_ops(const PauliString& o) const { return x == o.x && z == o.z; }
};

/// True when the two strings anticommute.
inline bool anticommutes(const PauliString& a, const PauliString& b) {
  return (std::popcount((a.x & b.z) ^ (a.z & b.x)) & 1) != 0;
}

inline cplx ipow(int k) {
  switch (((k % 4) + 4) % 4) {
    case 0: return {1.0, 0.0};
    case 1: return {0.0, 1.0};
    case 2: return {-1.0, 0.0};
    default: return {0.0, -1.0};
  }
}

/// Operator product a * b, phase included.
inline PauliString multiply(const PauliString& a, const PauliString& b) {
  PauliString r;
  r.x = a.x ^ b.x;
  r.z = a.z ^ b.z;
  // i^{|xa&za|} X^xa Z^za i^{|xb&zb|} X^xb Z^zb
  //   = i^{|xa&za| + |xb&zb| + 2|za&xb| - |xr&zr|} sigma(xr, zr)
  const int k = std::popcount(a.x & a.z) + std::popcount(b.x & b.z) +
                2 * std::popcount(a.z & b.x) - std::popcount(r.x & r.z);
  r.coeff = a.coeff * b.coeff * ipow(k);
  return r;
}

struct Applied {
  Bitstring y;
  cplx amp;
};

/// P|x> = amp |y>.
inline Applied apply_unchecked(const PauliString& p, Bitstring x) {
  // X^x Z^z |x> = (-1)^{|x & z|} |x ^ xmask>, times i^{#Y}.
  const int k = p.y_count() + 2 * std::popcount(x & p.z);
  return {x ^ p.x, p.coeff * ipow(k)};
}

/// Action of a Pauli string on a basis state of an n-site system.
/// Throws std::invalid_argument if x or p extend past n sites.
inline Applied string_apply(const PauliString& p, Bitstring x, int n) {
  const Bitstring outside = ~site_mask(n);
  if ((x & outside) != 0 || (p.support() & outside) != 0)
    throw std::invalid_argument("string_apply: length mismatch");
  return apply_unchecked(p, x);
}

/// Hermitian observable as a weighted sum of Pauli strings.
struct PauliSum {
  int n_sites = 0;
  std::vector<PauliString> terms;

  PauliSum() = default;
  explicit PauliSum(int n) : n_sites(n) {
    if (n < 1 || n > kMaxSites)
      throw std::invalid_argument("PauliSum: site count out of range");
  }

  PauliSum& add(const PauliString& p) {
    if ((p.support() & ~site_mask(n_sites)) != 0)
      throw std::invalid_argument("PauliSum: term acts outside the system");
    terms.push_back(p);
    return *this;
  }
  PauliSum& add(std::string_view ops, cplx c) {
    if (static_cast<int>(ops.size()) != n_sites)
      throw std::invalid_argument("PauliSum: op string length != n_sites");
    return add(PauliString::from_ops(ops, c));
  }

  std::size_t size() const { return terms.size(); }
  bool empty() const { return terms.empty(); }

  /// All terms diagonal in the computational basis.
  bool is_diagonal() const {
    return std::all_of(terms.begin(), terms.end(),
                       [](const PauliString& p) { return p.x == 0; });
  }

  PauliSum scaled(cplx s) const {
    PauliSum r = *this;
    for (auto& t : r.terms) t.coeff *= s;
    return r;
  }
};

/// Sums coefficients of identical strings and drops |coeff| < tol. The result
/// is sorted by (x, z) so equal inputs give identical term order.
inline PauliSum merge_and_prune(const PauliSum& obs,
                                double tol = kDefaultPruneTol) {
  if (tol < 0) throw std::invalid_argument("merge_and_prune: tol < 0");
  std::vector<PauliString> t = obs.terms;
  std::sort(t.begin(), t.end(), [](const PauliString& a, const PauliString& b) {
    return a.x != b.x ? a.x < b.x : a.z < b.z;
  });
  PauliSum out;
  out.n_sites = obs.n_sites;
  out.terms.reserve(t.size());
  for (std::size_t i = 0; i < t.size();) {
    PauliString acc = t[i];
    std::size_t j = i + 1;
    for (; j < t.size() && t[j].same_ops(acc); ++j) acc.coeff += t[j].coeff;
    if (std::abs(acc.coeff) >= tol && std::abs(acc.coeff) > 0.0)
      out.terms.push_back(acc);
    i = j;
  }
  return out;
}

inline PauliSum operator+(const PauliSum& a, const PauliSum& b) {
  if (a.n_sites != b.n_sites)
    throw std::invalid_argument("PauliSum +: site count mismatch");
  PauliSum r = a;
  r.terms.insert(r.terms.end(), b.terms.begin(), b.terms.end());
  return merge_and_prune(r, 0.0);
}

// ---------------------------------------------------------------------------
// Rotation gates and basis transforms
// ---------------------------------------------------------------------------

enum class GateKind : std::uint8_t { RY, RX, RZZ };

inline std::string_view gate_kind_name(GateKind k) {
  switch (k) {
    case GateKind::RY: return "RY";
    case GateKind::RX: return "RX";
    default: return "RZZ";
  }
}

inline GateKind parse_gate_kind(std::string_view s) {
  if (s == "RY") return GateKind::RY;
  if (s == "RX") return GateKind::RX;
  if (s == "RZZ") return GateKind::RZZ;
  throw std::invalid_argument("unknown gate kind '" + std::string(s) + "'");
}

/**
 * exp(-i angle G / 2) with G = Y_a (RY), X_a (RX) or Z_a Z_b (RZZ). These are
 * the matrices
 *   RY = [[c, -s], [s, c]],  RX = [[c, -i s], [-i s, c]],
 *   RZZ = diag(e^{-i a/2}, e^{i a/2}, e^{i a/2}, e^{-i a/2}),
 * with c = cos(angle/2), s = sin(angle/2).
 */
struct RotationGate {
  GateKind kind = GateKind::RY;
  int site0 = 0;
  int site1 = -1;  // RZZ only
  double angle = 0.0;
  int param = -1;  // trainable angle index, -1 if fixed

  static RotationGate ry(int s, double a, int param = -1) {
    return {GateKind::RY, s, -1, a, param};
  }
  static RotationGate rx(int s, double a, int param = -1) {
    return {GateKind::RX, s, -1, a, param};
  }
  static RotationGate rzz(int s0, int s1, double a, int param = -1) {
    return {GateKind::RZZ, s0, s1, a, param};
  }

  PauliString generator() const {
    switch (kind) {
      case GateKind::RY: return PauliString::single(Pauli::Y, site0);
      case GateKind::RX: return PauliString::single(Pauli::X, site0);
      default: {
        PauliString g;
        g.z = (Bitstring{1} << site0) | (Bitstring{1} << site1);
        return g;
      }
    }
  }

  void validate(int n) const {
    const bool two = kind == GateKind::RZZ;
    if (site0 < 0 || site0 >= n) throw std::out_of_range("gate site out of range");
    if (two && (site1 < 0 || site1 >= n || site1 == site0))
      throw std::out_of_range("RZZ sites must be distinct and in range");
  }
};

/**
 * U = gate_L ... gate_2 gate_1: gates[0] acts first on states.
 * Conjugation U^dag H U therefore processes gates from the back.
 */
struct BasisTransform {
  int n_sites = 0;
  std::vector<RotationGate> gates;

  BasisTransform() = default;
  explicit BasisTransform(int n) : n_sites(n) {}

  int n_params() const {
    int m = 0;
    for (const auto& g : gates) m = std::max(m, g.param + 1);
    return m;
  }

  std::vector<double> params() const {
    std::vector<double> p(static_cast<std::size_t>(n_params()), 0.0);
    for (const auto& g : gates)
      if (g.param >= 0) p[static_cast<std::size_t>(g.param)] = g.angle;
    return p;
  }

  void set_params(std::span<const double> p) {
    if (static_cast<int>(p.size()) != n_params())
      throw std::invalid_argument("BasisTransform: parameter count mismatch");
    for (auto& g : gates)
      if (g.param >= 0) g.angle = p[static_cast<std::size_t>(g.param)];
  }

  BasisTransform with_params(std::span<const double> p) const {
    BasisTransform t = *this;
    t.set_params(p);
    return t;
  }

  /// Gate index carrying trainable angle i, or -1.
  int gate_of_param(int i) const {
    for (std::size_t j = 0; j < gates.size(); ++j)
      if (gates[j].param == i) return static_cast<int>(j);
    return -1;
  }

  /// U^{-1}: reversed order, negated angles. Parameter indices are kept.
  BasisTransform inverse() const {
    BasisTransform t(n_sites);
    for (auto it = gates.rbegin(); it != gates.rend(); ++it) {
      RotationGate g = *it;
      g.angle = -g.angle;
      t.gates.push_back(g);
    }
    return t;
  }

  void validate() const {
    std::vector<int> seen;
    for (const auto& g : gates) {
      g.validate(n_sites);
      if (g.param >= 0) {
        if (std::find(seen.begin(), seen.end(), g.param) != seen.end())
          throw std::invalid_argument("trainable angle mapped to two gates");
        seen.push_back(g.param);
      }
    }
  }
};

namespace detail {

// g^dag P g for one term: P if commuting, else cos(a) P + i sin(a) G P.
// With derivative set, the angle derivative of that expression instead.
inline void conjugate_term(const PauliString& p, const PauliString& gen,
                           double angle, bool derivative,
                           std::vector<PauliString>& out) {
  if (!anticommutes(p, gen)) {
    if (!derivative) out.push_back(p);
    return;
  }
  const double c = std::cos(angle), s = std::sin(angle);
  PauliString gp = multiply(gen, p);
  gp.coeff *= cplx(0.0, 1.0);
  PauliString a = p;
  if (derivative) {
    a.coeff *= -s;
    gp.coeff *= c;
  } else {
    a.coeff *= c;
    gp.coeff *= s;
  }
  out.push_back(a);
  out.push_back(gp);
}

inline PauliSum conjugate_gate_impl(const PauliSum& obs, const RotationGate& g,
                                    bool derivative, double tol) {
  g.validate(obs.n_sites);
  const PauliString gen = g.generator();
  PauliSum r;
  r.n_sites = obs.n_sites;
  r.terms.reserve(obs.terms.size() * 2);
  for (const auto& p : obs.terms)
    conjugate_term(p, gen, g.angle, derivative, r.terms);
  return merge_and_prune(r, tol);
}

}  // namespace detail

/// g^dag obs g.
inline PauliSum conjugate_gate(const PauliSum& obs, const RotationGate& g,
                               double tol = kDefaultPruneTol) {
  return detail::conjugate_gate_impl(obs, g, false, tol);
}

/// U^dag obs U with U = gates[L-1] ... gates[0].
inline PauliSum conjugate_transform(const PauliSum& obs,
                                    const BasisTransform& t,
                                    double tol = kDefaultPruneTol) {
  if (t.n_sites != obs.n_sites && !t.gates.empty())
    throw std::invalid_argument("conjugate_transform: site count mismatch");
  PauliSum r = merge_and_prune(obs, tol);
  for (auto it = t.gates.rbegin(); it != t.gates.rend(); ++it)
    r = conjugate_gate(r, *it, tol);
  return r;
}

/// d/d(angle i) of U^dag obs U.
inline PauliSum d_conjugate_transform(const PauliSum& obs,
                                      const BasisTransform& t, int i,
                                      double tol = kDefaultPruneTol) {
  const int gi = t.gate_of_param(i);
  if (gi < 0) throw std::out_of_range("d_conjugate_transform: unknown angle index");
  if (t.n_sites != obs.n_sites)
    throw std::invalid_argument("d_conjugate_transform: site count mismatch");
  PauliSum r = merge_and_prune(obs, tol);
  for (int j = static_cast<int>(t.gates.size()) - 1; j >= 0; --j) {
    r = detail::conjugate_gate_impl(r, t.gates[static_cast<std::size_t>(j)],
                                    j == gi, tol);
    if (r.empty()) break;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Dense oracles
// ---------------------------------------------------------------------------

inline constexpr int kMaxDenseSites = 12;

/// Kronecker materialization, site 0 as the most significant index bit.
inline Eigen::MatrixXcd dense_matrix(const PauliSum& obs) {
  const int n = obs.n_sites;
  if (n > kMaxDenseSites) throw std::invalid_argument("dense_matrix: N too large");
  const std::size_t dim = std::size_t{1} << n;
  Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(dim),
                                              static_cast<Eigen::Index>(dim));
  for (std::size_t col = 0; col < dim; ++col) {
    const Bitstring x = from_dense_index(col, n);
    for (const auto& p : obs.terms) {
      const auto [y, amp] = apply_unchecked(p, x);
      m(static_cast<Eigen::Index>(dense_index(y, n)),
        static_cast<Eigen::Index>(col)) += amp;
    }
  }
  return m;
}

/// Full 2^n unitary of one gate, built from the explicit 2x2 / 4x4 matrices.
inline Eigen::MatrixXcd dense_gate(const RotationGate& g, int n) {
  if (n > kMaxDenseSites) throw std::invalid_argument("dense_gate: N too large");
  g.validate(n);
  const std::size_t dim = std::size_t{1} << n;
  const double c = std::cos(g.angle / 2), s = std::sin(g.angle / 2);
  const cplx I(0.0, 1.0);
  Eigen::MatrixXcd u = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(dim),
                                              static_cast<Eigen::Index>(dim));
  for (std::size_t col = 0; col < dim; ++col) {
    const Bitstring x = from_dense_index(col, n);
    auto put = [&](Bitstring y, cplx v) {
      u(static_cast<Eigen::Index>(dense_index(y, n)),
        static_cast<Eigen::Index>(col)) += v;
    };
    const Bitstring b0 = Bitstring{1} << g.site0;
    const int v0 = static_cast<int>((x >> g.site0) & 1U);
    switch (g.kind) {
      case GateKind::RY:
        // column v0 of [[c, -s], [s, c]]
        put(x & ~b0, v0 == 0 ? cplx(c) : cplx(-s));
        put(x | b0, v0 == 0 ? cplx(s) : cplx(c));
        break;
      case GateKind::RX:
        put(x & ~b0, v0 == 0 ? cplx(c) : -I * s);
        put(x | b0, v0 == 0 ? -I * s : cplx(c));
        break;
      case GateKind::RZZ: {
        const int v1 = static_cast<int>((x >> g.site1) & 1U);
        put(x, v0 == v1 ? std::exp(-I * (g.angle / 2)) : std::exp(I * (g.angle / 2)));
        break;
      }
    }
  }
  return u;
}

inline Eigen::MatrixXcd dense_unitary(const BasisTransform& t) {
  const std::size_t dim = std::size_t{1} << t.n_sites;
  Eigen::MatrixXcd u = Eigen::MatrixXcd::Identity(static_cast<Eigen::Index>(dim),
                                                  static_cast<Eigen::Index>(dim));
  for (const auto& g : t.gates) u = dense_gate(g, t.n_sites) * u;
  return u;
}

}  // namespace sbnd
