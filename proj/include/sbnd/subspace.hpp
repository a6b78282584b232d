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
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "sbnd/errors.hpp"
#include "sbnd/lanczos.hpp"
#include "sbnd/pauli.hpp"

namespace sbnd {

/// Ordered set of unique configurations with an inverse index.
class ConfigSet {
 public:
  ConfigSet() = default;
  explicit ConfigSet(std::span<const Bitstring> xs) {
    for (Bitstring x : xs) insert(x);
  }
  ConfigSet(std::initializer_list<Bitstring> xs) {
    for (Bitstring x : xs) insert(x);
  }

  /// Appends x if new. Returns true if inserted.
  bool insert(Bitstring x) {
    auto [it, fresh] = index_.try_emplace(x, static_cast<int>(configs_.size()));
    if (fresh) configs_.push_back(x);
    return fresh;
  }

  /// Position of x, or -1.
  int find(Bitstring x) const {
    auto it = index_.find(x);
    return it == index_.end() ? -1 : it->second;
  }
  bool contains(Bitstring x) const { return index_.count(x) != 0; }

  std::size_t size() const { return configs_.size(); }
  bool empty() const { return configs_.empty(); }
  Bitstring operator[](std::size_t i) const { return configs_[i]; }
  const std::vector<Bitstring>& configs() const { return configs_; }
  auto begin() const { return configs_.begin(); }
  auto end() const { return configs_.end(); }

  /// First `count` entries.
  ConfigSet prefix(std::size_t count) const {
    ConfigSet out;
    for (std::size_t i = 0; i < std::min(count, size()); ++i) out.insert(configs_[i]);
    return out;
  }

  static ConfigSet full_basis(int n) {
    ConfigSet c;
    for (Bitstring x = 0; x < (Bitstring{1} << n); ++x) c.insert(x);
    return c;
  }

 private:
  std::vector<Bitstring> configs_;
  std::unordered_map<Bitstring, int> index_;
};

inline constexpr std::size_t kDenseSubspaceLimit = 512;

/// Subspace Hamiltonian. Dense up to kDenseSubspaceLimit rows, otherwise
/// compressed sparse columns.
struct SubspaceMatrix {
  Eigen::Index dim = 0;
  bool dense_storage = true;
  Eigen::MatrixXcd dense;
  // Sparse: entries of column m are [col_start[m], col_start[m+1]).
  std::vector<std::size_t> col_start;
  std::vector<int> row;
  std::vector<cplx> value;

  cplx operator()(Eigen::Index l, Eigen::Index m) const {
    if (dense_storage) return dense(l, m);
    cplx acc = 0.0;
    for (std::size_t k = col_start[static_cast<std::size_t>(m)];
         k < col_start[static_cast<std::size_t>(m) + 1]; ++k)
      if (row[k] == l) acc += value[k];
    return acc;
  }

  Eigen::MatrixXcd to_dense() const {
    if (dense_storage) return dense;
    Eigen::MatrixXcd d = Eigen::MatrixXcd::Zero(dim, dim);
    for (Eigen::Index m = 0; m < dim; ++m)
      for (std::size_t k = col_start[static_cast<std::size_t>(m)];
           k < col_start[static_cast<std::size_t>(m) + 1]; ++k)
        d(row[k], m) += value[k];
    return d;
  }

  template <class Vec>
  void apply(const Vec& in, Vec& out) const {
    if (dense_storage) {
      if constexpr (std::is_same_v<typename Vec::Scalar, double>)
        out.noalias() = dense.real() * in;
      else
        out.noalias() = dense * in;
      return;
    }
    out.setZero();
    for (Eigen::Index m = 0; m < dim; ++m) {
      const auto xm = in[m];
      for (std::size_t k = col_start[static_cast<std::size_t>(m)];
           k < col_start[static_cast<std::size_t>(m) + 1]; ++k) {
        if constexpr (std::is_same_v<typename Vec::Scalar, double>)
          out[row[k]] += value[k].real() * xm;
        else
          out[row[k]] += value[k] * xm;
      }
    }
  }

  bool is_real() const {
    if (dense_storage) return dense.imag().cwiseAbs().maxCoeff() == 0.0;
    return std::all_of(value.begin(), value.end(),
                       [](cplx v) { return v.imag() == 0.0; });
  }

  /// max |M - M^dag| over entries.
  double hermiticity_defect() const {
    if (dense_storage) return (dense - dense.adjoint()).cwiseAbs().maxCoeff();
    // Rows within a column are sorted; look up the mirrored entry.
    double worst = 0.0;
    for (Eigen::Index m = 0; m < dim; ++m)
      for (std::size_t k = col_start[static_cast<std::size_t>(m)];
           k < col_start[static_cast<std::size_t>(m) + 1]; ++k) {
        const auto r = static_cast<std::size_t>(row[k]);
        const auto first = row.begin() + static_cast<std::ptrdiff_t>(col_start[r]);
        const auto last = row.begin() + static_cast<std::ptrdiff_t>(col_start[r + 1]);
        const auto it = std::lower_bound(first, last, static_cast<int>(m));
        const cplx mirror = (it != last && *it == m)
                                ? value[static_cast<std::size_t>(it - row.begin())]
                                : cplx(0.0);
        worst = std::max(worst, std::abs(value[k] - std::conj(mirror)));
      }
    return worst;
  }

  double max_abs() const {
    if (dense_storage) return dense.cwiseAbs().maxCoeff();
    double m = 0.0;
    for (cplx v : value) m = std::max(m, std::abs(v));
    return m;
  }
};

/// Terms of an observable grouped by flip mask: for each group, the
/// amplitude on x is sum_k base_k (-1)^{|x & z_k|}.
struct FlipGroups {
  struct Group {
    Bitstring flip = 0;
    std::vector<Bitstring> z;
    std::vector<cplx> base;

    cplx amplitude(Bitstring x) const {
      cplx a = 0.0;
      for (std::size_t k = 0; k < z.size(); ++k)
        a += (std::popcount(x & z[k]) & 1) ? -base[k] : base[k];
      return a;
    }
  };
  std::vector<Group> groups;

  explicit FlipGroups(const PauliSum& h) {
    std::vector<PauliString> t = h.terms;
    std::stable_sort(t.begin(), t.end(), [](const PauliString& a, const PauliString& b) {
      return a.x < b.x;
    });
    for (const auto& p : t) {
      if (groups.empty() || groups.back().flip != p.x) groups.push_back({p.x, {}, {}});
      groups.back().z.push_back(p.z);
      groups.back().base.push_back(p.coeff * ipow(p.y_count()));
    }
  }
};

/**
 * M[l][m] = <x_l|H|x_m>. Strings mapping x_m outside the set are dropped.
 */
inline SubspaceMatrix subspace_matrix(const PauliSum& h, const ConfigSet& c,
                                      std::size_t dense_limit = kDenseSubspaceLimit) {
  if (c.empty()) throw std::invalid_argument("subspace_matrix: empty configuration set");
  const Bitstring outside = ~site_mask(h.n_sites);
  for (Bitstring x : c)
    if ((x & outside) != 0)
      throw std::invalid_argument("subspace_matrix: configuration wider than H");
  const FlipGroups ops(h);
  SubspaceMatrix m;
  m.dim = static_cast<Eigen::Index>(c.size());
  m.dense_storage = c.size() <= dense_limit;
  if (m.dense_storage) {
    m.dense = Eigen::MatrixXcd::Zero(m.dim, m.dim);
    for (Eigen::Index col = 0; col < m.dim; ++col) {
      const Bitstring x = c[static_cast<std::size_t>(col)];
      for (const auto& g : ops.groups) {
        const int l = g.flip == 0 ? static_cast<int>(col) : c.find(x ^ g.flip);
        if (l >= 0) m.dense(l, col) += g.amplitude(x);
      }
    }
    return m;
  }
  m.col_start.reserve(c.size() + 1);
  m.col_start.push_back(0);
  std::vector<std::pair<int, cplx>> column;
  for (Eigen::Index col = 0; col < m.dim; ++col) {
    const Bitstring x = c[static_cast<std::size_t>(col)];
    column.clear();
    for (const auto& g : ops.groups) {
      const int l = g.flip == 0 ? static_cast<int>(col) : c.find(x ^ g.flip);
      if (l >= 0) {
        const cplx a = g.amplitude(x);
        if (a != cplx(0.0)) column.emplace_back(l, a);
      }
    }
    std::sort(column.begin(), column.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [r, v] : column) {
      m.row.push_back(r);
      m.value.push_back(v);
    }
    m.col_start.push_back(m.row.size());
  }
  return m;
}

/// psi^dag (P_C O P_C) psi for an observable restricted to the set, without
/// materializing the matrix.
inline cplx projected_expectation(const PauliSum& op, const ConfigSet& c,
                                  const Eigen::VectorXcd& psi) {
  const FlipGroups ops(op);
  cplx acc = 0.0;
  for (std::size_t col = 0; col < c.size(); ++col) {
    const cplx pm = psi[static_cast<Eigen::Index>(col)];
    if (pm == cplx(0.0)) continue;
    const Bitstring x = c[col];
    for (const auto& g : ops.groups) {
      const int l = g.flip == 0 ? static_cast<int>(col) : c.find(x ^ g.flip);
      if (l >= 0) acc += std::conj(psi[l]) * g.amplitude(x) * pm;
    }
  }
  return acc;
}

struct Eigenpair {
  double energy = 0.0;
  Eigen::VectorXcd vector;
};

inline constexpr double kHermiticityTol = 1e-9;

/**
 * Minimal eigenvalue and unit eigenvector. Dense storage uses a direct
 * solver (real when the matrix is real); sparse storage uses Lanczos with
 * a fixed start vector. Rejects matrices whose Hermiticity defect exceeds
 * kHermiticityTol.
 */
inline Eigenpair lowest_eigenpair(const SubspaceMatrix& m,
                                  const LanczosOptions& opt = {}) {
  if (m.dim == 0) throw std::invalid_argument("lowest_eigenpair: empty matrix");
  if (m.hermiticity_defect() > kHermiticityTol)
    throw std::invalid_argument("lowest_eigenpair: matrix is not Hermitian");
  Eigenpair out;
  const bool real = m.is_real();
  if (m.dense_storage) {
    if (real) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.dense.real());
      if (es.info() != Eigen::Success) throw NumericalError("dense eigensolver failed");
      out.energy = es.eigenvalues()[0];
      out.vector = es.eigenvectors().col(0).cast<cplx>();
    } else {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(m.dense);
      if (es.info() != Eigen::Success) throw NumericalError("dense eigensolver failed");
      out.energy = es.eigenvalues()[0];
      out.vector = es.eigenvectors().col(0);
    }
    return out;
  }
  LanczosOptions o = opt;
  if (o.max_iter == 0) o.max_iter = static_cast<int>(std::min<Eigen::Index>(10 * m.dim, 1 << 30));
  if (real) {
    auto r = lanczos_lowest<double>(
        [&](const Eigen::VectorXd& in, Eigen::VectorXd& outv) { m.apply(in, outv); },
        m.dim, o);
    out.energy = r.eigenvalue;
    out.vector = r.vector.cast<cplx>();
  } else {
    auto r = lanczos_lowest<cplx>(
        [&](const Eigen::VectorXcd& in, Eigen::VectorXcd& outv) { m.apply(in, outv); },
        m.dim, o);
    out.energy = r.eigenvalue;
    out.vector = r.vector;
  }
  return out;
}

inline Eigenpair lowest_eigenpair(const Eigen::MatrixXcd& dense) {
  SubspaceMatrix m;
  m.dim = dense.rows();
  m.dense = dense;
  return lowest_eigenpair(m);
}

struct SubspaceResult {
  SubspaceMatrix matrix;
  double energy = 0.0;
  Eigen::VectorXcd vector;
};

/// Lowest subspace eigenpair of an already conjugated observable.
inline SubspaceResult sbd_energy_rotated(const PauliSum& h_rot, const ConfigSet& c) {
  SubspaceResult r;
  r.matrix = subspace_matrix(h_rot, c);
  auto ep = lowest_eigenpair(r.matrix);
  r.energy = ep.energy;
  r.vector = std::move(ep.vector);
  return r;
}

/// Subspace energy of U^dag H U (or H when t is empty) on the set c.
inline SubspaceResult sbd_energy(const PauliSum& h,
                                 const std::optional<BasisTransform>& t,
                                 const ConfigSet& c) {
  if (t) return sbd_energy_rotated(conjugate_transform(h, *t), c);
  return sbd_energy_rotated(h, c);
}

inline double relative_error(double e, double e0) {
  if (e0 == 0.0) throw std::invalid_argument("relative_error: E0 == 0");
  return std::abs((e - e0) / e0);
}

}  // namespace sbnd
