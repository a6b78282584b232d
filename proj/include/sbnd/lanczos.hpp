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
#include <complex>
#include <cstdint>
#include <type_traits>

#include "sbnd/errors.hpp"
#include "sbnd/rng.hpp"

namespace sbnd {

struct LanczosOptions {
  /// Iteration cap; 0 means dim. Also capped by max_basis.
  int max_iter = 0;
  /// Krylov basis vectors kept for full reorthogonalization.
  int max_basis = 2000;
  /// Converged when the Ritz value moves less than this between iterations...
  double eig_delta = 1e-10;
  /// ...and the Ritz residual is below residual_tol * |A|.
  double residual_tol = 1e-10;
  std::uint64_t seed = 0x5eed1a2c205ULL;
};

template <class Scalar>
struct LanczosResult {
  double eigenvalue = 0.0;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> vector;
  int iterations = 0;
  /// |A v - lambda v| of the returned vector.
  double residual = 0.0;
  double norm_estimate = 0.0;
};

/**
 * Lowest eigenpair of a Hermitian operator given as apply(in, out), out = A in.
 *
 * Full reorthogonalization (two Gram-Schmidt passes per step) against the
 * stored Krylov basis. The start vector is drawn from a fixed-seed normal
 * stream so results are reproducible. Throws NumericalError when the basis
 * cap is hit before convergence.
 */
template <class Scalar, class Apply>
LanczosResult<Scalar> lanczos_lowest(Apply&& apply, Eigen::Index dim,
                                     const LanczosOptions& opt = {}) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  constexpr bool kComplex = !std::is_same_v<Scalar, double>;

  LanczosResult<Scalar> res;
  if (dim <= 0) throw std::invalid_argument("lanczos: empty operator");

  Rng rng(opt.seed);
  Vec v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    if constexpr (kComplex)
      v[i] = Scalar(rng.normal(), rng.normal());
    else
      v[i] = rng.normal();
  }
  v.normalize();

  const Eigen::Index cap_iter =
      opt.max_iter > 0 ? std::min<Eigen::Index>(opt.max_iter, dim) : dim;
  const Eigen::Index cap = std::min<Eigen::Index>(cap_iter, opt.max_basis);

  Mat basis(dim, std::min<Eigen::Index>(cap, 64));
  std::vector<double> alpha, beta;
  Vec w(dim);
  double prev = std::numeric_limits<double>::infinity();
  double norm_est = 0.0;
  Eigen::VectorXd ritz;
  double theta = 0.0;
  bool done = false;
  Eigen::Index m = 0;

  for (Eigen::Index j = 0; j < cap && !done; ++j) {
    if (j >= basis.cols())
      basis.conservativeResize(Eigen::NoChange, std::min<Eigen::Index>(cap, 2 * basis.cols()));
    basis.col(j) = v;
    m = j + 1;
    apply(v, w);
    const double a = std::real(v.dot(w));
    alpha.push_back(a);
    for (int pass = 0; pass < 2; ++pass) {
      const Vec proj = basis.leftCols(m).adjoint() * w;
      w.noalias() -= basis.leftCols(m) * proj;
    }
    const double b = w.norm();

    Eigen::VectorXd diag(m), sub(std::max<Eigen::Index>(m - 1, 1));
    for (Eigen::Index k = 0; k < m; ++k) diag[k] = alpha[static_cast<std::size_t>(k)];
    for (Eigen::Index k = 0; k + 1 < m; ++k) sub[k] = beta[static_cast<std::size_t>(k)];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, sub.head(m - 1), Eigen::ComputeEigenvectors);
    theta = es.eigenvalues()[0];
    ritz = es.eigenvectors().col(0);
    norm_est = std::max({norm_est, std::abs(es.eigenvalues()[0]),
                         std::abs(es.eigenvalues()[m - 1]), b});
    const double ritz_res = b * std::abs(ritz[m - 1]);
    const double scale = std::max(norm_est, 1e-300);

    if (b <= 1e-14 * scale || m == dim) {
      done = true;  // invariant subspace
    } else if (std::abs(theta - prev) < opt.eig_delta &&
               ritz_res <= opt.residual_tol * scale) {
      done = true;
    }
    prev = theta;
    beta.push_back(b);
    if (!done) v = w / b;
  }

  Vec vec = basis.leftCols(m) * ritz.cast<Scalar>();
  vec.normalize();
  apply(vec, w);
  res.eigenvalue = std::real(vec.dot(w));
  res.residual = (w - res.eigenvalue * vec).norm();
  res.vector = std::move(vec);
  res.iterations = static_cast<int>(m);
  res.norm_estimate = norm_est;
  if (!done && res.residual > 1e-8 * std::max(norm_est, 1.0))
    throw NumericalError("lanczos: no convergence within " +
                         std::to_string(m) + " iterations (residual " +
                         std::to_string(res.residual) + ")");
  return res;
}

}  // namespace sbnd
