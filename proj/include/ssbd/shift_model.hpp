#pragma once

// Structured matrices built from a kernel: the shift-truncation matrix A0,
// its Gram, the preconditioned matrix A = (A0 A0^T)^{-1/2} A0, and the
// spectral statistics (sigma_min, kappa, mu) that govern the landscape.

#include <ssbd/core.hpp>
#include <ssbd/rng.hpp>
#include <ssbd/signals.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdint>
#include <string>
#include <vector>

namespace ssbd {

/// Relative eigenvalue floor below which (pseudo-)inverse square roots are refused.
inline constexpr double kRankTol = 1e-12;

struct SymEigen {
  Vector eigvals;  ///< descending
  Matrix eigvecs;  ///< columns match eigvals
};

/// Full eigendecomposition of a symmetric matrix, eigenvalues descending.
/// Backed by Eigen's Householder tridiagonalisation + implicit symmetric QR.
inline SymEigen sym_eig(const Matrix& S) {
  if (S.rows() != S.cols()) throw ContractError("sym_eig", "matrix is not square");
  const double scale = S.norm();
  if ((S - S.transpose()).norm() > 1e-12 * std::max(scale, 1e-300))
    throw ContractError("sym_eig", "matrix is not symmetric");
  if (S.size() == 0) return {Vector(0), Matrix(0, 0)};
  Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::ComputeEigenvectors);
  if (es.info() != Eigen::Success) throw IterationError("sym_eig", "eigensolver did not converge");
  const Index n = S.rows();
  SymEigen out{Vector(n), Matrix(n, n)};
  // Eigen returns ascending order.
  for (Index i = 0; i < n; ++i) {
    out.eigvals[i] = es.eigenvalues()[n - 1 - i];
    out.eigvecs.col(i) = es.eigenvectors().col(n - 1 - i);
  }
  return out;
}

namespace detail {
inline std::string fmt_g(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}
inline void check_spd(const SymEigen& e, const char* op) {
  const double lmax = e.eigvals[0];
  const double lmin = e.eigvals[e.eigvals.size() - 1];
  if (!(lmax > 0.0) || !(lmin > kRankTol * lmax))
    throw SingularityError(op, "eigenvalue " + fmt_g(lmin) + " <= rank_tol * lambda_max (lambda_max = " + fmt_g(lmax) + ")");
}
inline Matrix spectral_function(const SymEigen& e, double power) {
  const Vector d = e.eigvals.array().pow(power);
  return e.eigvecs * d.asDiagonal() * e.eigvecs.transpose();
}
}  // namespace detail

/// S^{-1/2} for symmetric positive definite S.
inline Matrix inv_sqrt(const Matrix& S) {
  const SymEigen e = sym_eig(S);
  detail::check_spd(e, "inv_sqrt");
  return detail::spectral_function(e, -0.5);
}

/// S^{1/2} for symmetric positive definite S.
inline Matrix sqrt_spd(const Matrix& S) {
  const SymEigen e = sym_eig(S);
  detail::check_spd(e, "sqrt_spd");
  return detail::spectral_function(e, 0.5);
}

/// A0 in R^{k x (2k-1)}: column c (0-based) is iota_k^* s_tau[iota(a0)] with
/// tau = c - (k-1), i.e. A0(i, c) = a(i - tau) when that index is in range.
inline Matrix build_A0(const Vector& a) {
  const Index k = a.size();
  if (k < 2) throw ParameterError("build_A0", "kernel length must be >= 2");
  Matrix A0 = Matrix::Zero(k, 2 * k - 1);
  for (Index c = 0; c < 2 * k - 1; ++c) {
    const Index tau = c - (k - 1);
    for (Index i = 0; i < k; ++i) {
      const Index src = i - tau;
      if (src >= 0 && src < k) A0(i, c) = a[src];
    }
  }
  return A0;
}

inline Matrix build_A0(const Kernel& a) { return build_A0(a.values()); }

struct Preconditioned {
  Matrix A;
  Matrix inv_sqrt_gram;
};

/// A = (A0 A0^T)^{-1/2} A0, whose rows are orthonormal.
inline Preconditioned precondition(const Matrix& A0) {
  const Matrix G = A0 * A0.transpose();
  const SymEigen e = sym_eig(G);
  detail::check_spd(e, "precondition");
  Matrix W = detail::spectral_function(e, -0.5);
  Matrix A = W * A0;
  return {std::move(A), std::move(W)};
}

/// mu = max_{i != j} |<a_i, a_j>|; zero columns contribute 0.
inline double coherence(const Matrix& A) {
  const Matrix C = A.transpose() * A;
  double mu = 0.0;
  for (Index j = 0; j < C.cols(); ++j)
    for (Index i = 0; i < j; ++i) mu = std::max(mu, std::abs(C(i, j)));
  return mu;
}

struct SpectrumStats {
  double sigma_min = 0.0;
  double kappa = 0.0;
};

inline SpectrumStats stats_from_gram_eigs(const SymEigen& e) {
  detail::check_spd(e, "spectrum_stats");
  const double lmax = e.eigvals[0];
  const double lmin = e.eigvals[e.eigvals.size() - 1];
  return {std::sqrt(lmin), std::sqrt(lmax / lmin)};
}

/// sigma_min(A0) and kappa(A0) = sigma_max / sigma_min.
inline SpectrumStats spectrum_stats(const Matrix& A0) { return stats_from_gram_eigs(sym_eig(A0 * A0.transpose())); }

/// Cyclic autocorrelation r(tau) = sum_l y_l y_{l+tau}, tau = 0..k-1.
inline Vector cyclic_autocorrelation(const Vector& y, Index k) {
  const Index m = y.size();
  Vector r(k);
  for (Index t = 0; t < k; ++t) {
    double s = y.head(m - t).dot(y.segment(t, m - t));
    if (t > 0) s += y.tail(t).dot(y.head(t));
    r[t] = s;
  }
  return r;
}

inline Matrix toeplitz_symmetric(const Vector& r) {
  const Index k = r.size();
  Matrix T(k, k);
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < k; ++j) T(i, j) = r[std::abs(i - j)];
  return T;
}

/// Y Y^T = sum_i y_i y_i^T as the symmetric Toeplitz matrix of the cyclic
/// autocorrelation of y.
inline Matrix window_gram(const Vector& y, Index k) {
  require_dims(k >= 1 && y.size() > 2 * k, "window_gram", "need m > 2k");
  return toeplitz_symmetric(cyclic_autocorrelation(y, k));
}

inline Matrix window_gram(const Observation& y) { return window_gram(y.y, y.k); }

/// Everything derived from a ground-truth kernel. Immutable after build.
struct ShiftModel {
  Matrix A0;
  Matrix gram;
  Matrix inv_sqrt_gram;
  Matrix A;
  double sigma_min = 0.0;
  double kappa = 0.0;
  double mu = 0.0;

  Index k() const noexcept { return A0.rows(); }
  Index columns() const noexcept { return A0.cols(); }

  static ShiftModel build(const Kernel& a0) {
    ShiftModel s;
    s.A0 = build_A0(a0);
    s.gram = s.A0 * s.A0.transpose();
    const SymEigen e = sym_eig(s.gram);
    const SpectrumStats st = stats_from_gram_eigs(e);
    s.sigma_min = st.sigma_min;
    s.kappa = st.kappa;
    s.inv_sqrt_gram = detail::spectral_function(e, -0.5);
    s.A = s.inv_sqrt_gram * s.A0;
    s.mu = coherence(s.A);
    return s;
  }
};

struct KernelParams {
  Index k = 0;
  double sigma_min_avg = 0.0;
  double kappa_avg = 0.0;
  double mu_avg = 0.0;
  int trials = 0;
  std::uint64_t seed = 0;
};

/// Averages of (sigma_min, kappa, mu) over `trials` random unit kernels per k.
/// Trial t of list entry i uses kernel seed derive_seed(seed, {i, t}).
inline std::vector<KernelParams> estimate_kernel_params(const std::vector<Index>& k_list, int trials, std::uint64_t seed,
                                                        KernelFamily family = KernelFamily::Generic) {
  if (trials < 1) throw ParameterError("estimate_kernel_params", "trials must be >= 1");
  std::vector<KernelParams> out;
  for (std::size_t i = 0; i < k_list.size(); ++i) {
    KernelParams p;
    p.k = k_list[i];
    p.trials = trials;
    p.seed = seed;
    for (int t = 0; t < trials; ++t) {
      Rng rng(derive_seed(seed, {i, static_cast<std::uint64_t>(t)}));
      const ShiftModel s = ShiftModel::build(make_kernel(family, p.k, rng));
      p.sigma_min_avg += s.sigma_min;
      p.kappa_avg += s.kappa;
      p.mu_avg += s.mu;
    }
    p.sigma_min_avg /= trials;
    p.kappa_avg /= trials;
    p.mu_avg /= trials;
    out.push_back(p);
  }
  return out;
}

}  // namespace ssbd
