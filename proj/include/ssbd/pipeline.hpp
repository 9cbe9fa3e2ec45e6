#pragma once

// End-to-end recovery: initialise from a whitened data window, minimise psi,
// lift back to kernel space, and score against ground truth up to shift and sign.

#include <ssbd/core.hpp>
#include <ssbd/landscape.hpp>
#include <ssbd/optimizer.hpp>
#include <ssbd/rng.hpp>
#include <ssbd/shift_model.hpp>
#include <ssbd/signals.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

namespace ssbd {

/// q_init = P_S[B y_i] for the window starting at 0-based index i.
inline Vector init_point(const ObservationModel& mo, Index i) {
  require_dims(i >= 0 && i < mo.m(), "init_point", "window index " + std::to_string(i) + " outside [0, m)");
  return normalized(mo.B * window(mo.y.y, i, mo.k()), "init_point");
}

struct InitChoice {
  Vector q;
  Index index = 0;
};

/// Window index drawn uniformly from the seed; all-zero windows are redrawn
/// up to 32 times.
inline InitChoice init_point_seeded(const ObservationModel& mo, std::uint64_t seed) {
  Rng rng(seed);
  for (int attempt = 0; attempt < 32; ++attempt) {
    const Index i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(mo.m())));
    if (window(mo.y.y, i, mo.k()).squaredNorm() > 0.0) return {init_point(mo, i), i};
  }
  throw DegenerateError("init_point", "32 sampled windows were all zero");
}

/// a_bar = P_S[(YY^T)^{1/2} q].
inline Kernel lift_kernel(const ObservationModel& mo, const Vector& q) {
  detail::require_q(q, mo.k(), "lift_kernel");
  return Kernel::from_values(sqrt_spd(mo.yy_gram) * q);
}

struct ShiftError {
  double err = 1.0;
  Index best_shift = 0;
  int sign = 1;
};

/// err = 1 - max_tau |<a_bar, P_S[shift-truncation tau of a0]>| over
/// tau in [-(k-1), k-1], skipping all-zero truncations.
inline ShiftError shift_truncation_error(const Kernel& a_bar, const Kernel& a0) {
  require_dims(a_bar.k() == a0.k(), "shift_truncation_error", "kernels differ in length");
  const Index k = a0.k();
  const Matrix A0 = build_A0(a0);
  ShiftError best;
  double best_abs = -1.0;
  for (Index c = 0; c < 2 * k - 1; ++c) {
    const double n = A0.col(c).norm();
    if (!(n > 0.0)) continue;
    const double ip = a_bar.values().dot(A0.col(c)) / n;
    if (std::abs(ip) > best_abs) {
      best_abs = std::abs(ip);
      best.best_shift = c - (k - 1);
      best.sign = ip < 0.0 ? -1 : 1;
    }
  }
  if (best_abs < 0.0) throw DegenerateError("shift_truncation_error", "every shift truncation of a0 is zero");
  best.err = std::clamp(1.0 - best_abs, 0.0, 1.0);
  return best;
}

struct DeconvOptions {
  SolveOptions solve;
  std::uint64_t seed = 0;
  double c_star = 10.0;
};

struct DeconvResult {
  Vector q_init;
  Index init_index = 0;
  Vector q_bar;
  Kernel a_bar = Kernel::delta(2);
  OptReport report;
  double psi_final = 0.0;
  std::optional<ShiftError> score;
};

/// Initialise, minimise psi (scaled by 1/|psi(q_init)|), lift, and score.
inline DeconvResult deconvolve(const ObservationModel& mo, const DeconvOptions& opts, const std::optional<Kernel>& truth = std::nullopt) {
  if (truth) require_dims(truth->k() == mo.k(), "deconvolve", "ground-truth kernel has the wrong length");
  DeconvResult r;
  const InitChoice init = init_point_seeded(mo, opts.seed);
  r.q_init = init.q;
  r.init_index = init.index;
  const double p0 = std::abs(psi(mo, init.q));
  if (!(p0 > 0.0)) throw DegenerateError("deconvolve", "psi vanishes at the initial point");
  SolveOptions so = opts.solve;
  so.seed = opts.seed;
  r.report = descend(PsiObjective(mo, 1.0 / p0), init.q, so);
  r.q_bar = r.report.q_final;
  r.a_bar = lift_kernel(mo, r.q_bar);
  r.psi_final = psi(mo, r.q_bar);
  if (truth) r.score = shift_truncation_error(r.a_bar, *truth);
  return r;
}

inline DeconvResult deconvolve(const Observation& y, const DeconvOptions& opts, const std::optional<Kernel>& truth = std::nullopt) {
  return deconvolve(ObservationModel::build(y), opts, truth);
}

struct ActivationResult {
  Vector x;
  double residual = 0.0;  ///< |y - a_bar * x|_2
};

namespace detail {

/// In-place Cholesky of a symmetric band matrix stored as L(i, d) = M(i, i-d), d in [0, p].
inline void band_cholesky(Matrix& L, Index p, const char* op) {
  const Index n = L.rows();
  for (Index i = 0; i < n; ++i) {
    for (Index d = std::min(p, i); d >= 1; --d) {
      const Index j = i - d;
      double s = L(i, d);
      for (Index t = 1; t <= p - d && j - t >= 0; ++t) s -= L(i, d + t) * L(j, t);
      L(i, d) = s / L(j, 0);
    }
    double s = L(i, 0);
    for (Index t = 1; t <= std::min(p, i); ++t) s -= L(i, t) * L(i, t);
    if (!(s > 0.0)) throw SingularityError(op, "normal equations are not positive definite");
    L(i, 0) = std::sqrt(s);
  }
}

inline Vector band_solve(const Matrix& L, Index p, Vector b) {
  const Index n = L.rows();
  for (Index i = 0; i < n; ++i) {
    double s = b[i];
    for (Index t = 1; t <= std::min(p, i); ++t) s -= L(i, t) * b[i - t];
    b[i] = s / L(i, 0);
  }
  for (Index i = n - 1; i >= 0; --i) {
    double s = b[i];
    for (Index t = 1; t <= p && i + t < n; ++t) s -= L(i + t, t) * b[i + t];
    b[i] = s / L(i, 0);
  }
  return b;
}

}  // namespace detail

/// Least-squares activation min_x |y - a_bar * x|^2 through the normal
/// equations. The normal matrix is circulant with symbol r (autocorrelation of
/// a_bar); it is split into its banded Toeplitz part T, factored by band
/// Cholesky, plus two (k-1)-square corner blocks handled by Woodbury.
inline ActivationResult solve_activation(const Kernel& a_bar, const Observation& y) {
  const Index k = a_bar.k(), m = y.m(), p = k - 1;
  require_dims(m > 2 * k, "solve_activation", "need m > 2k");
  const Vector& a = a_bar.values();
  Vector r(k);
  for (Index t = 0; t < k; ++t) r[t] = a.head(k - t).dot(a.tail(k - t));

  Matrix L = Matrix::Zero(m, p + 1);
  for (Index i = 0; i < m; ++i)
    for (Index d = 0; d <= std::min(p, i); ++d) L(i, d) = r[d];
  detail::band_cholesky(L, p, "solve_activation");

  const Vector b = correlate_windows(y.y, a);
  Vector x = detail::band_solve(L, p, b);

  if (p > 0) {
    // Corner coupling: M = T + W S W^T, W = [e_0..e_{p-1}, e_{m-p}..e_{m-1}],
    // S = [[0, K], [K^T, 0]], K(i, j) = r(p + i - j) for j >= i.
    Matrix K = Matrix::Zero(p, p);
    for (Index i = 0; i < p; ++i)
      for (Index j = i; j < p; ++j) K(i, j) = r[p + i - j];
    Matrix S = Matrix::Zero(2 * p, 2 * p);
    S.topRightCorner(p, p) = K;
    S.bottomLeftCorner(p, p) = K.transpose();
    Matrix TinvW(m, 2 * p);
    for (Index c = 0; c < 2 * p; ++c) {
      const Index row = c < p ? c : m - 2 * p + c;
      TinvW.col(c) = detail::band_solve(L, p, Vector::Unit(m, row));
    }
    Matrix WtTinvW(2 * p, 2 * p);
    Vector Wtx(2 * p);
    for (Index c = 0; c < 2 * p; ++c) {
      const Index row = c < p ? c : m - 2 * p + c;
      WtTinvW.row(c) = TinvW.row(row);
      Wtx[c] = x[row];
    }
    const Matrix cap = Matrix::Identity(2 * p, 2 * p) + S * WtTinvW;
    Eigen::FullPivLU<Matrix> lu(cap);
    lu.setThreshold(1e-13);
    if (!lu.isInvertible()) throw SingularityError("solve_activation", "normal equations are singular");
    x -= TinvW * lu.solve(S * Wtx);
  }

  // Consistency of the normal-equation solve.
  const Vector Mx = correlate_windows(convolve(a, x), a);
  const double bn = b.norm();
  if (!((Mx - b).norm() <= 1e-6 * std::max(bn, 1e-300)) && bn > 0.0)
    throw SingularityError("solve_activation", "normal equations are numerically singular");

  ActivationResult out;
  out.residual = (y.y - convolve(a, x)).norm();
  out.x = std::move(x);
  return out;
}

}  // namespace ssbd
