#pragma once

// Finite-sample objective psi(q) = -(1/4m)|Y^T (YY^T)^{-1/2} q|_4^4 and the
// population objective phi(q) = -(1/4)|A^T q|_4^4 on the unit sphere, with
// Riemannian gradients/Hessians and the stationary-point analysis around them.
// All psi-side work is matrix-free through window correlations.

#include <ssbd/core.hpp>
#include <ssbd/rng.hpp>
#include <ssbd/shift_model.hpp>
#include <ssbd/signals.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace ssbd {

/// Observation plus its window Gram YY^T and preconditioner B = (YY^T)^{-1/2}.
struct ObservationModel {
  Observation y;
  Matrix yy_gram;
  Matrix B;

  Index k() const noexcept { return y.k; }
  Index m() const noexcept { return y.m(); }

  static ObservationModel build(const Observation& obs) {
    ObservationModel mo;
    mo.y = obs;
    mo.yy_gram = window_gram(obs);
    mo.B = inv_sqrt(mo.yy_gram);
    return mo;
  }
};

namespace detail {
inline void require_q(const Vector& q, Index k, const char* op) {
  require_dims(q.size() == k, op, "q has length " + std::to_string(q.size()) + ", expected " + std::to_string(k));
}
inline void require_tangent(const Vector& q, const Vector& v, const char* op) {
  require_dims(v.size() == q.size(), op, "tangent vector has the wrong length");
  if (std::abs(q.dot(v)) > 1e-8 * std::max(1.0, v.norm()))
    throw ContractError(op, "vector is not tangent at q (<v,q> = " + fmt_g(q.dot(v)) + ")");
}
}  // namespace detail

/// eta = Y^T B q.
inline Vector eta(const ObservationModel& mo, const Vector& q) {
  detail::require_q(q, mo.k(), "eta");
  return correlate_windows(mo.y.y, mo.B * q);
}

/// psi evaluated at one point, with eta cached for gradient/Hessian reuse.
struct PsiPoint {
  Vector q;
  Vector eta;
  double eta4 = 0.0;  ///< |eta|_4^4

  PsiPoint(const ObservationModel& mo, const Vector& q_) : q(q_), eta(ssbd::eta(mo, q_)), eta4(l4_4(eta)) {}

  double value(const ObservationModel& mo) const { return -eta4 / (4.0 * static_cast<double>(mo.m())); }

  Vector gradient(const ObservationModel& mo) const {
    const double inv_m = 1.0 / static_cast<double>(mo.m());
    const Vector e3 = eta.array().cube();
    const Vector g = -inv_m * (mo.B * scatter_windows(mo.y.y, e3, mo.k()));
    return tangent_project(q, g);
  }

  Vector hess_vec(const ObservationModel& mo, const Vector& v) const {
    detail::require_tangent(q, v, "hess_psi_vec");
    const double inv_m = 1.0 / static_cast<double>(mo.m());
    const Vector pv = tangent_project(q, v);
    Vector u = correlate_windows(mo.y.y, mo.B * pv);
    u.array() *= eta.array().square();
    const Vector h = -3.0 * inv_m * (mo.B * scatter_windows(mo.y.y, u, mo.k())) + inv_m * eta4 * pv;
    return tangent_project(q, h);
  }
};

inline double psi(const ObservationModel& mo, const Vector& q) { return PsiPoint(mo, q).value(mo); }

/// grad psi = -(1/m) B Y eta^3 + (1/m) q |eta|_4^4.
inline Vector grad_psi(const ObservationModel& mo, const Vector& q) { return PsiPoint(mo, q).gradient(mo); }

/// P[-(3/m) B Y diag(eta^2) Y^T B + (1/m)|eta|_4^4 I] P v, for tangent v.
inline Vector hess_psi_vec(const ObservationModel& mo, const Vector& q, const Vector& v) {
  detail::require_tangent(q, v, "hess_psi_vec");
  return PsiPoint(mo, q).hess_vec(mo, v);
}

/// Dense Riemannian Hessian of psi, assembled from k Hessian-vector products.
inline Matrix hess_psi(const ObservationModel& mo, const Vector& q) {
  const PsiPoint pt(mo, q);
  const Index k = mo.k();
  Matrix H(k, k);
  for (Index i = 0; i < k; ++i) H.col(i) = pt.hess_vec(mo, tangent_project(q, Vector::Unit(k, i)));
  return 0.5 * (H + H.transpose());
}

inline double phi(const Matrix& A, const Vector& q) {
  detail::require_q(q, A.rows(), "phi");
  return -0.25 * l4_4(A.transpose() * q);
}

/// grad phi = -A zeta^3 + q |zeta|_4^4 with zeta = A^T q.
inline Vector grad_phi(const Matrix& A, const Vector& q) {
  detail::require_q(q, A.rows(), "grad_phi");
  const Vector zeta = A.transpose() * q;
  return tangent_project(q, -(A * zeta.array().cube().matrix()));
}

/// Hess phi = -P[3 A diag(zeta^2) A^T - |zeta|_4^4 I] P.
inline Matrix hess_phi(const Matrix& A, const Vector& q) {
  detail::require_q(q, A.rows(), "hess_phi");
  const Index k = A.rows();
  const Vector zeta = A.transpose() * q;
  const Matrix inner = 3.0 * A * zeta.array().square().matrix().asDiagonal() * A.transpose() - l4_4(zeta) * Matrix::Identity(k, k);
  const Matrix P = Matrix::Identity(k, k) - q * q.transpose();
  const Matrix H = -(P * inner * P);
  return 0.5 * (H + H.transpose());
}

/// E[(1/m)|Y^T (A0 A0^T)^{-1/2} q|_4^4] under x0 ~ BG(theta):
/// 3 theta (1-theta) |zeta|_4^4 + 3 theta^2 |zeta|_2^4.
inline double population_expectation(const Matrix& A, const Vector& q, double theta) {
  if (!(theta > 0.0 && theta < 1.0)) throw ParameterError("population_expectation", "theta must lie in (0,1)");
  detail::require_q(q, A.rows(), "population_expectation");
  const Vector zeta = A.transpose() * q;
  const double n2 = zeta.squaredNorm();
  return 3.0 * theta * (1.0 - theta) * l4_4(zeta) + 3.0 * theta * theta * n2 * n2;
}

struct RegionValues {
  double lhs = 0.0;       ///< |zeta|_4^6
  double rhs_R = 0.0;     ///< C mu kappa^2 |zeta|_3^3
  double rhs_Rhat = 0.0;  ///< C mu kappa^2
  bool in_R = false;
  bool in_Rhat = false;
};

inline RegionValues region_values(const Matrix& A, double mu, double kappa, const Vector& q, double c_star) {
  if (!(c_star > 0.0)) throw ParameterError("region_values", "C_star must be positive");
  detail::require_q(q, A.rows(), "region_values");
  const Vector zeta = A.transpose() * q;
  RegionValues r;
  r.lhs = std::pow(l4_4(zeta), 1.5);
  r.rhs_Rhat = c_star * mu * kappa * kappa;
  r.rhs_R = r.rhs_Rhat * l3_3(zeta);
  r.in_R = r.lhs >= r.rhs_R;
  r.in_Rhat = r.lhs >= r.rhs_Rhat;
  return r;
}

inline RegionValues region_values(const ShiftModel& s, const Vector& q, double c_star) {
  return region_values(s.A, s.mu, s.kappa, q, c_star);
}

struct Interval {
  double center = 0.0;
  double half_width = 0.0;
  double lo() const noexcept { return center - half_width; }
  double hi() const noexcept { return center + half_width; }
  bool contains(double x) const noexcept { return x >= lo() && x <= hi(); }
};

/// Intervals {+sqrt(alpha), 0, -sqrt(alpha)} +- 2|beta|/alpha, one for each
/// real root of x (alpha - x^2) - beta = 0, valid when |beta| < alpha^{3/2}/4.
inline std::array<Interval, 3> cubic_root_intervals(double alpha, double beta) {
  if (!(alpha > 0.0)) throw DomainError("cubic_root_intervals", "alpha must be positive");
  if (!(std::abs(beta) < 0.25 * std::pow(alpha, 1.5)))
    throw DomainError("cubic_root_intervals", "|beta| = " + detail::fmt_g(std::abs(beta)) + " must be below alpha^{3/2}/4 = " +
                                                  detail::fmt_g(0.25 * std::pow(alpha, 1.5)));
  const double r = std::sqrt(alpha), w = 2.0 * std::abs(beta) / alpha;
  return {Interval{r, w}, Interval{0.0, w}, Interval{-r, w}};
}

enum class StationaryKind { LocalMin, Saddle, Unresolved };

inline std::string to_string(StationaryKind k) {
  switch (k) {
    case StationaryKind::LocalMin: return "local_min";
    case StationaryKind::Saddle: return "saddle";
    case StationaryKind::Unresolved: return "unresolved";
  }
  return "unresolved";
}

struct StationaryReport {
  Vector zeta;
  Vector alpha;
  Vector beta;
  double spike_threshold = 0.0;
  std::vector<Index> spikes;
  StationaryKind kind = StationaryKind::Unresolved;

  // LocalMin
  Index local_min_column = -1;
  double alignment = 0.0;
  double alignment_bound = 0.0;
  bool meets_alignment_bound = false;

  // Saddle
  Vector curvature_direction;
  double curvature = 0.0;

  // Unresolved
  std::string reason;

  bool in_region = false;
};

struct ClassifyOptions {
  double c_star = 10.0;
  double grad_tol = -1.0;       ///< <= 0 selects 1e-8 max(1, |zeta|_4^4)
  bool check_gradient = true;   ///< off when classifying points that are stationary for psi, not phi
};

/// Worst excess of dist(zeta_i, {0, +-sqrt(alpha_i)}) over 2|beta_i|/alpha_i;
/// <= 0 means every entry lies in its predicted interval.
inline double trinarity_excess(const StationaryReport& r) {
  double worst = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < r.zeta.size(); ++i) {
    const double z = r.zeta[i];
    double slack = 0.0, d = std::abs(z);
    if (std::isfinite(r.alpha[i])) {
      const double s = std::sqrt(r.alpha[i]);
      d = std::min({std::abs(z), std::abs(z - s), std::abs(z + s)});
      slack = 2.0 * std::abs(r.beta[i]) / r.alpha[i];
    }
    worst = std::max(worst, d - slack);
  }
  return worst;
}

/// Analyses a stationary point of phi: spike set, (alpha_i, beta_i), and a
/// local-min / saddle / unresolved verdict.
inline StationaryReport classify_stationary(const ShiftModel& s, const Vector& q, const ClassifyOptions& opt = {}) {
  const Matrix& A = s.A;
  detail::require_q(q, A.rows(), "classify_stationary");
  StationaryReport r;
  r.zeta = A.transpose() * q;
  const double z4 = l4_4(r.zeta), z3 = l3_3(r.zeta);

  if (opt.check_gradient) {
    const double tol = opt.grad_tol > 0.0 ? opt.grad_tol : 1e-8 * std::max(1.0, z4);
    const double gn = grad_phi(A, q).norm();
    if (gn > tol)
      throw ContractError("classify_stationary", "gradient norm " + detail::fmt_g(gn) + " exceeds grad_tol " + detail::fmt_g(tol));
  }

  const Index n = A.cols();
  const Matrix C = A.transpose() * A;
  const Vector z3v = r.zeta.array().cube();
  const Vector cross = C * z3v;
  r.alpha.resize(n);
  r.beta.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double nn = C(i, i);
    if (nn > 0.0) {
      r.alpha[i] = z4 / nn;
      r.beta[i] = (cross[i] - nn * z3v[i]) / nn;
    } else {
      r.alpha[i] = std::numeric_limits<double>::infinity();
      r.beta[i] = 0.0;
    }
  }
  r.spike_threshold = std::max(2.0 * s.mu * z3 / z4, 1e-12);
  for (Index i = 0; i < n; ++i)
    if (std::abs(r.zeta[i]) > r.spike_threshold) r.spikes.push_back(i);

  const RegionValues reg = region_values(s, q, opt.c_star);
  r.in_region = reg.in_R;
  if (!reg.in_R) {
    r.kind = StationaryKind::Unresolved;
    r.reason = "outside region";
    return r;
  }
  if (r.spikes.empty()) {
    r.kind = StationaryKind::Unresolved;
    r.reason = "no spike inside region";
    return r;
  }
  if (r.spikes.size() == 1) {
    const Index l = r.spikes.front();
    r.kind = StationaryKind::LocalMin;
    r.local_min_column = l;
    r.alignment = std::abs(q.dot(A.col(l))) / std::sqrt(C(l, l));
    r.alignment_bound = 1.0 - 2.0 / (opt.c_star * s.kappa * s.kappa);
    r.meets_alignment_bound = r.alignment >= r.alignment_bound;
    return r;
  }

  // Two largest spikes; minimise the Rayleigh quotient of Hess phi over the
  // tangent projection of span(a_l, a_l').
  std::vector<Index> top = r.spikes;
  std::partial_sort(top.begin(), top.begin() + 2, top.end(),
                    [&](Index a, Index b) { return std::abs(r.zeta[a]) > std::abs(r.zeta[b]); });
  const Matrix H = hess_phi(A, q);
  Matrix Bm(A.rows(), 2);
  Index cols = 0;
  for (int j = 0; j < 2; ++j) {
    Vector v = tangent_project(q, A.col(top[j]));
    for (Index c = 0; c < cols; ++c) v -= Bm.col(c).dot(v) * Bm.col(c);
    const double nv = v.norm();
    if (nv > 1e-10 * A.col(top[j]).norm()) Bm.col(cols++) = v / nv;
  }
  if (cols == 0) {
    r.kind = StationaryKind::Unresolved;
    r.reason = "spike span is normal to the sphere";
    return r;
  }
  const Matrix Q = Bm.leftCols(cols);
  const SymEigen e = sym_eig(Matrix(0.5 * (Q.transpose() * H * Q + (Q.transpose() * H * Q).transpose())));
  r.curvature = e.eigvals[cols - 1];
  r.curvature_direction = Q * e.eigvecs.col(cols - 1);
  r.curvature_direction.normalize();
  if (r.curvature < 0.0) {
    r.kind = StationaryKind::Saddle;
  } else {
    r.kind = StationaryKind::Unresolved;
    r.reason = "no negative curvature in spike span";
  }
  return r;
}

struct EigPair {
  double lambda = 0.0;
  Vector v;
};

/// Smallest eigenpair of a symmetric operator restricted to the tangent space
/// at q. Lanczos with full reorthogonalisation, started from a fixed
/// pseudo-random tangent vector; converged when |Hv - lambda v| <= tol * scale
/// (scale = largest Ritz magnitude, floored at 1e-300). `lambda` is the
/// Rayleigh quotient of the returned v.
template <class Op>
EigPair min_tangent_eig(const Op& hess_op, const Vector& q, double tol = 1e-6, int max_iters = 5000) {
  const Index k = q.size();
  require_dims(k >= 2, "min_tangent_eig", "need dimension >= 2");
  if (!(tol > 0.0)) throw ParameterError("min_tangent_eig", "tol must be positive");
  const Index n = k - 1;
  Rng rng(0x5eed1a2c705ULL);
  auto fresh = [&](const Matrix& V, Index used) -> Vector {
    for (int attempt = 0; attempt < 16; ++attempt) {
      Vector x(k);
      for (Index i = 0; i < k; ++i) x[i] = rng.normal();
      x = tangent_project(q, x);
      for (int pass = 0; pass < 2; ++pass)
        for (Index c = 0; c < used; ++c) x -= V.col(c).dot(x) * V.col(c);
      x = tangent_project(q, x);
      const double nx = x.norm();
      if (nx > 1e-8) return x / nx;
    }
    throw IterationError("min_tangent_eig", "could not build a start vector");
  };

  Matrix V(k, n);
  Vector alpha(n), beta(n);
  V.col(0) = fresh(V, 0);
  Index j = 0;
  int applications = 0;
  double scale = 0.0;
  EigPair best;
  while (true) {
    Vector w = hess_op(Vector(V.col(j)));
    ++applications;
    w = tangent_project(q, w);
    alpha[j] = V.col(j).dot(w);
    for (int pass = 0; pass < 2; ++pass)
      for (Index c = 0; c <= j; ++c) w -= V.col(c).dot(w) * V.col(c);
    w = tangent_project(q, w);
    const double b = w.norm();

    // Ritz pair of the current tridiagonal block.
    const Index sz = j + 1;
    Matrix T = Matrix::Zero(sz, sz);
    for (Index i = 0; i < sz; ++i) {
      T(i, i) = alpha[i];
      if (i + 1 < sz) T(i, i + 1) = T(i + 1, i) = beta[i];
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(T);
    scale = std::max({scale, std::abs(es.eigenvalues()[0]), std::abs(es.eigenvalues()[sz - 1]), 1e-300});
    const double ritz_res = b * std::abs(es.eigenvectors()(sz - 1, 0));
    const bool complete = sz == n;
    const bool breakdown = b <= 1e-13 * scale;
    if (complete || ritz_res <= 0.1 * tol * scale) {
      Vector v = V.leftCols(sz) * es.eigenvectors().col(0);
      v = tangent_project(q, v);
      v.normalize();
      const Vector hv = tangent_project(q, hess_op(v));
      ++applications;
      const double lam = v.dot(hv);
      const double res = (hv - lam * v).norm();
      best = {lam, v};
      if (res <= tol * scale) return best;
      if (complete)
        throw IterationError("min_tangent_eig", "residual " + detail::fmt_g(res) + " above tolerance on the full tangent space (operator not symmetric?)");
    }
    if (applications >= max_iters)
      throw IterationError("min_tangent_eig", "no convergence after " + std::to_string(max_iters) + " operator applications");
    if (breakdown) {
      beta[j] = 0.0;
      V.col(j + 1) = fresh(V, j + 1);
    } else {
      beta[j] = b;
      V.col(j + 1) = w / b;
    }
    ++j;
  }
}

struct GapMeasurement {
  double deviation = 0.0;
  double bound = 0.0;
  double ratio = 0.0;
};

/// |grad psi - 3(1-theta)/(theta m^2) grad phi| against
/// (3 c/(2 kappa^2)) ((1-theta)/(theta m^2)) |zeta|_4^6, c = 1/C_star.
inline GapMeasurement measure_gradient_gap(const ObservationModel& mo, const ShiftModel& s, double theta, const Vector& q,
                                           double c_star = 10.0) {
  if (!(theta > 0.0 && theta < 1.0)) throw ParameterError("measure_gradient_gap", "theta must lie in (0,1)");
  const double m = static_cast<double>(mo.m());
  const double scale = 3.0 * (1.0 - theta) / (theta * m * m);
  GapMeasurement g;
  g.deviation = (grad_psi(mo, q) - scale * grad_phi(s.A, q)).norm();
  const double z4 = l4_4(s.A.transpose() * q);
  const double c = 1.0 / c_star;
  g.bound = (3.0 * c / (2.0 * s.kappa * s.kappa)) * ((1.0 - theta) / (theta * m * m)) * std::pow(z4, 1.5);
  g.ratio = g.deviation / g.bound;
  return g;
}

/// Operator norm (50 power iterations) of Hess psi - 3(1-theta)/(theta m^2) Hess phi
/// on the tangent space, against 3(1 - 6c - 36c^2 - 24c^3)((1-theta)/(theta m^2))|zeta|_4^4.
inline GapMeasurement measure_hessian_gap(const ObservationModel& mo, const ShiftModel& s, double theta, const Vector& q,
                                          double c_star = 10.0) {
  if (!(theta > 0.0 && theta < 1.0)) throw ParameterError("measure_hessian_gap", "theta must lie in (0,1)");
  const double m = static_cast<double>(mo.m());
  const double scale = 3.0 * (1.0 - theta) / (theta * m * m);
  const PsiPoint pt(mo, q);
  const Matrix Hphi = hess_phi(s.A, q);
  auto diff = [&](const Vector& v) { return Vector(pt.hess_vec(mo, v) - scale * (Hphi * v)); };
  Rng rng(0x9a9e5eedULL);
  Vector v(q.size());
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  v = normalized(tangent_project(q, v), "measure_hessian_gap");
  double est = 0.0;
  for (int it = 0; it < 50; ++it) {
    Vector w = tangent_project(q, diff(v));
    est = w.norm();
    if (!(est > 0.0)) break;
    v = w / est;
  }
  GapMeasurement g;
  g.deviation = est;
  const double c = 1.0 / c_star;
  g.bound = 3.0 * (1.0 - 6.0 * c - 36.0 * c * c - 24.0 * c * c * c) * ((1.0 - theta) / (theta * m * m)) * l4_4(s.A.transpose() * q);
  g.ratio = g.deviation / g.bound;
  return g;
}

struct WhiteningGap {
  double delta = 0.0;
  double bound = 0.0;
};

/// delta = |(1/(theta m)) X0 X0^T - I|_2 with X0 X0^T the (2k-1)-square
/// Toeplitz Gram of the cyclic autocorrelation of x0; bound = 10 sqrt(k log m / m).
inline WhiteningGap measure_whitening_gap(const SparseSignal& x0, Index k) {
  const Index m = x0.m(), w = 2 * k - 1;
  require_dims(k >= 1 && m > 2 * k, "measure_whitening_gap", "need m > 2k");
  require_dims(w <= m, "measure_whitening_gap", "window longer than signal");
  const Matrix G = toeplitz_symmetric(cyclic_autocorrelation(x0.values(), w)) / (x0.theta * static_cast<double>(m)) -
                   Matrix::Identity(w, w);
  const SymEigen e = sym_eig(G);
  WhiteningGap g;
  g.delta = std::max(std::abs(e.eigvals[0]), std::abs(e.eigvals[w - 1]));
  g.bound = 10.0 * std::sqrt(static_cast<double>(k) * std::log(static_cast<double>(m)) / static_cast<double>(m));
  return g;
}

}  // namespace ssbd
