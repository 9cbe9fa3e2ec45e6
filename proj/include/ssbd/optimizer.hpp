#pragma once

// Riemannian gradient descent on the unit sphere with Armijo backtracking and
// deterministic negative-curvature escape steps.

#include <ssbd/core.hpp>
#include <ssbd/landscape.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ssbd {

struct SolveOptions {
  int max_iters = 2000;
  double grad_tol = 1e-8;
  double curvature_tol = 1e-8;
  double armijo_c = 1e-4;
  double backtrack_factor = 0.5;
  double initial_step = 1.0;
  int escape_check_period = 10;
  double min_eig_tol = 1e-6;
  std::uint64_t seed = 0;
  bool record_iterates = false;

  void validate() const {
    auto pos = [](double v, const char* name) {
      if (!(v > 0.0)) throw ParameterError("SolveOptions", std::string(name) + " must be positive");
    };
    if (max_iters < 0) throw ParameterError("SolveOptions", "max_iters must be >= 0");
    pos(grad_tol, "grad_tol");
    pos(curvature_tol, "curvature_tol");
    pos(armijo_c, "armijo_c");
    pos(initial_step, "initial_step");
    pos(min_eig_tol, "min_eig_tol");
    if (!(armijo_c < 1.0)) throw ParameterError("SolveOptions", "armijo_c must be < 1");
    if (!(backtrack_factor > 0.0 && backtrack_factor < 1.0))
      throw ParameterError("SolveOptions", "backtrack_factor must lie in (0,1)");
    if (escape_check_period < 1) throw ParameterError("SolveOptions", "escape_check_period must be >= 1");
  }
};

enum class SolveStatus { ConvergedSecondOrder, ConvergedFirstOrder, MaxIters };

inline std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::ConvergedSecondOrder: return "converged_second_order";
    case SolveStatus::ConvergedFirstOrder: return "converged_first_order";
    case SolveStatus::MaxIters: return "max_iters";
  }
  return "max_iters";
}

struct EscapeEvent {
  int iteration = 0;
  double lambda_min = 0.0;
};

struct OptReport {
  Vector q_final;
  std::vector<double> objective_trace;
  std::vector<double> grad_norm_trace;
  std::vector<double> escape_lambda_trace;  ///< NaN except on escape iterations
  std::vector<EscapeEvent> escape_events;
  std::vector<Vector> iterates;             ///< filled when record_iterates
  SolveStatus status = SolveStatus::MaxIters;
  double final_lambda_min = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
};

/// Line search could not decrease the objective down to step 1e-16.
class StallError : public NumericalError {
 public:
  StallError(const std::string& op, const std::string& msg, std::vector<double> trace)
      : NumericalError(op, msg), trace_(std::move(trace)) {}
  const std::vector<double>& objective_trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

/// P_S[q + step] for a tangent step.
inline Vector retract(const Vector& q, const Vector& step) {
  require_dims(q.size() == step.size(), "retract", "q and step differ in length");
  if (std::abs(q.dot(step)) > 1e-8 * std::max(1.0, step.norm()))
    throw ContractError("retract", "step is not tangent at q");
  return normalized(q + step, "retract");
}

namespace detail {
/// sum((z + dz)^4 - z^4) without cancellation against sum(z^4).
inline double quartic_difference(const Vector& z, const Vector& dz) {
  const auto zn = z.array() + dz.array();
  return (dz.array() * (zn + z.array()) * (zn.square() + z.array().square())).sum();
}

/// Change of sum(z^4) / |q|^4 (the scale-invariant extension off the sphere)
/// when q -> q + dq and z -> z + dz; s4 = sum(z^4). Rounding of |q + dq| away
/// from 1 cancels to first order.
inline double homogeneous_quartic_difference(const Vector& z, const Vector& dz, double s4, const Vector& q, const Vector& dq) {
  const double qq = q.squaredNorm();
  const double nu = (2.0 * q.dot(dq) + dq.squaredNorm()) / qq;
  return (quartic_difference(z, dz) - s4 * nu * (2.0 + nu)) / (qq * qq * (1.0 + nu) * (1.0 + nu));
}
}  // namespace detail

/// phi(q) = -(1/4)|A^T q|_4^4 as an optimizer objective.
struct PhiObjective {
  const Matrix* A;
  explicit PhiObjective(const Matrix& a) : A(&a) {}
  double value(const Vector& q) const { return phi(*A, q); }
  /// phi(qn) - phi(q) from d zeta = A^T (qn - q), accurate relative to the difference itself.
  double difference(const Vector& q, const Vector& qn) const {
    const Vector dq = qn - q;
    const Vector z = A->transpose() * q, dz = A->transpose() * dq;
    return -0.25 * detail::homogeneous_quartic_difference(z, dz, l4_4(z), q, dq);
  }
  Vector gradient(const Vector& q) const { return grad_phi(*A, q); }
  Vector hess_vec(const Vector& q, const Vector& v) const {
    const Vector zeta = A->transpose() * q;
    const Vector pv = tangent_project(q, v);
    const Vector w = (A->transpose() * pv).array() * zeta.array().square();
    return tangent_project(q, Vector(-(3.0 * (*A) * w) + l4_4(zeta) * pv));
  }
};

/// scale * psi(q); eta is cached for the most recent point.
class PsiObjective {
 public:
  explicit PsiObjective(const ObservationModel& mo, double scale = 1.0) : mo_(&mo), scale_(scale) {
    if (!(scale > 0.0)) throw ParameterError("PsiObjective", "scale must be positive");
  }
  double value(const Vector& q) const { return scale_ * at(q).value(*mo_); }
  double difference(const Vector& q, const Vector& qn) const {
    const PsiPoint& p = at(q);
    const Vector dq = qn - q;
    const Vector de = correlate_windows(mo_->y.y, mo_->B * dq);
    return -scale_ * detail::homogeneous_quartic_difference(p.eta, de, p.eta4, q, dq) / (4.0 * static_cast<double>(mo_->m()));
  }
  Vector gradient(const Vector& q) const { return scale_ * at(q).gradient(*mo_); }
  Vector hess_vec(const Vector& q, const Vector& v) const { return scale_ * at(q).hess_vec(*mo_, tangent_project(q, v)); }
  double scale() const noexcept { return scale_; }

 private:
  const PsiPoint& at(const Vector& q) const {
    if (!cache_ || cache_->q.size() != q.size() || !(cache_->q.array() == q.array()).all()) cache_.emplace(*mo_, q);
    return *cache_;
  }
  const ObservationModel* mo_;
  double scale_;
  mutable std::optional<PsiPoint> cache_;
};

namespace detail {
template <class Objective>
double objective_difference(const Objective& obj, const Vector& q, const Vector& qn, double f) {
  if constexpr (requires { obj.difference(q, qn); })
    return obj.difference(q, qn);
  else
    return obj.value(qn) - f;
}

inline bool below_noise(double predicted_decrease, double f) {
  return predicted_decrease < 8.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f));
}
}  // namespace detail

/// Descent with escape. The objective exposes value(q), gradient(q) (Riemannian)
/// and hess_vec(q, v) (Riemannian, tangent v); an optional difference(q, qn)
/// returning f(qn) - f(q) lets the line search resolve decreases far below
/// eps |f|. The objective trace accumulates those differences from f(q0).
template <class Objective>
OptReport descend(const Objective& obj, const Vector& q0, const SolveOptions& opts = {}) {
  opts.validate();
  constexpr bool has_difference = requires(const Objective& o, const Vector& a) { o.difference(a, a); };
  OptReport rep;
  Vector q = normalized(q0, "descend");
  double f = obj.value(q);
  Vector g = obj.gradient(q);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto record = [&](double esc) {
    rep.objective_trace.push_back(f);
    rep.grad_norm_trace.push_back(g.norm());
    rep.escape_lambda_trace.push_back(esc);
    if (opts.record_iterates) rep.iterates.push_back(q);
  };
  record(nan);

  auto min_eig = [&](const Vector& at) -> std::optional<EigPair> {
    try {
      return min_tangent_eig([&](const Vector& v) { return Vector(obj.hess_vec(at, v)); }, at, opts.curvature_tol);
    } catch (const IterationError&) {
      return std::nullopt;
    }
  };
  auto stall = [&](const char* what) {
    throw StallError("descend", std::string(what) + " line search made no progress at step 1e-16", rep.objective_trace);
  };

  double t_prev = opts.initial_step;
  int last_check = -opts.escape_check_period;
  for (int it = 0; it < opts.max_iters; ++it) {
    const double gn = g.norm();
    std::optional<EigPair> eig;
    if (gn <= opts.grad_tol) {
      eig = min_eig(q);
      last_check = it;
      if (!eig) {
        rep.status = SolveStatus::ConvergedFirstOrder;
        break;
      }
      rep.final_lambda_min = eig->lambda;
      if (eig->lambda >= -opts.min_eig_tol) {
        rep.status = SolveStatus::ConvergedSecondOrder;
        break;
      }
    } else if (gn <= 10.0 * opts.grad_tol && it - last_check >= opts.escape_check_period) {
      eig = min_eig(q);
      last_check = it;
      if (eig && eig->lambda >= -opts.min_eig_tol) eig.reset();
    }

    if (eig) {
      // Negative-curvature step along +-v, sign by lower objective at the first trial.
      const double lam = eig->lambda;
      double t = std::abs(lam);
      Vector v = eig->v;
      {
        const Vector qp = retract(q, t * v), qm = retract(q, -t * v);
        if (detail::objective_difference(obj, q, qm, f) < detail::objective_difference(obj, q, qp, f)) v = -v;
      }
      while (true) {
        const Vector qn = retract(q, t * v);
        const double df = detail::objective_difference(obj, q, qn, f);
        const double pred = opts.armijo_c * 0.5 * t * t * std::abs(lam);
        const bool ok = (has_difference ? pred < 1e-300 : detail::below_noise(pred, f)) ? df < 0.0 : df <= -pred;
        if (ok) {
          q = qn;
          f += df;
          break;
        }
        t *= opts.backtrack_factor;
        if (t < 1e-16) stall("escape");
      }
      g = obj.gradient(q);
      rep.escape_events.push_back({it, lam});
      record(lam);
      rep.iterations = it + 1;
      t_prev = opts.initial_step;
      continue;
    }

    double t = std::min(opts.initial_step, t_prev / opts.backtrack_factor);
    const double g2 = gn * gn;
    while (true) {
      const Vector qn = retract(q, -t * g);
      const double df = detail::objective_difference(obj, q, qn, f);
      const double pred = opts.armijo_c * t * g2;
      const bool ok = has_difference ? (df <= -pred || (pred < 1e-300 && df <= 0.0))
                                     : (detail::below_noise(pred, f) ? df <= 0.0 : df <= -pred);
      if (ok) {
        q = qn;
        f += df;
        break;
      }
      t *= opts.backtrack_factor;
      if (t < 1e-16) stall("gradient");
    }
    t_prev = t;
    g = obj.gradient(q);
    record(nan);
    rep.iterations = it + 1;
  }
  rep.q_final = q;
  return rep;
}

}  // namespace ssbd
