#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ssbd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Base of every exception thrown by the library. `what()` is prefixed with
/// the name of the operation that failed.
class Error : public std::runtime_error {
 public:
  Error(const std::string& op, const std::string& msg)
      : std::runtime_error(op + ": " + msg), op_(op) {}
  const std::string& operation() const noexcept { return op_; }

 private:
  std::string op_;
};

// Input/contract failures.
class DimensionError : public Error { using Error::Error; };
class ParameterError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class DomainError : public Error { using Error::Error; };
class ParseError : public Error { using Error::Error; };
class BudgetError : public Error { using Error::Error; };

// Numerical failures (the CLI maps these to exit code 2).
class NumericalError : public Error { using Error::Error; };
class SingularityError : public NumericalError { using NumericalError::NumericalError; };
class IterationError : public NumericalError { using NumericalError::NumericalError; };
class DegenerateError : public NumericalError { using NumericalError::NumericalError; };

inline void require_dims(bool ok, const char* op, const std::string& msg) {
  if (!ok) throw DimensionError(op, msg);
}

/// P_S[v] = v / ||v||.
inline Vector normalized(const Vector& v, const char* op = "normalize") {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw DegenerateError(op, "cannot project a zero vector onto the sphere");
  return v / n;
}

/// Projection onto the tangent space of the unit sphere at q.
inline Vector tangent_project(const Vector& q, const Vector& v) { return v - q.dot(v) * q; }

inline double lp_pow(const Vector& v, int p) {
  double s = 0.0;
  for (Index i = 0; i < v.size(); ++i) s += std::pow(std::abs(v[i]), p);
  return s;
}

/// ||v||_4^4
inline double l4_4(const Vector& v) { return v.array().square().square().sum(); }

/// ||v||_3^3
inline double l3_3(const Vector& v) { return v.array().abs().cube().sum(); }

}  // namespace ssbd
