// common.hpp
// Shared scalar types, error hierarchy and small linear-algebra helpers.
//
// Units: hbar = 1 everywhere. Every equation of motion in this library is
// written as i d/dt psi = H psi.

#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace geotransport {

using Complex = std::complex<double>;
using Matrix2c = Eigen::Matrix2cd;
using Vector2c = Eigen::Vector2cd;
using MatrixXc = Eigen::MatrixXcd;
using VectorXc = Eigen::VectorXcd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr Complex kI{0.0, 1.0};

// Base of all library errors. The CLI maps each kind onto an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input: unnormalized kets, non-Hermitian operators, malformed config.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Requested problem does not fit the configured size limits.
class ResourceError : public Error {
 public:
  using Error::Error;
};

// Evaluation outside the chart where a quantity is defined (poles).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Integrator drifted past its conservation gate.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; message carries the line number.
class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

namespace pauli {

inline Matrix2c identity() { return Matrix2c::Identity(); }

inline Matrix2c x() {
  Matrix2c m;
  m << 0, 1, 1, 0;
  return m;
}

inline Matrix2c y() {
  Matrix2c m;
  m << 0, -kI, kI, 0;
  return m;
}

// sigma_z |0> = +|0>, sigma_z |1> = -|1>.
inline Matrix2c z() {
  Matrix2c m;
  m << 1, 0, 0, -1;
  return m;
}

}  // namespace pauli

// Largest entry of |M - M^dagger|.
template <typename Derived>
double hermiticity_defect(const Eigen::MatrixBase<Derived>& m) {
  if (m.rows() != m.cols()) return std::numeric_limits<double>::infinity();
  if (m.size() == 0) return 0.0;
  return (m - m.adjoint()).cwiseAbs().maxCoeff();
}

inline void require_hermitian(const Eigen::Ref<const MatrixXc>& m, double tol,
                              const std::string& what) {
  const double defect = hermiticity_defect(m);
  if (!(defect <= tol)) {
    throw ValidationError(what + " is not Hermitian (max |M - M^dagger| = " +
                          std::to_string(defect) + ")");
  }
}

// Reduce an angle into [0, 2pi).
inline double wrap_angle(double phi) {
  double r = std::fmod(phi, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  if (r >= kTwoPi) r = 0.0;
  return r;
}

// Representative of an angle difference in (-pi, pi].
inline double wrap_difference(double dphi) {
  double r = wrap_angle(dphi);
  if (r > kPi) r -= kTwoPi;
  return r;
}

}  // namespace geotransport
