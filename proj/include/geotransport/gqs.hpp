// gqs.hpp
// Geometric quantum states of a qubit: weighted particles on the Bloch
// square, the (p, phi) chart, Fubini-Study distance, and reconstruction of
// density matrices and expectation values.
//
// Chart: |psi(p, phi)> = sqrt(1 - p) |0> + sqrt(p) e^{i phi} |1>, so p = 1 is
// the |1> pole and the Bloch z component is 1 - 2p. Volumes are measured
// with dV = dp dphi / (2 pi), under which the uniform distribution has
// density 1.

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "geotransport/common.hpp"
#include "geotransport/spinchain.hpp"

namespace geotransport {

// Particles at or below this weight have no meaningful coordinates.
inline constexpr double kWeightFloor = 1e-14;
// Within this distance of a pole phi is gauge-fixed to 0.
inline constexpr double kPoleGauge = 1e-12;

struct BlochPoint {
  double p = 0.0;
  double phi = 0.0;

  // Clamps p into [0, 1], wraps phi and applies the pole gauge.
  static BlochPoint canonical(double p, double phi) {
    BlochPoint z;
    z.p = std::clamp(p, 0.0, 1.0);
    z.phi = (z.p < kPoleGauge || 1.0 - z.p < kPoleGauge) ? 0.0 : wrap_angle(phi);
    return z;
  }

  bool at_pole(double margin) const { return p < margin || 1.0 - p < margin; }
};

inline Vector2c embed(const BlochPoint& z) {
  return Vector2c(std::sqrt(1.0 - z.p), std::polar(std::sqrt(z.p), z.phi));
}

// (x, y, z) Bloch vector with z = 1 - 2p.
inline Eigen::Vector3d bloch_vector(const BlochPoint& z) {
  const double r = 2.0 * std::sqrt(z.p * (1.0 - z.p));
  return {r * std::cos(z.phi), r * std::sin(z.phi), 1.0 - 2.0 * z.p};
}

inline BlochPoint to_bloch(const Vector2c& chi) {
  const double n0 = std::norm(chi[0]);
  const double n1 = std::norm(chi[1]);
  const double total = n0 + n1;
  if (!(total > 0.0)) throw ValidationError("cannot chart the zero vector");
  return BlochPoint::canonical(n1 / total, std::arg(chi[1]) - std::arg(chi[0]));
}

// arccos |<a|b>|, evaluated as atan2(|b - <a|b> a|, |<a|b>|) so it stays
// accurate for nearby points.
inline double fs_distance(const BlochPoint& a, const BlochPoint& b) {
  const Vector2c va = embed(a);
  const Vector2c vb = embed(b);
  const Complex overlap = va.dot(vb);
  const double orthogonal = (vb - overlap * va).norm();
  return std::atan2(orthogonal, std::abs(overlap));
}

// Same distance from the coordinate expansion of |<a|b>|^2.
inline double fs_distance_coordinates(const BlochPoint& a, const BlochPoint& b) {
  const double cross = 2.0 * std::sqrt(a.p * (1.0 - a.p)) * std::sqrt(b.p * (1.0 - b.p)) *
                       std::cos(a.phi - b.phi);
  const double overlap2 = 1.0 - (a.p + b.p) + 2.0 * a.p * b.p + cross;
  return std::acos(std::sqrt(std::clamp(overlap2, 0.0, 1.0)));
}

struct Particle {
  double x = 0.0;
  BlochPoint gamma;
  Vector2c chi = Vector2c(1.0, 0.0);
  // False when x <= kWeightFloor; gamma is then the placeholder (0, 0).
  bool defined = true;
};

struct GeometricQuantumState {
  std::vector<Particle> particles;
  double time = 0.0;

  std::size_t size() const { return particles.size(); }

  double total_weight() const {
    double sum = 0.0;
    for (const auto& particle : particles) sum += particle.x;
    return sum;
  }

  std::size_t undefined_count() const {
    return static_cast<std::size_t>(std::count_if(
        particles.begin(), particles.end(), [](const Particle& q) { return !q.defined; }));
  }
};

// One particle per column of an (unnormalized-ket) matrix: x = |column|^2,
// chi = column / |column|.
inline GeometricQuantumState gqs_from_columns(const MatrixXc& columns, double time) {
  if (columns.rows() != 2) {
    throw ValidationError("geometric quantum states are implemented for qubits only");
  }
  GeometricQuantumState gqs;
  gqs.time = time;
  gqs.particles.resize(static_cast<std::size_t>(columns.cols()));
  for (Eigen::Index alpha = 0; alpha < columns.cols(); ++alpha) {
    Particle& particle = gqs.particles[static_cast<std::size_t>(alpha)];
    const Vector2c column = columns.col(alpha);
    particle.x = column.squaredNorm();
    if (particle.x > 0.0) particle.chi = column / std::sqrt(particle.x);
    particle.defined = particle.x > kWeightFloor;
    particle.gamma = particle.defined ? to_bloch(particle.chi) : BlochPoint{};
  }
  return gqs;
}

inline GeometricQuantumState extract_gqs(const JointState& state) {
  return gqs_from_columns(state.amplitudes(), state.time());
}

struct DensityMatrix {
  Matrix2c entries = Matrix2c::Zero();

  double trace() const { return entries.trace().real(); }
  double hermiticity_defect() const { return geotransport::hermiticity_defect(entries); }
  double min_eigenvalue() const {
    Eigen::SelfAdjointEigenSolver<Matrix2c> solver(entries);
    return solver.eigenvalues().minCoeff();
  }
};

inline DensityMatrix density_matrix(const GeometricQuantumState& gqs) {
  DensityMatrix rho;
  for (const auto& particle : gqs.particles) {
    rho.entries += particle.x * (particle.chi * particle.chi.adjoint());
  }
  // Hermitian up to rounding; symmetrize so the invariant holds exactly.
  rho.entries = 0.5 * (rho.entries + rho.entries.adjoint()).eval();
  return rho;
}

inline double expectation(const GeometricQuantumState& gqs, const Matrix2c& observable) {
  require_hermitian(observable, 1e-12, "observable");
  double value = 0.0;
  for (const auto& particle : gqs.particles) {
    value += particle.x * particle.chi.dot(observable * particle.chi).real();
  }
  return value;
}

}  // namespace geotransport
