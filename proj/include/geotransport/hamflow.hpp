// hamflow.hpp
// Hamiltonian mechanics on the qubit state space in canonical (p, phi)
// coordinates: energy function, Poisson bracket, Hamiltonian vector field,
// fixed-step RK4 trajectories, and the rigidity / Liouville checks that an
// isolated (unitary) qubit evolution must satisfy.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "geotransport/common.hpp"
#include "geotransport/gqs.hpp"

namespace geotransport {

// Central-difference step and pole exclusion margin for all numerical
// derivatives on the Bloch square.
inline constexpr double kDifferenceStep = 1e-6;
inline constexpr double kPoleMargin = 1e-5;

class EnergyFunction {
 public:
  explicit EnergyFunction(const Matrix2c& h) : h_(h) {
    require_hermitian(h, 1e-12, "qubit Hamiltonian");
    h_ = 0.5 * (h + h.adjoint());
    Eigen::SelfAdjointEigenSolver<Matrix2c> solver(h_);
    omega_ = solver.eigenvalues()[1] - solver.eigenvalues()[0];
  }

  // H = c0 I + cx sx + cy sy + cz sz.
  static EnergyFunction from_pauli(double c0, double cx, double cy, double cz) {
    return EnergyFunction(c0 * pauli::identity() + cx * pauli::x() + cy * pauli::y() +
                          cz * pauli::z());
  }

  const Matrix2c& h() const { return h_; }
  double omega() const { return omega_; }
  bool diagonal() const { return h_(0, 1) == Complex{0.0, 0.0}; }

  // Traceless part as a vector b with H = (tr H / 2) I + b . sigma.
  Eigen::Vector3d field() const {
    return {h_(0, 1).real(), -h_(0, 1).imag(), 0.5 * (h_(0, 0).real() - h_(1, 1).real())};
  }

  // Exact unitary exp(-i H t).
  Matrix2c propagator(double t) const {
    Eigen::SelfAdjointEigenSolver<Matrix2c> solver(h_);
    const Matrix2c& v = solver.eigenvectors();
    Vector2c phases(std::polar(1.0, -solver.eigenvalues()[0] * t),
                    std::polar(1.0, -solver.eigenvalues()[1] * t));
    return v * phases.asDiagonal() * v.adjoint();
  }

 private:
  Matrix2c h_;
  double omega_ = 0.0;
};

// E(p, phi) = (1 - p) H00 + p H11 + 2 sqrt(p (1 - p)) Re(e^{i phi} H01).
inline double energy(const EnergyFunction& ef, double p, double phi) {
  const Matrix2c& h = ef.h();
  const double s = std::sqrt(std::max(0.0, p * (1.0 - p)));
  return (1.0 - p) * h(0, 0).real() + p * h(1, 1).real() +
         2.0 * s * (std::polar(1.0, phi) * h(0, 1)).real();
}

inline double energy(const EnergyFunction& ef, const BlochPoint& z) {
  return energy(ef, z.p, z.phi);
}

using ScalarField = std::function<double(double p, double phi)>;

inline void require_off_pole(double p, const char* what) {
  if (p < kPoleMargin || 1.0 - p < kPoleMargin) {
    throw DomainError(std::string(what) + " is undefined within " +
                      std::to_string(kPoleMargin) + " of a pole (p = " + std::to_string(p) + ")");
  }
}

// {f, g} = df/dp dg/dphi - dg/dp df/dphi, by central differences.
inline double poisson_bracket(const ScalarField& f, const ScalarField& g, const BlochPoint& z) {
  require_off_pole(z.p, "Poisson bracket");
  const double h = kDifferenceStep;
  auto d_p = [&](const ScalarField& u) {
    return (u(z.p + h, z.phi) - u(z.p - h, z.phi)) / (2.0 * h);
  };
  auto d_phi = [&](const ScalarField& u) {
    return (u(z.p, z.phi + h) - u(z.p, z.phi - h)) / (2.0 * h);
  };
  return d_p(f) * d_phi(g) - d_p(g) * d_phi(f);
}

struct PhaseVelocity {
  double dp = 0.0;
  double dphi = 0.0;
};

// Hamilton's equations: dp/dt = dE/dphi, dphi/dt = -dE/dp.
inline PhaseVelocity hamiltonian_field(const EnergyFunction& ef, double p, double phi) {
  const Matrix2c& h = ef.h();
  const Complex rotated = std::polar(1.0, phi) * h(0, 1);
  if (rotated == Complex{0.0, 0.0}) {
    return {0.0, -(h(1, 1).real() - h(0, 0).real())};
  }
  require_off_pole(p, "Hamiltonian vector field");
  const double s = std::sqrt(p * (1.0 - p));
  const double dE_dphi = -2.0 * s * rotated.imag();
  const double dE_dp = h(1, 1).real() - h(0, 0).real() + (1.0 - 2.0 * p) / s * rotated.real();
  return {dE_dphi, -dE_dp};
}

inline PhaseVelocity hamiltonian_field(const EnergyFunction& ef, const BlochPoint& z) {
  return hamiltonian_field(ef, z.p, z.phi);
}

inline double divergence_vH(const EnergyFunction& ef, const BlochPoint& z) {
  if (ef.diagonal()) return 0.0;
  require_off_pole(z.p, "divergence");
  const double h = kDifferenceStep;
  const double ddp = (hamiltonian_field(ef, z.p + h, z.phi).dp -
                      hamiltonian_field(ef, z.p - h, z.phi).dp) / (2.0 * h);
  const double ddphi = (hamiltonian_field(ef, z.p, z.phi + h).dphi -
                        hamiltonian_field(ef, z.p, z.phi - h).dphi) / (2.0 * h);
  return ddp + ddphi;
}

// phi is stored unwrapped; point(i) reduces it into [0, 2pi).
struct Trajectory {
  std::vector<double> p;
  std::vector<double> phi;
  double dt = 0.0;
  bool truncated = false;

  std::size_t size() const { return p.size(); }
  BlochPoint point(std::size_t i) const { return BlochPoint::canonical(p[i], phi[i]); }
};

// Fixed-step classical RK4 on (p, phi). Stops and flags the trajectory as
// truncated if the field becomes singular (pole approach with H01 != 0).
inline Trajectory integrate_flow(const EnergyFunction& ef, const BlochPoint& z0, double dt,
                                 long steps) {
  if (!(dt > 0.0)) throw ValidationError("dt must be positive");
  if (steps < 0) throw ValidationError("steps must be non-negative");
  Trajectory traj;
  traj.dt = dt;
  traj.p.reserve(static_cast<std::size_t>(steps + 1));
  traj.phi.reserve(static_cast<std::size_t>(steps + 1));
  double p = z0.p;
  double phi = z0.phi;
  const bool singular_at_poles = !ef.diagonal();
  auto off_pole = [&](double q) { return !singular_at_poles || (q >= kPoleMargin && 1.0 - q >= kPoleMargin); };
  if (!off_pole(p)) {
    traj.truncated = true;
    return traj;
  }
  traj.p.push_back(p);
  traj.phi.push_back(phi);
  for (long n = 0; n < steps; ++n) {
    double stage_p[4];
    double stage_phi[4];
    const double weights[3] = {0.5, 0.5, 1.0};
    double sp = p;
    double sphi = phi;
    bool ok = true;
    for (int k = 0; k < 4; ++k) {
      if (!off_pole(sp)) {
        ok = false;
        break;
      }
      const PhaseVelocity v = hamiltonian_field(ef, sp, sphi);
      stage_p[k] = v.dp;
      stage_phi[k] = v.dphi;
      if (k < 3) {
        sp = p + weights[k] * dt * v.dp;
        sphi = phi + weights[k] * dt * v.dphi;
      }
    }
    if (!ok) {
      traj.truncated = true;
      return traj;
    }
    p += dt / 6.0 * (stage_p[0] + 2.0 * stage_p[1] + 2.0 * stage_p[2] + stage_p[3]);
    phi += dt / 6.0 * (stage_phi[0] + 2.0 * stage_phi[1] + 2.0 * stage_phi[2] + stage_phi[3]);
    if (!off_pole(p) || p < 0.0 || p > 1.0) {
      traj.truncated = true;
      return traj;
    }
    traj.p.push_back(p);
    traj.phi.push_back(phi);
  }
  return traj;
}

// Exact image of z under exp(-i H t).
inline BlochPoint exact_flow(const EnergyFunction& ef, const BlochPoint& z, double t) {
  return to_bloch(ef.propagator(t) * embed(z));
}

// Smallest min(p, 1 - p) along the unitary orbit through z. The orbit is a
// circle about the field axis, so its z-extent is available in closed form.
inline double orbit_pole_clearance(const EnergyFunction& ef, const BlochPoint& z) {
  const Eigen::Vector3d b = ef.field();
  const Eigen::Vector3d s = bloch_vector(z);
  if (b.norm() == 0.0) return std::min(z.p, 1.0 - z.p);
  const Eigen::Vector3d n = b.normalized();
  const double along = s.dot(n);
  const double radius = std::sqrt(std::max(0.0, 1.0 - along * along));
  const double z_max = std::abs(along * n.z()) + radius * std::sqrt(std::max(0.0, 1.0 - n.z() * n.z()));
  return 0.5 * (1.0 - std::min(1.0, z_max));
}

inline double max_energy_drift(const EnergyFunction& ef, const Trajectory& traj) {
  if (traj.size() == 0) return 0.0;
  const double e0 = energy(ef, traj.p[0], traj.phi[0]);
  double drift = 0.0;
  for (std::size_t i = 1; i < traj.size(); ++i) {
    drift = std::max(drift, std::abs(energy(ef, traj.p[i], traj.phi[i]) - e0));
  }
  return drift;
}

// max over pairs and times of |d_FS(t) - d_FS(0)|.
inline double check_rigidity(const EnergyFunction& ef, const std::vector<BlochPoint>& points,
                             double dt, long steps) {
  if (points.size() < 2) throw ValidationError("rigidity check needs at least two points");
  std::vector<Trajectory> trajs;
  trajs.reserve(points.size());
  for (const auto& z : points) {
    trajs.push_back(integrate_flow(ef, z, dt, steps));
    if (trajs.back().truncated) {
      throw DomainError("trajectory reached a pole; rigidity check undefined");
    }
  }
  double deviation = 0.0;
  for (std::size_t a = 0; a < trajs.size(); ++a) {
    for (std::size_t b = a + 1; b < trajs.size(); ++b) {
      const double d0 = fs_distance(trajs[a].point(0), trajs[b].point(0));
      for (std::size_t t = 1; t < trajs[a].size(); ++t) {
        deviation = std::max(
            deviation, std::abs(fs_distance(trajs[a].point(t), trajs[b].point(t)) - d0));
      }
    }
  }
  return deviation;
}

struct LiouvilleReport {
  double max_weight_drift = 0.0;
  double max_area_drift = 0.0;  // relative
  std::size_t particles_checked = 0;
  std::size_t particles_skipped = 0;
  bool passed = false;
};

// Signed area in the (p, phi) chart; proportional to FS volume.
inline double chart_triangle_area(double p0, double f0, double p1, double f1, double p2, double f2) {
  return 0.5 * ((p1 - p0) * (f2 - f0) - (p2 - p0) * (f1 - f0));
}

// Two testable consequences of Liouville's theorem for delta-mixture states:
// weights are constant (no sink/source under Hamiltonian flow) and a small
// tracer triangle around every particle keeps its volume (incompressibility).
inline LiouvilleReport liouville_check(const EnergyFunction& ef, const GeometricQuantumState& gqs0,
                                       double dt, long steps, double tracer_size = 1e-3,
                                       double area_tolerance = 0.01) {
  LiouvilleReport report;
  // Weights: propagate each unnormalized ket exactly (U(t) built per time,
  // not as a product of steps) and re-measure its norm.
  for (long n = 1; n <= steps; ++n) {
    const Matrix2c u = ef.propagator(dt * static_cast<double>(n));
    for (const auto& particle : gqs0.particles) {
      const Vector2c phi_ket = u * (std::sqrt(particle.x) * particle.chi);
      report.max_weight_drift =
          std::max(report.max_weight_drift, std::abs(phi_ket.squaredNorm() - particle.x));
    }
  }
  const double clearance_needed = 2.0 * tracer_size + 10.0 * kPoleMargin;
  for (const auto& particle : gqs0.particles) {
    if (!particle.defined || orbit_pole_clearance(ef, particle.gamma) < clearance_needed) {
      ++report.particles_skipped;
      continue;
    }
    const double p = particle.gamma.p;
    const double f = particle.gamma.phi;
    const double offsets[3][2] = {{-tracer_size, -tracer_size}, {tracer_size, -tracer_size}, {0.0, tracer_size}};
    Trajectory corners[3];
    bool truncated = false;
    for (int c = 0; c < 3; ++c) {
      corners[c] = integrate_flow(ef, BlochPoint{p + offsets[c][0], f + offsets[c][1]}, dt, steps);
      truncated = truncated || corners[c].truncated;
    }
    if (truncated) {
      ++report.particles_skipped;
      continue;
    }
    auto area_at = [&](std::size_t t) {
      return chart_triangle_area(corners[0].p[t], corners[0].phi[t], corners[1].p[t],
                                 corners[1].phi[t], corners[2].p[t], corners[2].phi[t]);
    };
    const double a0 = area_at(0);
    for (std::size_t t = 1; t < corners[0].size(); ++t) {
      report.max_area_drift = std::max(report.max_area_drift, std::abs(area_at(t) - a0) / std::abs(a0));
    }
    ++report.particles_checked;
  }
  report.passed = report.max_weight_drift <= 1e-12 && report.max_area_drift < area_tolerance;
  return report;
}

}  // namespace geotransport
