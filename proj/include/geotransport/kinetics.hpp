// kinetics.hpp
// Kinetic equations for the unnormalized conditional kets
//   Phi_alpha = sqrt(x_alpha) chi_alpha,
//   i dPhi_alpha/dt = H_alpha Phi_alpha + sum_{beta != alpha} V_alphabeta Phi_beta,
// with H_alpha = H_S + (H_E)_aa I + sum_k B^k_aa A^k  and
//      V_ab    = (H_E)_ab I + sum_k B^k_ab A^k.
// Integrated with the same fixed-step RK4 scheme as the Bloch-square flow and
// certified against global unitary evolution of the joint state.

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <unsupported/Eigen/KroneckerProduct>

#include "geotransport/common.hpp"
#include "geotransport/gqs.hpp"
#include "geotransport/spinchain.hpp"

namespace geotransport {

// Dense coupling blocks grow as d_E^2; beyond this the global route is used.
inline constexpr int kMaxKineticEnvSites = 8;

struct InteractionTerm {
  Matrix2c a;   // system operator A^k
  MatrixXc b;   // environment operator B^k
};

struct HamiltonianDecomposition {
  Matrix2c h_s = Matrix2c::Zero();
  MatrixXc h_e;
  std::vector<InteractionTerm> terms;

  Eigen::Index d_e() const { return h_e.rows(); }

  // H_S (x) I_E + I_S (x) H_E + sum_k A^k (x) B^k in the joint basis
  // (system index fastest).
  MatrixXc reassemble() const {
    const Eigen::Index de = d_e();
    MatrixXc full = Eigen::kroneckerProduct(MatrixXc::Identity(de, de), MatrixXc(h_s)).eval();
    full += Eigen::kroneckerProduct(h_e, MatrixXc(Matrix2c::Identity())).eval();
    for (const auto& term : terms) {
      full += Eigen::kroneckerProduct(term.b, MatrixXc(term.a)).eval();
    }
    return full;
  }
};

// Splits the chain Hamiltonian into system, environment and interaction.
// Each bond touching the system site contributes one term
// A = J_z sigma_z (system), B = sigma_z (neighbour), so M = 2 for nearest
// neighbours and M = 4 with next-nearest couplings on long enough chains.
inline HamiltonianDecomposition decompose_hamiltonian(const HamiltonianSpec& spec) {
  spec.validate();
  if (spec.n_env > kMaxKineticEnvSites) {
    throw ResourceError("decomposition stores dense environment operators; n_env <= " +
                        std::to_string(kMaxKineticEnvSites) + " required");
  }
  // Environment bit positions, without the system bit of the joint layout.
  const ChainLayout layout(spec);
  auto env_bit = [&](int site) { return layout.bit(site) - 1; };

  HamiltonianDecomposition out;
  const auto [bx, by, bz] = spec.field;
  out.h_s = bx * pauli::x() + by * pauli::y() + bz * pauli::z();

  detail::QubitTerms env_terms;
  env_terms.qubits = spec.n_env;
  env_terms.j_z = spec.j_z;
  env_terms.field = spec.field;
  for (int site = 0; site < spec.chain_length(); ++site) {
    if (site != spec.system_site) env_terms.field_bits.push_back(env_bit(site));
  }
  const std::size_t de = spec.env_dim();
  for (const auto& [a, b] : chain_bonds(spec)) {
    const bool a_sys = a == spec.system_site;
    const bool b_sys = b == spec.system_site;
    if (!a_sys && !b_sys) {
      env_terms.zz_bonds.emplace_back(env_bit(a), env_bit(b));
      continue;
    }
    const int neighbour_bit = env_bit(a_sys ? b : a);
    InteractionTerm term;
    term.a = spec.j_z * pauli::z();
    term.b = MatrixXc::Zero(static_cast<Eigen::Index>(de), static_cast<Eigen::Index>(de));
    for (std::size_t alpha = 0; alpha < de; ++alpha) {
      term.b(alpha, alpha) = ((alpha >> neighbour_bit) & 1U) ? -1.0 : 1.0;
    }
    out.terms.push_back(std::move(term));
  }
  out.h_e = MatrixXc(detail::build_sparse(env_terms));
  if (spec.j_z == 0.0) out.terms.clear();
  return out;
}

class KineticOperators {
 public:
  KineticOperators() = default;

  KineticOperators(std::vector<Matrix2c> h_alpha, std::vector<Matrix2c> couplings)
      : d_e_(h_alpha.size()), h_alpha_(std::move(h_alpha)), v_(std::move(couplings)) {
    if (v_.size() != d_e_ * d_e_) throw ValidationError("coupling table has wrong size");
    rebuild_neighbours();
  }

  std::size_t d_e() const { return d_e_; }
  const Matrix2c& h_alpha(std::size_t alpha) const { return h_alpha_[alpha]; }
  const Matrix2c& v(std::size_t alpha, std::size_t beta) const { return v_[alpha * d_e_ + beta]; }
  Matrix2c& v(std::size_t alpha, std::size_t beta) { return v_[alpha * d_e_ + beta]; }

  // Betas with a nonzero V_alpha,beta.
  const std::vector<std::size_t>& neighbours(std::size_t alpha) const { return neighbours_[alpha]; }

  // Must be called after editing blocks through the mutable accessor.
  void rebuild_neighbours() {
    neighbours_.assign(d_e_, {});
    for (std::size_t a = 0; a < d_e_; ++a) {
      for (std::size_t b = 0; b < d_e_; ++b) {
        if (a != b && !v(a, b).isZero(0.0)) neighbours_[a].push_back(b);
      }
    }
  }

  double max_h_alpha_defect() const {
    double defect = 0.0;
    for (const auto& h : h_alpha_) defect = std::max(defect, hermiticity_defect(h));
    return defect;
  }

  // max over pairs of |V_ab^dagger - V_ba|.
  double max_v_pairing_defect() const {
    double defect = 0.0;
    for (std::size_t a = 0; a < d_e_; ++a) {
      for (std::size_t b = 0; b < d_e_; ++b) {
        if (a == b) continue;
        defect = std::max(defect, (v(a, b).adjoint() - v(b, a)).cwiseAbs().maxCoeff());
      }
    }
    return defect;
  }

 private:
  std::size_t d_e_ = 0;
  std::vector<Matrix2c> h_alpha_;
  std::vector<Matrix2c> v_;
  std::vector<std::vector<std::size_t>> neighbours_;
};

inline KineticOperators build_kinetic_operators(const Matrix2c& h_s, const MatrixXc& h_e,
                                                const std::vector<InteractionTerm>& terms) {
  if (h_e.rows() != h_e.cols()) throw ValidationError("H_E must be square");
  const auto de = static_cast<std::size_t>(h_e.rows());
  if (de > (std::size_t{1} << kMaxKineticEnvSites)) {
    throw ResourceError("environment too large for dense kinetic operators");
  }
  for (const auto& term : terms) {
    if (term.b.rows() != h_e.rows() || term.b.cols() != h_e.cols()) {
      throw ValidationError("interaction operator B has mismatched dimension");
    }
  }
  std::vector<Matrix2c> h_alpha(de);
  std::vector<Matrix2c> v(de * de, Matrix2c::Zero());
  for (std::size_t a = 0; a < de; ++a) {
    for (std::size_t b = 0; b < de; ++b) {
      Matrix2c block = h_e(a, b) * Matrix2c::Identity();
      for (const auto& term : terms) block += term.b(a, b) * term.a;
      if (a == b) {
        h_alpha[a] = h_s + block;
      } else {
        v[a * de + b] = block;
      }
    }
  }
  return KineticOperators(std::move(h_alpha), std::move(v));
}

inline KineticOperators build_kinetic_operators(const HamiltonianDecomposition& d) {
  return build_kinetic_operators(d.h_s, d.h_e, d.terms);
}

// Columns are the kets Phi_alpha.
struct PhiEnsemble {
  MatrixXc phis;
  double time = 0.0;

  static PhiEnsemble from_joint(const JointState& state) {
    return {state.amplitudes(), state.time()};
  }

  double total_weight() const { return phis.squaredNorm(); }
  Eigen::VectorXd weights() const { return phis.colwise().squaredNorm().transpose(); }
};

// -i (H_alpha Phi_alpha + sum_beta V_alpha,beta Phi_beta) for every alpha.
inline MatrixXc kinetic_rhs(const KineticOperators& ops, const MatrixXc& phis) {
  MatrixXc out(phis.rows(), phis.cols());
  for (std::size_t a = 0; a < ops.d_e(); ++a) {
    Vector2c acc = ops.h_alpha(a) * phis.col(static_cast<Eigen::Index>(a));
    for (std::size_t b : ops.neighbours(a)) acc += ops.v(a, b) * phis.col(static_cast<Eigen::Index>(b));
    out.col(static_cast<Eigen::Index>(a)) = -kI * acc;
  }
  return out;
}

inline std::vector<PhiEnsemble> kinetic_evolve(const KineticOperators& ops, const PhiEnsemble& ens0,
                                               double dt, long steps) {
  if (!(dt > 0.0)) throw ValidationError("dt must be positive");
  if (steps < 0) throw ValidationError("steps must be non-negative");
  if (ens0.phis.rows() != 2 || static_cast<std::size_t>(ens0.phis.cols()) != ops.d_e()) {
    throw ValidationError("ensemble does not match the kinetic operators");
  }
  const double norm0 = ens0.total_weight();
  if (std::abs(norm0 - 1.0) > 1e-8) throw ValidationError("ensemble is not globally normalized");

  std::vector<PhiEnsemble> out;
  out.reserve(static_cast<std::size_t>(steps + 1));
  out.push_back(ens0);
  MatrixXc phis = ens0.phis;
  for (long n = 1; n <= steps; ++n) {
    const MatrixXc k1 = kinetic_rhs(ops, phis);
    const MatrixXc k2 = kinetic_rhs(ops, phis + 0.5 * dt * k1);
    const MatrixXc k3 = kinetic_rhs(ops, phis + 0.5 * dt * k2);
    const MatrixXc k4 = kinetic_rhs(ops, phis + dt * k3);
    phis += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    const double drift = std::abs(phis.squaredNorm() - norm0);
    if (drift > 1e-5) {
      throw NumericError("kinetic integration lost normalization (drift " + std::to_string(drift) +
                         " at step " + std::to_string(n) + "); reduce dt");
    }
    out.push_back({phis, ens0.time + dt * static_cast<double>(n)});
  }
  return out;
}

inline GeometricQuantumState ensemble_to_gqs(const PhiEnsemble& ens) {
  return gqs_from_columns(ens.phis, ens.time);
}

// Difference quotient (x(next) - x(prev)) / dt per particle.
inline std::vector<double> xdot(const PhiEnsemble& prev, const PhiEnsemble& next, double dt) {
  if (prev.phis.cols() != next.phis.cols() || prev.phis.rows() != next.phis.rows()) {
    throw ValidationError("ensembles have different particle counts");
  }
  if (!(dt > 0.0)) throw ValidationError("dt must be positive");
  const Eigen::VectorXd delta = next.weights() - prev.weights();
  std::vector<double> rates(static_cast<std::size_t>(delta.size()));
  for (Eigen::Index a = 0; a < delta.size(); ++a) rates[static_cast<std::size_t>(a)] = delta[a] / dt;
  return rates;
}

// Rates for every snapshot: central differences inside, one-sided at the ends.
inline std::vector<std::vector<double>> xdot_series(const std::vector<PhiEnsemble>& ensembles, double dt) {
  if (ensembles.size() < 2) throw ValidationError("need at least two snapshots");
  std::vector<std::vector<double>> out(ensembles.size());
  out.front() = xdot(ensembles[0], ensembles[1], dt);
  out.back() = xdot(ensembles[ensembles.size() - 2], ensembles.back(), dt);
  for (std::size_t n = 1; n + 1 < ensembles.size(); ++n) {
    out[n] = xdot(ensembles[n - 1], ensembles[n + 1], 2.0 * dt);
  }
  return out;
}

// dx_alpha/dt = 2 Im <Phi_alpha| sum_beta V_alpha,beta |Phi_beta>.
inline std::vector<double> analytic_xdot(const KineticOperators& ops, const PhiEnsemble& ens) {
  std::vector<double> rates(ops.d_e(), 0.0);
  for (std::size_t a = 0; a < ops.d_e(); ++a) {
    Vector2c coupled = Vector2c::Zero();
    for (std::size_t b : ops.neighbours(a)) coupled += ops.v(a, b) * ens.phis.col(static_cast<Eigen::Index>(b));
    rates[a] = 2.0 * ens.phis.col(static_cast<Eigen::Index>(a)).dot(coupled).imag();
  }
  return rates;
}

}  // namespace geotransport
