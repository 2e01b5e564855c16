// spinchain.hpp
// Periodic Ising chains with a homogeneous field, joint system+environment
// pure states, and exact time evolution.
//
// Basis layout. The distinguished system qubit occupies bit 0 of the joint
// basis index; environment site m (the m-th chain site after skipping the
// system site, in chain order) occupies bit m + 1. A joint index therefore
// reads  j + 2 * alpha  with j the system level and alpha the environment
// index (little-endian over environment sites), which is exactly the
// column-major layout of the d_S x d_E amplitude matrix psi(j, alpha).

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>

#include "geotransport/common.hpp"

namespace geotransport {

using SparseMatrixC = Eigen::SparseMatrix<Complex>;

inline constexpr int kMaxEnvSites = 14;

enum class CouplingRange { nearest, next_nearest };
enum class Boundary { periodic };

struct HamiltonianSpec {
  int n_env = 1;
  double j_z = 1.0;
  std::array<double, 3> field{1.0, 0.0, 0.5};
  CouplingRange coupling_range = CouplingRange::nearest;
  Boundary boundary = Boundary::periodic;
  int system_site = 0;

  int chain_length() const { return n_env + 1; }
  std::size_t env_dim() const { return std::size_t{1} << n_env; }
  std::size_t joint_dim() const { return std::size_t{2} << n_env; }

  void validate(int max_env_sites = kMaxEnvSites) const {
    if (n_env < 1) throw ValidationError("n_env must be >= 1");
    if (n_env > max_env_sites) {
      throw ResourceError("n_env = " + std::to_string(n_env) +
                          " exceeds the configured maximum of " +
                          std::to_string(max_env_sites));
    }
    if (!std::isfinite(j_z)) throw ValidationError("j_z must be finite");
    for (double b : field) {
      if (!std::isfinite(b)) throw ValidationError("field components must be finite");
    }
    if (system_site < 0 || system_site >= chain_length()) {
      throw ValidationError("system_site " + std::to_string(system_site) +
                            " outside chain of length " +
                            std::to_string(chain_length()));
    }
  }
};

// Maps chain sites onto joint-basis bit positions.
class ChainLayout {
 public:
  explicit ChainLayout(const HamiltonianSpec& spec)
      : length_(spec.chain_length()), bit_of_site_(spec.chain_length()) {
    int next_env_bit = 1;
    for (int site = 0; site < length_; ++site) {
      bit_of_site_[site] = site == spec.system_site ? 0 : next_env_bit++;
    }
  }

  int length() const { return length_; }
  int bit(int site) const { return bit_of_site_[site]; }

 private:
  int length_;
  std::vector<int> bit_of_site_;
};

// Bonds (site_a, site_b) of the periodic chain. Nearest neighbours give L
// bonds k -> k+1; next-nearest adds L bonds k -> k+2. Bonds that wrap onto
// their own site (chains shorter than the coupling range) are dropped.
inline std::vector<std::pair<int, int>> chain_bonds(const HamiltonianSpec& spec) {
  const int length = spec.chain_length();
  std::vector<std::pair<int, int>> bonds;
  auto add_shell = [&](int shift) {
    for (int k = 0; k < length; ++k) {
      const int partner = (k + shift) % length;
      if (partner != k) bonds.emplace_back(k, partner);
    }
  };
  add_shell(1);
  if (spec.coupling_range == CouplingRange::next_nearest) add_shell(2);
  return bonds;
}

namespace detail {

// Sum of  j * Z_a Z_b  bonds and  B . sigma  fields on an n-qubit register
// addressed by bit positions.
struct QubitTerms {
  int qubits = 0;
  std::vector<std::pair<int, int>> zz_bonds;
  double j_z = 0.0;
  std::vector<int> field_bits;
  std::array<double, 3> field{0.0, 0.0, 0.0};
};

inline SparseMatrixC build_sparse(const QubitTerms& terms) {
  const std::size_t dim = std::size_t{1} << terms.qubits;
  std::vector<Eigen::Triplet<Complex>> triplets;
  triplets.reserve(dim * (1 + terms.field_bits.size()));
  const auto [bx, by, bz] = terms.field;
  const bool transverse = bx != 0.0 || by != 0.0;
  auto spin = [](std::size_t state, int bit) {
    return ((state >> bit) & 1U) ? -1.0 : 1.0;
  };
  for (std::size_t state = 0; state < dim; ++state) {
    double diagonal = 0.0;
    for (const auto& [a, b] : terms.zz_bonds) {
      diagonal += terms.j_z * spin(state, a) * spin(state, b);
    }
    for (int bit : terms.field_bits) diagonal += bz * spin(state, bit);
    if (diagonal != 0.0) triplets.emplace_back(state, state, diagonal);
    if (!transverse) continue;
    for (int bit : terms.field_bits) {
      // <flipped| (bx sx + by sy) |state>: raising from |0> gives bx + i by.
      const bool is_one = (state >> bit) & 1U;
      const Complex amp = is_one ? Complex{bx, -by} : Complex{bx, by};
      triplets.emplace_back(state ^ (std::size_t{1} << bit), state, amp);
    }
  }
  SparseMatrixC h(dim, dim);
  h.setFromTriplets(triplets.begin(), triplets.end());
  return h;
}

}  // namespace detail

// Full chain Hamiltonian in the joint basis described above.
inline SparseMatrixC build_hamiltonian(const HamiltonianSpec& spec) {
  spec.validate();
  const ChainLayout layout(spec);
  detail::QubitTerms terms;
  terms.qubits = spec.chain_length();
  terms.j_z = spec.j_z;
  terms.field = spec.field;
  for (const auto& [a, b] : chain_bonds(spec)) {
    terms.zz_bonds.emplace_back(layout.bit(a), layout.bit(b));
  }
  for (int site = 0; site < layout.length(); ++site) {
    terms.field_bits.push_back(layout.bit(site));
  }
  return detail::build_sparse(terms);
}

inline MatrixXc build_dense_hamiltonian(const HamiltonianSpec& spec) {
  return MatrixXc(build_hamiltonian(spec));
}

// Pure state of system (rows) and environment (columns).
class JointState {
 public:
  static constexpr double kNormTolerance = 1e-10;

  JointState() = default;

  JointState(MatrixXc amplitudes, double time = 0.0)
      : amplitudes_(std::move(amplitudes)), time_(time) {
    const double defect = std::abs(amplitudes_.squaredNorm() - 1.0);
    if (!(defect <= kNormTolerance)) {
      throw ValidationError("joint state is not normalized (|norm^2 - 1| = " +
                            std::to_string(defect) + ")");
    }
  }

  static JointState from_vector(const VectorXc& psi, Eigen::Index d_s,
                                double time = 0.0) {
    if (d_s <= 0 || psi.size() % d_s != 0) {
      throw ValidationError("vector length is not a multiple of d_S");
    }
    return JointState(psi.reshaped(d_s, psi.size() / d_s), time);
  }

  const MatrixXc& amplitudes() const { return amplitudes_; }
  Eigen::Index d_s() const { return amplitudes_.rows(); }
  Eigen::Index d_e() const { return amplitudes_.cols(); }
  double time() const { return time_; }
  double norm_squared() const { return amplitudes_.squaredNorm(); }

  // Column-major flattening: index j + d_S * alpha.
  VectorXc as_vector() const { return amplitudes_.reshaped(); }

 private:
  MatrixXc amplitudes_;
  double time_ = 0.0;
};

namespace detail {

inline void require_normalized_ket(const Vector2c& ket, const std::string& what) {
  const double defect = std::abs(ket.squaredNorm() - 1.0);
  if (!(defect <= 1e-12)) {
    throw ValidationError(what + " is not normalized (|norm^2 - 1| = " +
                          std::to_string(defect) + ")");
  }
}

}  // namespace detail

inline JointState product_state(const Vector2c& system_ket,
                                const std::vector<Vector2c>& env_kets) {
  detail::require_normalized_ket(system_ket, "system ket");
  if (env_kets.empty()) throw ValidationError("at least one environment ket required");
  if (static_cast<int>(env_kets.size()) > kMaxEnvSites) {
    throw ResourceError("too many environment sites");
  }
  for (std::size_t m = 0; m < env_kets.size(); ++m) {
    detail::require_normalized_ket(env_kets[m], "environment ket " + std::to_string(m));
  }
  const std::size_t d_e = std::size_t{1} << env_kets.size();
  VectorXc env = VectorXc::Ones(static_cast<Eigen::Index>(d_e));
  for (std::size_t alpha = 0; alpha < d_e; ++alpha) {
    for (std::size_t m = 0; m < env_kets.size(); ++m) {
      env[alpha] *= env_kets[m][(alpha >> m) & 1U];
    }
  }
  MatrixXc amps = system_ket * env.transpose();
  // Renormalize away the rounding of the product; inputs are unit within 1e-12.
  amps /= amps.norm();
  return JointState(std::move(amps));
}

// Every chain site in |1>, so the system starts on the p = 1 pole.
inline JointState all_up_state(int n_env) {
  return product_state(Vector2c(0.0, 1.0),
                       std::vector<Vector2c>(static_cast<std::size_t>(n_env),
                                             Vector2c(0.0, 1.0)));
}

// Time-independent propagator exp(-i H dt).
//
// Spectral: built from a Hermitian eigendecomposition; n steps are applied
// as exp(-i lambda n dt) in the eigenbasis, so there is no accumulation
// across steps. Taylor: for dimensions too large to diagonalize densely,
// each step applies a truncated Taylor series of the sparse H to the state.
class Propagator {
 public:
  enum class Method { spectral, taylor };

  static constexpr double kHermiticityTolerance = 1e-10;
  static constexpr Eigen::Index kMaxSpectralDim = 4096;

  static Propagator spectral(const MatrixXc& h, double dt) {
    validate_inputs(h.rows(), h.cols(), dt);
    require_hermitian(h, kHermiticityTolerance, "Hamiltonian");
    Propagator prop(Method::spectral, dt, h.rows());
    const MatrixXc sym = 0.5 * (h + h.adjoint());
    if (sym.imag().cwiseAbs().maxCoeff() == 0.0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym.real());
      prop.eigenvalues_ = solver.eigenvalues();
      prop.real_vectors_ = solver.eigenvectors();
      prop.real_ = true;
    } else {
      Eigen::SelfAdjointEigenSolver<MatrixXc> solver(sym);
      prop.eigenvalues_ = solver.eigenvalues();
      prop.complex_vectors_ = solver.eigenvectors();
    }
    return prop;
  }

  static Propagator taylor(SparseMatrixC h, double dt) {
    validate_inputs(h.rows(), h.cols(), dt);
    const SparseMatrixC diff = SparseMatrixC(h.adjoint()) - h;
    double defect = 0.0;
    for (int k = 0; k < diff.outerSize(); ++k) {
      for (SparseMatrixC::InnerIterator it(diff, k); it; ++it) {
        defect = std::max(defect, std::abs(it.value()));
      }
    }
    if (defect > kHermiticityTolerance) {
      throw ValidationError("Hamiltonian is not Hermitian");
    }
    Propagator prop(Method::taylor, dt, h.rows());
    // ||H dt / substeps||_1 <= 1 keeps the series short and well conditioned.
    double one_norm = 0.0;
    for (int k = 0; k < h.outerSize(); ++k) {
      double col = 0.0;
      for (SparseMatrixC::InnerIterator it(h, k); it; ++it) col += std::abs(it.value());
      one_norm = std::max(one_norm, col);
    }
    prop.taylor_substeps_ = std::max(1, static_cast<int>(std::ceil(one_norm * dt)));
    prop.sparse_ = std::move(h);
    return prop;
  }

  Method method() const { return method_; }
  double dt() const { return dt_; }
  Eigen::Index dim() const { return dim_; }
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }

  // exp(-i H dt * steps) psi.
  VectorXc apply(const VectorXc& psi, long steps = 1) const {
    if (psi.size() != dim_) throw ValidationError("state dimension mismatch");
    if (method_ == Method::spectral) {
      const double t = dt_ * static_cast<double>(steps);
      VectorXc coeffs = to_eigenbasis(psi);
      for (Eigen::Index n = 0; n < coeffs.size(); ++n) {
        coeffs[n] *= std::polar(1.0, -eigenvalues_[n] * t);
      }
      return from_eigenbasis(coeffs);
    }
    VectorXc out = psi;
    for (long s = 0; s < steps; ++s) {
      for (int sub = 0; sub < taylor_substeps_; ++sub) out = taylor_step(out);
    }
    return out;
  }

  // Dense U(dt); only for the spectral representation.
  MatrixXc step_matrix() const {
    if (method_ != Method::spectral) {
      throw ResourceError("dense step matrix requires the spectral representation");
    }
    VectorXc phases(dim_);
    for (Eigen::Index n = 0; n < dim_; ++n) phases[n] = std::polar(1.0, -eigenvalues_[n] * dt_);
    if (real_) {
      const MatrixXc v = real_vectors_.cast<Complex>();
      return v * phases.asDiagonal() * v.adjoint();
    }
    return complex_vectors_ * phases.asDiagonal() * complex_vectors_.adjoint();
  }

  VectorXc to_eigenbasis(const VectorXc& psi) const {
    if (real_) {
      VectorXc out(dim_);
      out.real() = real_vectors_.transpose() * psi.real();
      out.imag() = real_vectors_.transpose() * psi.imag();
      return out;
    }
    return complex_vectors_.adjoint() * psi;
  }

  VectorXc from_eigenbasis(const VectorXc& coeffs) const {
    if (real_) {
      VectorXc out(dim_);
      out.real() = real_vectors_ * coeffs.real();
      out.imag() = real_vectors_ * coeffs.imag();
      return out;
    }
    return complex_vectors_ * coeffs;
  }

 private:
  Propagator(Method method, double dt, Eigen::Index dim)
      : method_(method), dt_(dt), dim_(dim) {}

  static void validate_inputs(Eigen::Index rows, Eigen::Index cols, double dt) {
    if (rows != cols || rows == 0) throw ValidationError("Hamiltonian must be square and non-empty");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ValidationError("dt must be positive");
  }

  VectorXc taylor_step(const VectorXc& psi) const {
    const double h = dt_ / taylor_substeps_;
    VectorXc out = psi;
    VectorXc term = psi;
    const double scale = psi.norm();
    for (int k = 1; k <= 60; ++k) {
      term = (sparse_ * term) * (-kI * h / static_cast<double>(k));
      out += term;
      if (term.norm() <= 1e-17 * scale) break;
    }
    return out;
  }

  Method method_;
  double dt_;
  Eigen::Index dim_;
  bool real_ = false;
  Eigen::VectorXd eigenvalues_;
  Eigen::MatrixXd real_vectors_;
  MatrixXc complex_vectors_;
  SparseMatrixC sparse_;
  int taylor_substeps_ = 1;
};

inline Propagator make_propagator(const MatrixXc& h, double dt) {
  return Propagator::spectral(h, dt);
}

// Picks the spectral route when the dense eigenproblem fits, Taylor otherwise.
inline Propagator make_propagator(const SparseMatrixC& h, double dt,
                                  Eigen::Index max_spectral_dim = Propagator::kMaxSpectralDim) {
  if (h.rows() <= max_spectral_dim) return Propagator::spectral(MatrixXc(h), dt);
  return Propagator::taylor(h, dt);
}

// Calls visit(snapshot_index, state) for t = 0, dt, ..., steps * dt.
inline void evolve_each(const JointState& state, const Propagator& prop, long steps,
                        const std::function<void(long, const JointState&)>& visit) {
  if (steps < 0) throw ValidationError("steps must be non-negative");
  const Eigen::Index d_s = state.d_s();
  const VectorXc psi0 = state.as_vector();
  if (psi0.size() != prop.dim()) throw ValidationError("state dimension mismatch");
  visit(0, state);
  if (prop.method() == Propagator::Method::spectral) {
    const VectorXc coeffs0 = prop.to_eigenbasis(psi0);
    const Eigen::VectorXd& lambda = prop.eigenvalues();
    VectorXc coeffs(coeffs0.size());
    for (long n = 1; n <= steps; ++n) {
      const double t = prop.dt() * static_cast<double>(n);
      for (Eigen::Index m = 0; m < coeffs.size(); ++m) {
        coeffs[m] = coeffs0[m] * std::polar(1.0, -lambda[m] * t);
      }
      visit(n, JointState::from_vector(prop.from_eigenbasis(coeffs), d_s, t));
    }
    return;
  }
  VectorXc psi = psi0;
  for (long n = 1; n <= steps; ++n) {
    psi = prop.apply(psi);
    visit(n, JointState::from_vector(psi, d_s, prop.dt() * static_cast<double>(n)));
  }
}

inline std::vector<JointState> evolve(const JointState& state, const Propagator& prop,
                                      long steps) {
  std::vector<JointState> out;
  out.reserve(static_cast<std::size_t>(steps + 1));
  evolve_each(state, prop, steps, [&](long, const JointState& s) { out.push_back(s); });
  return out;
}

template <typename Operator>
double energy_expectation(const Operator& h, const JointState& state) {
  const VectorXc psi = state.as_vector();
  return psi.dot(h * psi).real();
}

}  // namespace geotransport
