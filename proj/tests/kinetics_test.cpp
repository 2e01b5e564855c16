#include "geotransport/kinetics.hpp"

#include <random>

#include "geotransport/testing/oracles.hpp"
#include "gtest/gtest.h"

namespace geotransport {
namespace {

HamiltonianSpec chain(int n_env, double j_z = 1.0) {
  HamiltonianSpec spec;
  spec.n_env = n_env;
  spec.j_z = j_z;
  return spec;
}

double max_abs(const MatrixXc& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

TEST(DecompositionTest, NearestNeighbourChainHasTwoTerms) {
  const HamiltonianDecomposition d = decompose_hamiltonian(chain(3));
  EXPECT_EQ(d.terms.size(), 2u);
  EXPECT_EQ(d.d_e(), 8);
  EXPECT_LT(max_abs(d.h_s - (pauli::x() + 0.5 * pauli::z())), 1e-15);
}

TEST(DecompositionTest, ReassemblesToTheChainHamiltonian) {
  for (int n_env : {1, 2, 3, 5}) {
    for (bool nnn : {false, true}) {
      HamiltonianSpec spec = chain(n_env, -0.8);
      spec.field = {0.3, -0.2, 0.7};
      spec.system_site = n_env / 2;
      if (nnn) spec.coupling_range = CouplingRange::next_nearest;
      const MatrixXc oracle = oracle::permute_to_joint(
          oracle::ising_kron(n_env + 1, spec.j_z, 0.3, -0.2, 0.7, nnn), n_env + 1, spec.system_site);
      EXPECT_LT(max_abs(decompose_hamiltonian(spec).reassemble() - oracle), 1e-12)
          << "n_env = " << n_env << " nnn = " << nnn;
    }
  }
}

TEST(DecompositionTest, DecoupledLimit) {
  const HamiltonianDecomposition d = decompose_hamiltonian(chain(3, 0.0));
  EXPECT_TRUE(d.terms.empty());
  const KineticOperators ops = build_kinetic_operators(d);
  for (std::size_t a = 0; a < ops.d_e(); ++a) {
    // Without interaction terms H_alpha differs from H_S by a scalar and V by a scalar.
    const Matrix2c shift = ops.h_alpha(a) - d.h_s;
    EXPECT_LT(max_abs(shift - shift(0, 0) * Matrix2c::Identity()), 1e-15);
    for (std::size_t b = 0; b < ops.d_e(); ++b) {
      if (a == b) continue;
      EXPECT_LT(max_abs(ops.v(a, b) - d.h_e(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) *
                                          Matrix2c::Identity()),
                1e-15);
    }
  }
}

TEST(DecompositionTest, RejectsOversizedEnvironment) {
  EXPECT_THROW(decompose_hamiltonian(chain(kMaxKineticEnvSites + 1)), ResourceError);
}

TEST(KineticOperatorsTest, BlocksMatchTheJointHamiltonian) {
  std::mt19937_64 rng(3);
  for (int n_env : {2, 3}) {
    HamiltonianSpec spec = chain(n_env);
    spec.coupling_range = CouplingRange::next_nearest;
    const KineticOperators ops = build_kinetic_operators(decompose_hamiltonian(spec));
    const MatrixXc h = build_dense_hamiltonian(spec);
    for (std::size_t a = 0; a < ops.d_e(); ++a) {
      for (std::size_t b = 0; b < ops.d_e(); ++b) {
        const Matrix2c block = h.block<2, 2>(2 * static_cast<Eigen::Index>(a), 2 * static_cast<Eigen::Index>(b));
        const Matrix2c mine = a == b ? ops.h_alpha(a) : ops.v(a, b);
        EXPECT_LT(max_abs(block - mine), 1e-12);
      }
    }
    EXPECT_LT(ops.max_h_alpha_defect(), 1e-12);
    EXPECT_LT(ops.max_v_pairing_defect(), 1e-12);
  }
}

TEST(KineticOperatorsTest, ArbitraryTermsFromRandomParts) {
  std::mt19937_64 rng(4);
  const MatrixXc h_s = oracle::random_hermitian(2, rng);
  const MatrixXc h_e = oracle::random_hermitian(4, rng);
  std::vector<InteractionTerm> terms;
  for (int k = 0; k < 3; ++k) {
    terms.push_back({Matrix2c(oracle::random_hermitian(2, rng)), oracle::random_hermitian(4, rng)});
  }
  const KineticOperators ops = build_kinetic_operators(Matrix2c(h_s), h_e, terms);
  HamiltonianDecomposition d;
  d.h_s = h_s;
  d.h_e = h_e;
  d.terms = terms;
  const MatrixXc full = d.reassemble();
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = 0; b < 4; ++b) {
      const Matrix2c block = full.block<2, 2>(2 * static_cast<Eigen::Index>(a), 2 * static_cast<Eigen::Index>(b));
      EXPECT_LT(max_abs(block - (a == b ? ops.h_alpha(a) : ops.v(a, b))), 1e-12);
    }
  }
  EXPECT_LT(ops.max_v_pairing_defect(), 1e-12);
}

TEST(KineticOperatorsTest, MismatchedDimensionsThrow) {
  std::vector<InteractionTerm> terms{{pauli::z(), MatrixXc::Identity(3, 3)}};
  EXPECT_THROW(build_kinetic_operators(pauli::x(), MatrixXc::Identity(4, 4), terms), ValidationError);
  EXPECT_THROW(KineticOperators({pauli::x()}, {}), ValidationError);
}

TEST(KineticEvolveTest, MatchesGlobalUnitaryEvolution) {
  const HamiltonianSpec spec = chain(3);
  const KineticOperators ops = build_kinetic_operators(decompose_hamiltonian(spec));
  const JointState psi0 = all_up_state(3);
  const double dt = 0.005;
  const auto ensembles = kinetic_evolve(ops, PhiEnsemble::from_joint(psi0), dt, 100);
  ASSERT_EQ(ensembles.size(), 101u);
  const MatrixXc h = build_dense_hamiltonian(spec);
  double worst = 0.0;
  for (std::size_t n = 0; n < ensembles.size(); n += 10) {
    const VectorXc exact = oracle::spectral_evolution(h, psi0.as_vector(), dt * static_cast<double>(n));
    worst = std::max(worst, max_abs(ensembles[n].phis - exact.reshaped(2, 8)));
    EXPECT_NEAR(ensembles[n].time, dt * static_cast<double>(n), 1e-15);
  }
  EXPECT_LT(worst, 1e-7);
}

TEST(KineticEvolveTest, RandomInitialStateAndNextNearest) {
  std::mt19937_64 rng(6);
  HamiltonianSpec spec = chain(4, -1.0);
  spec.coupling_range = CouplingRange::next_nearest;
  const KineticOperators ops = build_kinetic_operators(decompose_hamiltonian(spec));
  const JointState psi0(oracle::random_amplitudes(2, 16, rng));
  const auto ensembles = kinetic_evolve(ops, PhiEnsemble::from_joint(psi0), 0.005, 200);
  const VectorXc exact = oracle::spectral_evolution(build_dense_hamiltonian(spec), psi0.as_vector(), 1.0);
  EXPECT_LT(max_abs(ensembles.back().phis - exact.reshaped(2, 16)), 1e-6);
}

TEST(KineticEvolveTest, TotalWeightIsConserved) {
  const KineticOperators ops = build_kinetic_operators(decompose_hamiltonian(chain(3)));
  const auto ensembles = kinetic_evolve(ops, PhiEnsemble::from_joint(all_up_state(3)), 0.005, 500);
  for (const auto& e : ensembles) EXPECT_NEAR(e.weights().sum(), 1.0, 1e-8);
}

TEST(KineticEvolveTest, RejectsBadInput) {
  const KineticOperators ops = build_kinetic_operators(decompose_hamiltonian(chain(2)));
  const PhiEnsemble good = PhiEnsemble::from_joint(all_up_state(2));
  EXPECT_THROW(kinetic_evolve(ops, good, 0.0, 10), ValidationError);
  EXPECT_THROW(kinetic_evolve(ops, PhiEnsemble{2.0 * good.phis, 0.0}, 0.01, 10), ValidationError);
  EXPECT_THROW(kinetic_evolve(ops, PhiEnsemble::from_joint(all_up_state(3)), 0.01, 10), ValidationError);
}

TEST(KineticEvolveTest, OversizedStepTripsTheNormalizationGate) {
  const KineticOperators ops = build_kinetic_operators(decompose_hamiltonian(chain(3)));
  EXPECT_THROW(kinetic_evolve(ops, PhiEnsemble::from_joint(all_up_state(3)), 0.9, 200), NumericError);
}

double worst_rate_error(const KineticOperators& ops, double dt, long steps) {
  const auto ensembles = kinetic_evolve(ops, PhiEnsemble::from_joint(all_up_state(3)), dt, steps);
  const auto numeric = xdot_series(ensembles, dt);
  double worst = 0.0;
  for (std::size_t n = 1; n + 1 < ensembles.size(); ++n) {
    const auto analytic = analytic_xdot(ops, ensembles[n]);
    double sum = 0.0;
    for (std::size_t a = 0; a < analytic.size(); ++a) {
      worst = std::max(worst, std::abs(numeric[n][a] - analytic[a]));
      sum += analytic[a];
    }
    EXPECT_NEAR(sum, 0.0, 1e-12);
  }
  return worst;
}

TEST(XdotTest, DifferenceQuotientsConvergeToTheAnalyticRate) {
  const KineticOperators ops = build_kinetic_operators(decompose_hamiltonian(chain(3)));
  const double coarse = worst_rate_error(ops, 0.005, 300);
  const double fine = worst_rate_error(ops, 0.0025, 600);
  EXPECT_LT(coarse, 10.0 * 0.005 * 0.005);
  // Central differences are second order: halving dt quarters the error.
  EXPECT_GT(coarse / fine, 3.5);
  EXPECT_LT(coarse / fine, 4.5);
}

TEST(XdotTest, ZeroForDecoupledStaticEnvironment) {
  // With no environment field H_E is diagonal, and without coupling V vanishes.
  HamiltonianSpec spec = chain(2, 0.0);
  spec.field = {0.0, 0.0, 0.3};
  const KineticOperators ops = build_kinetic_operators(decompose_hamiltonian(spec));
  std::mt19937_64 rng(8);
  const PhiEnsemble ens{oracle::random_amplitudes(2, 4, rng), 0.0};
  for (double r : analytic_xdot(ops, ens)) EXPECT_EQ(r, 0.0);
}

TEST(XdotTest, ShapeChecks) {
  const PhiEnsemble a{MatrixXc::Zero(2, 4), 0.0};
  const PhiEnsemble b{MatrixXc::Zero(2, 8), 0.0};
  EXPECT_THROW(xdot(a, b, 0.1), ValidationError);
  EXPECT_THROW(xdot(a, a, 0.0), ValidationError);
  EXPECT_THROW(xdot_series({a}, 0.1), ValidationError);
}

TEST(EnsembleToGqsTest, AgreesWithJointExtraction) {
  std::mt19937_64 rng(9);
  const JointState state(oracle::random_amplitudes(2, 8, rng), 0.25);
  const GeometricQuantumState a = ensemble_to_gqs(PhiEnsemble::from_joint(state));
  const GeometricQuantumState b = extract_gqs(state);
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(a.time, 0.25);
  for (std::size_t n = 0; n < a.size(); ++n) {
    EXPECT_EQ(a.particles[n].x, b.particles[n].x);
    EXPECT_EQ(a.particles[n].gamma.p, b.particles[n].gamma.p);
    EXPECT_EQ(a.particles[n].gamma.phi, b.particles[n].gamma.phi);
  }
}

}  // namespace
}  // namespace geotransport
