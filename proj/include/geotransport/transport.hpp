// transport.hpp
// Coarse-grained information transport on the Bloch square.
//
// The square is tiled by cells C_ik = [i/n_p, (i+1)/n_p[ x [2pi k/n_phi,
// 2pi (k+1)/n_phi[. For consecutive snapshots sharing particle labels the
// change of cell mass splits exactly into
//   sigma_C dt = sum_a (x_a(t+dt) - x_a(t)) 1[Gamma_a(t+dt) in C]      (sink/source)
//  -F_C dt     = sum_a x_a(t) (1[Gamma_a(t+dt) in C] - 1[Gamma_a(t) in C])  (net inflow)
// so that  mu(t+dt) - mu(t) = (sigma - F) dt  holds to rounding.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "geotransport/common.hpp"
#include "geotransport/gqs.hpp"

namespace geotransport {

using CellField = Eigen::MatrixXd;  // n_p x n_phi

struct CellIndex {
  int i = 0;
  int k = 0;
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

class CellGrid {
 public:
  CellGrid(int n_p = 20, int n_phi = 20) : n_p_(n_p), n_phi_(n_phi) {
    if (n_p < 1 || n_phi < 1) throw ValidationError("grid needs at least one cell per axis");
  }

  int n_p() const { return n_p_; }
  int n_phi() const { return n_phi_; }
  double delta_p() const { return 1.0 / n_p_; }
  double delta_phi() const { return kTwoPi / n_phi_; }

  // Half-open cells; p = 1 belongs to the last row, phi is wrapped.
  CellIndex cell_of(const BlochPoint& z) const {
    int i = static_cast<int>(std::floor(z.p * n_p_));
    i = std::clamp(i, 0, n_p_ - 1);
    int k = static_cast<int>(std::floor(wrap_angle(z.phi) / kTwoPi * n_phi_));
    k = std::clamp(k, 0, n_phi_ - 1);
    return {i, k};
  }

  CellField zeros() const { return CellField::Zero(n_p_, n_phi_); }

  // Centre of cell (i, k).
  BlochPoint centre(int i, int k) const {
    return {(i + 0.5) * delta_p(), (k + 0.5) * delta_phi()};
  }

 private:
  int n_p_;
  int n_phi_;
};

// Undefined particles carry the placeholder (0, 0), i.e. land in cell (0, 0).
inline CellIndex particle_cell(const CellGrid& grid, const Particle& particle) {
  return particle.defined ? grid.cell_of(particle.gamma) : CellIndex{0, 0};
}

inline CellField coarse_grain(const GeometricQuantumState& gqs, const CellGrid& grid) {
  CellField mu = grid.zeros();
  for (const auto& particle : gqs.particles) {
    const CellIndex c = particle_cell(grid, particle);
    mu(c.i, c.k) += particle.x;
  }
  return mu;
}

struct StepFields {
  CellField flux;      // F: net outflow rate
  CellField sigma;     // sink/source rate
  CellField flux_p;    // cell-summed x * dp/dt
  CellField flux_phi;  // cell-summed x * dphi/dt
};

inline StepFields step_fields(const GeometricQuantumState& now, const GeometricQuantumState& next,
                              const CellGrid& grid, double dt) {
  if (now.size() != next.size()) {
    throw ValidationError("snapshots have different particle counts (" + std::to_string(now.size()) +
                          " vs " + std::to_string(next.size()) + ")");
  }
  if (!(dt > 0.0)) throw ValidationError("dt must be positive");
  StepFields out{grid.zeros(), grid.zeros(), grid.zeros(), grid.zeros()};
  for (std::size_t a = 0; a < now.size(); ++a) {
    const Particle& before = now.particles[a];
    const Particle& after = next.particles[a];
    const CellIndex c0 = particle_cell(grid, before);
    const CellIndex c1 = particle_cell(grid, after);
    out.sigma(c1.i, c1.k) += (after.x - before.x) / dt;
    if (!(c0 == c1)) {
      out.flux(c0.i, c0.k) += before.x / dt;
      out.flux(c1.i, c1.k) -= before.x / dt;
    }
    if (before.defined && after.defined) {
      out.flux_p(c0.i, c0.k) += before.x * (after.gamma.p - before.gamma.p) / dt;
      out.flux_phi(c0.i, c0.k) += before.x * wrap_difference(after.gamma.phi - before.gamma.phi) / dt;
    }
  }
  return out;
}

struct CoarseFields {
  CellGrid grid;
  double dt = 0.0;
  std::vector<CellField> mu;        // T + 1 snapshots
  std::vector<CellField> flux;      // T steps
  std::vector<CellField> sigma;     // T steps
  std::vector<CellField> flux_p;    // T steps
  std::vector<CellField> flux_phi;  // T steps

  std::size_t steps() const { return flux.size(); }
};

// Streams snapshots into CoarseFields without keeping them.
class FieldAccumulator {
 public:
  FieldAccumulator(CellGrid grid, double dt) {
    if (!(dt > 0.0)) throw ValidationError("dt must be positive");
    fields_.grid = grid;
    fields_.dt = dt;
  }

  void push(GeometricQuantumState gqs) {
    fields_.mu.push_back(coarse_grain(gqs, fields_.grid));
    undefined_ = std::max(undefined_, gqs.undefined_count());
    if (previous_) {
      StepFields step = step_fields(*previous_, gqs, fields_.grid, fields_.dt);
      fields_.flux.push_back(std::move(step.flux));
      fields_.sigma.push_back(std::move(step.sigma));
      fields_.flux_p.push_back(std::move(step.flux_p));
      fields_.flux_phi.push_back(std::move(step.flux_phi));
    }
    previous_ = std::move(gqs);
  }

  // Largest number of coordinate-undefined particles seen in one snapshot.
  std::size_t max_undefined() const { return undefined_; }
  const CoarseFields& fields() const { return fields_; }
  CoarseFields take() { return std::move(fields_); }

 private:
  CoarseFields fields_;
  std::optional<GeometricQuantumState> previous_;
  std::size_t undefined_ = 0;
};

inline CoarseFields accumulate_fields(const std::vector<GeometricQuantumState>& snapshots,
                                      const CellGrid& grid, double dt) {
  FieldAccumulator acc(grid, dt);
  for (const auto& s : snapshots) acc.push(s);
  return acc.take();
}

struct ContinuityReport {
  double max_residual = 0.0;
  std::size_t worst_t = 0;
  CellIndex worst_cell;
  double max_mu_sum_defect = 0.0;
  double max_sigma_sum = 0.0;
  double max_flux_sum = 0.0;
  bool passed = false;
};

inline ContinuityReport check_continuity(const CoarseFields& fields, double tolerance = 1e-8) {
  ContinuityReport r;
  if (fields.mu.size() != fields.steps() + 1 || fields.sigma.size() != fields.steps()) {
    throw ValidationError("incomplete coarse fields");
  }
  for (const auto& mu : fields.mu) {
    r.max_mu_sum_defect = std::max(r.max_mu_sum_defect, std::abs(mu.sum() - 1.0));
  }
  for (std::size_t t = 0; t < fields.steps(); ++t) {
    r.max_sigma_sum = std::max(r.max_sigma_sum, std::abs(fields.sigma[t].sum()) * fields.dt);
    r.max_flux_sum = std::max(r.max_flux_sum, std::abs(fields.flux[t].sum()) * fields.dt);
    const CellField residual =
        fields.mu[t + 1] - fields.mu[t] - (fields.sigma[t] - fields.flux[t]) * fields.dt;
    Eigen::Index i = 0;
    Eigen::Index k = 0;
    const double worst = residual.cwiseAbs().maxCoeff(&i, &k);
    if (worst > r.max_residual) {
      r.max_residual = worst;
      r.worst_t = t;
      r.worst_cell = {static_cast<int>(i), static_cast<int>(k)};
    }
  }
  r.passed = r.max_residual <= tolerance && r.max_mu_sum_defect <= tolerance &&
             r.max_sigma_sum <= tolerance && r.max_flux_sum <= tolerance;
  return r;
}

// Neighbour sums of the diffusion model: p-neighbours use a reflecting
// closure (a missing neighbour is replaced by the cell itself), phi wraps.
struct NeighbourSums {
  CellField p;
  CellField phi;
};

inline NeighbourSums neighbour_sums(const CellField& mu) {
  const Eigen::Index np = mu.rows();
  const Eigen::Index nf = mu.cols();
  NeighbourSums out{CellField(np, nf), CellField(np, nf)};
  for (Eigen::Index i = 0; i < np; ++i) {
    for (Eigen::Index k = 0; k < nf; ++k) {
      const double up = i + 1 < np ? mu(i + 1, k) : mu(i, k);
      const double down = i > 0 ? mu(i - 1, k) : mu(i, k);
      out.p(i, k) = up + down;
      out.phi(i, k) = mu(i, (k + 1) % nf) + mu(i, (k + nf - 1) % nf);
    }
  }
  return out;
}

// gamma_p (mu_{i+1} + mu_{i-1}) + gamma_phi (mu_{k+1} + mu_{k-1}) - gamma_loss mu.
inline CellField diffusion_rate(const CellField& mu, double gamma_p, double gamma_phi) {
  const NeighbourSums n = neighbour_sums(mu);
  return gamma_p * n.p + gamma_phi * n.phi - 2.0 * (gamma_p + gamma_phi) * mu;
}

struct DiffusionFit {
  double gamma_p = 0.0;
  double gamma_phi = 0.0;
  double gamma_loss = 0.0;
  double residual = 0.0;  // ||model - data|| / ||data||
  std::size_t samples = 0;
  bool clamped = false;
};

// Least squares over all cells and steps t >= t_start of the forward
// difference (mu(t+1) - mu(t)) / dt against the model at mu(t), with
// gamma_loss tied to 2 (gamma_p + gamma_phi). Negative coefficients are
// clamped to zero and the other refitted; rank-deficient data resolve to
// the minimum-norm solution.
inline DiffusionFit fit_diffusion(const CoarseFields& fields, std::size_t t_start = 100) {
  if (fields.mu.size() < 2 || t_start + 10 > fields.mu.size() - 1) {
    throw ValidationError("diffusion fit needs at least 10 steps after t_start = " +
                          std::to_string(t_start) + " (have " +
                          std::to_string(fields.mu.size() > 0 ? fields.mu.size() - 1 : 0) + ")");
  }
  const std::size_t steps = fields.mu.size() - 1 - t_start;
  const Eigen::Index cells = fields.mu.front().size();
  const Eigen::Index rows = static_cast<Eigen::Index>(steps) * cells;
  Eigen::MatrixXd design(rows, 2);
  Eigen::VectorXd target(rows);
  Eigen::Index row = 0;
  for (std::size_t t = t_start; t + 1 < fields.mu.size(); ++t) {
    const CellField& mu = fields.mu[t];
    const NeighbourSums n = neighbour_sums(mu);
    const CellField dmu = (fields.mu[t + 1] - mu) / fields.dt;
    for (Eigen::Index c = 0; c < cells; ++c) {
      design(row, 0) = n.p(c) - 2.0 * mu(c);
      design(row, 1) = n.phi(c) - 2.0 * mu(c);
      target(row) = dmu(c);
      ++row;
    }
  }

  auto solve = [](const Eigen::MatrixXd& a, const Eigen::VectorXd& b) -> Eigen::VectorXd {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
    cod.setThreshold(1e-12);
    return cod.solve(b);
  };

  DiffusionFit fit;
  fit.samples = static_cast<std::size_t>(rows);
  Eigen::Vector2d gamma = solve(design, target);
  if (gamma[0] < 0.0 || gamma[1] < 0.0) {
    fit.clamped = true;
    // Best single-coefficient fits with the other pinned at zero.
    Eigen::Vector2d best = Eigen::Vector2d::Zero();
    double best_cost = target.squaredNorm();
    for (int keep = 0; keep < 2; ++keep) {
      Eigen::Vector2d candidate = Eigen::Vector2d::Zero();
      candidate[keep] = std::max(0.0, solve(design.col(keep), target)[0]);
      const double cost = (design * candidate - target).squaredNorm();
      if (cost < best_cost) {
        best_cost = cost;
        best = candidate;
      }
    }
    gamma = best;
  }
  fit.gamma_p = gamma[0];
  fit.gamma_phi = gamma[1];
  fit.gamma_loss = 2.0 * (fit.gamma_p + fit.gamma_phi);
  const double scale = target.norm();
  fit.residual = scale > 0.0 ? (design * gamma - target).norm() / scale : 0.0;
  return fit;
}

// Mean of mu over snapshots t_start + 1 ... T.
inline CellField time_average_mu(const CoarseFields& fields, std::size_t t_start) {
  if (fields.mu.empty() || t_start >= fields.mu.size() - 1) {
    throw ValidationError("time average needs t_start < T");
  }
  CellField avg = fields.grid.zeros();
  for (std::size_t t = t_start + 1; t < fields.mu.size(); ++t) avg += fields.mu[t];
  return avg / static_cast<double>(fields.mu.size() - 1 - t_start);
}

inline double shannon_entropy(const CellField& mu) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < mu.size(); ++c) {
    if (mu(c) > 0.0) s -= mu(c) * std::log(mu(c));
  }
  return s;
}

inline std::vector<double> entropy_series(const CoarseFields& fields) {
  std::vector<double> out;
  out.reserve(fields.mu.size());
  for (const auto& mu : fields.mu) out.push_back(shannon_entropy(mu));
  return out;
}

// First step n from which the series stays within rel_tol over every
// window [m, m + window], m >= n, relative to the later value.
inline std::optional<std::size_t> plateau_onset(const std::vector<double>& series,
                                                std::size_t window = 50, double rel_tol = 0.01) {
  if (series.size() <= window) return std::nullopt;
  const std::size_t last = series.size() - 1 - window;
  auto settled = [&](std::size_t m) {
    const double later = series[m + window];
    return later > 0.0 && std::abs(later - series[m]) < rel_tol * std::abs(later);
  };
  std::optional<std::size_t> onset;
  for (std::size_t m = last + 1; m-- > 0;) {
    if (!settled(m)) break;
    onset = m;
  }
  return onset;
}

// Connected components of particles with x >= weight_cut, linked when their
// FS distance is below linkage_eps.
inline std::size_t cluster_count(const GeometricQuantumState& gqs, double linkage_eps = 0.05,
                                 double weight_cut = 1e-6) {
  std::vector<std::size_t> kept;
  for (std::size_t a = 0; a < gqs.size(); ++a) {
    const Particle& q = gqs.particles[a];
    if (q.defined && q.x >= weight_cut) kept.push_back(a);
  }
  std::vector<std::size_t> parent(kept.size());
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  std::size_t components = kept.size();
  for (std::size_t a = 0; a < kept.size(); ++a) {
    for (std::size_t b = a + 1; b < kept.size(); ++b) {
      if (fs_distance(gqs.particles[kept[a]].gamma, gqs.particles[kept[b]].gamma) >= linkage_eps) continue;
      const std::size_t ra = find(a);
      const std::size_t rb = find(b);
      if (ra != rb) {
        parent[ra] = rb;
        --components;
      }
    }
  }
  return components;
}

}  // namespace geotransport
