// pipeline.hpp
// Subcommand implementations shared by the CLI, the acceptance suite and
// tests. Each command writes its files into an output directory, records
// them in run_manifest.json and returns a process exit code.

#pragma once

#include <filesystem>
#include <iomanip>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "geotransport/config.hpp"
#include "geotransport/gqs.hpp"
#include "geotransport/hamflow.hpp"
#include "geotransport/io.hpp"
#include "geotransport/kinetics.hpp"
#include "geotransport/spinchain.hpp"
#include "geotransport/transport.hpp"

#ifndef GEOTRANSPORT_VERSION
#define GEOTRANSPORT_VERSION "0.0.0"
#endif

namespace geotransport {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int validation = 2;
inline constexpr int numeric_gate = 3;
inline constexpr int io = 4;
}  // namespace exit_code

namespace detail {

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw IoError("cannot create output directory " + dir.string() + (ec ? ": " + ec.message() : ""));
  }
}

// Adds `files` (relative to dir) to dir/run_manifest.json. No timestamps, so
// identical runs give identical manifests.
inline void record_outputs(const std::filesystem::path& dir, const std::string& command,
                           const nlohmann::ordered_json& config, const std::vector<std::string>& files) {
  const auto path = dir / "run_manifest.json";
  nlohmann::ordered_json manifest;
  if (std::filesystem::exists(path)) {
    std::ifstream in = io::open_input(path);
    try {
      manifest = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("existing manifest " + path.string() + " is not valid JSON: " + e.what());
    }
  }
  manifest["generator"] = "geotransport";
  manifest["version"] = GEOTRANSPORT_VERSION;
  manifest["commands"][command]["config"] = config;
  for (const auto& f : files) {
    manifest["outputs"][f] = {{"sha256", io::sha256_file(dir / f)},
                              {"bytes", std::filesystem::file_size(dir / f)},
                              {"command", command}};
  }
  std::ofstream out = io::open_output(path);
  out << manifest.dump(2) << '\n';
  io::finish(out, path.string());
}

inline std::vector<double> step_times(const CoarseFields& f, double t0) {
  std::vector<double> t;
  for (std::size_t n = 0; n < f.mu.size(); ++n) t.push_back(t0 + f.dt * static_cast<double>(n));
  return t;
}

// Writes the coarse-field files and returns their names.
inline std::vector<std::string> write_fields(const std::filesystem::path& dir, const CoarseFields& f,
                                             const std::vector<double>& times, bool cells, bool entropy) {
  std::vector<std::string> files;
  const std::vector<double> step_t(times.begin(), times.end() - 1);
  if (cells) {
    auto emit = [&](const std::string& name, const std::vector<CellField>& series, const std::vector<double>& t) {
      std::ofstream out = io::open_output(dir / name);
      io::write_cells(out, series, t);
      io::finish(out, name);
      files.push_back(name);
    };
    emit("cells_mu.csv", f.mu, times);
    emit("cells_flux.csv", f.flux, step_t);
    emit("cells_sigma.csv", f.sigma, step_t);
    std::ofstream out = io::open_output(dir / "cells_flux_vector.csv");
    io::write_flux_vectors(out, f, step_t);
    io::finish(out, "cells_flux_vector.csv");
    files.push_back("cells_flux_vector.csv");
  }
  if (entropy) {
    std::ofstream out = io::open_output(dir / "entropy.csv");
    io::write_series(out, "entropy", times, entropy_series(f));
    io::finish(out, "entropy.csv");
    files.push_back("entropy.csv");
  }
  return files;
}

inline nlohmann::ordered_json fit_json(const DiffusionFit& fit, std::size_t t_start) {
  return {{"gamma_p", fit.gamma_p},
          {"gamma_phi", fit.gamma_phi},
          {"gamma_loss", fit.gamma_loss},
          {"gamma_loss_relation", "gamma_loss = 2 (gamma_p + gamma_phi)"},
          {"residual", fit.residual},
          {"samples", fit.samples},
          {"t_start", t_start},
          {"clamped", fit.clamped}};
}

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out = io::open_output(path);
  out << j.dump(2) << '\n';
  io::finish(out, path.string());
}

inline void print_continuity(std::ostream& log, const ContinuityReport& r) {
  log << "continuity: max |dmu - (sigma - F) dt| = " << r.max_residual << " (step " << r.worst_t
      << ", cell " << r.worst_cell.i << "," << r.worst_cell.k << ")\n"
      << "  max |sum mu - 1| = " << r.max_mu_sum_defect << ", max |sum sigma| dt = " << r.max_sigma_sum
      << ", max |sum F| dt = " << r.max_flux_sum << "\n"
      << "  " << (r.passed ? "PASS" : "FAIL") << " (tolerance 1e-8)\n";
}

}  // namespace detail

struct SimulationSummary {
  CoarseFields fields;
  ContinuityReport continuity;
  std::size_t max_undefined = 0;
  std::vector<std::size_t> clusters;
};

// Global evolution of the configured chain, streamed snapshot by snapshot
// into an optional visitor and the coarse-field accumulator.
inline SimulationSummary run_simulation(const RunConfig& cfg,
                                        const std::function<void(const GeometricQuantumState&)>& visit = {}) {
  cfg.validate();
  const JointState psi0 = initial_state(cfg);
  const Propagator prop = make_propagator(build_hamiltonian(cfg.hamiltonian), cfg.dt);
  FieldAccumulator acc(CellGrid(cfg.n_p, cfg.n_phi), cfg.dt);
  SimulationSummary summary;
  const bool clusters = cfg.emits("clusters");
  evolve_each(psi0, prop, cfg.steps, [&](long, const JointState& s) {
    GeometricQuantumState gqs = extract_gqs(s);
    if (visit) visit(gqs);
    if (clusters) summary.clusters.push_back(cluster_count(gqs, cfg.cluster_eps, cfg.cluster_weight_cut));
    acc.push(std::move(gqs));
  });
  summary.max_undefined = acc.max_undefined();
  summary.fields = acc.take();
  summary.continuity = check_continuity(summary.fields);
  return summary;
}

inline int cmd_simulate(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto& dir = cfg.output_dir;
  detail::ensure_dir(dir);
  std::vector<std::string> files;
  std::optional<std::ofstream> particles_out;
  std::optional<io::ParticleWriter> writer;
  if (cfg.emits("particles")) {
    particles_out.emplace(io::open_output(dir / "particles.csv"));
    writer.emplace(*particles_out);
  }
  const SimulationSummary s = run_simulation(cfg, [&](const GeometricQuantumState& g) {
    if (writer) writer->write(g);
  });
  if (particles_out) {
    io::finish(*particles_out, "particles.csv");
    particles_out->close();
    files.push_back("particles.csv");
  }
  const auto times = detail::step_times(s.fields, 0.0);
  for (auto& f : detail::write_fields(dir, s.fields, times, cfg.emits("cells"), cfg.emits("entropy"))) {
    files.push_back(f);
  }
  if (cfg.emits("clusters")) {
    std::vector<double> counts(s.clusters.begin(), s.clusters.end());
    std::ofstream out = io::open_output(dir / "clusters.csv");
    io::write_series(out, "clusters", times, counts);
    io::finish(out, "clusters.csv");
    files.push_back("clusters.csv");
  }
  if (cfg.emits("fit")) {
    const DiffusionFit fit = fit_diffusion(s.fields, cfg.transient_cut);
    detail::write_json(dir / "fit.json", detail::fit_json(fit, cfg.transient_cut));
    files.push_back("fit.json");
  }
  detail::record_outputs(dir, "simulate", to_json(cfg), files);

  log << "simulate: n_env = " << cfg.hamiltonian.n_env << ", " << cfg.steps << " steps at dt = " << cfg.dt
      << ", " << cfg.hamiltonian.env_dim() << " particles per snapshot\n"
      << "  coordinate-undefined particles (x <= 1e-14): up to " << s.max_undefined
      << " per snapshot, placed in cell (0, 0)\n";
  const auto entropy = entropy_series(s.fields);
  if (const auto onset = plateau_onset(entropy, cfg.plateau_window, cfg.plateau_tol)) {
    log << "  entropy plateau from step " << *onset << " (S = " << entropy[*onset] << ")\n";
  } else {
    log << "  entropy has not settled (" << cfg.plateau_tol * 100 << "% over " << cfg.plateau_window
        << " steps)\n";
  }
  detail::print_continuity(log, s.continuity);
  return s.continuity.passed ? exit_code::ok : exit_code::numeric_gate;
}

inline CoarseFields coarse_fields_from_particles(const std::filesystem::path& particles, const CellGrid& grid,
                                                 double* t0 = nullptr) {
  std::ifstream in = io::open_input(particles);
  const auto snapshots = io::read_particles(in, particles.string());
  std::vector<double> times;
  for (const auto& s : snapshots) times.push_back(s.time);
  const double dt = io::uniform_step(times, particles.string());
  if (t0 != nullptr) *t0 = times.front();
  return accumulate_fields(snapshots, grid, dt);
}

inline int cmd_coarsegrain(const std::filesystem::path& particles, const RunConfig& cfg, std::ostream& log) {
  const auto& dir = cfg.output_dir;
  detail::ensure_dir(dir);
  double t0 = 0.0;
  const CoarseFields f = coarse_fields_from_particles(particles, CellGrid(cfg.n_p, cfg.n_phi), &t0);
  const auto files = detail::write_fields(dir, f, detail::step_times(f, t0), true, true);
  nlohmann::ordered_json config = {{"particles", particles.filename().string()},
                                   {"grid", {{"n_p", cfg.n_p}, {"n_phi", cfg.n_phi}}}};
  detail::record_outputs(dir, "coarsegrain", config, files);
  const ContinuityReport r = check_continuity(f);
  log << "coarsegrain: " << f.mu.size() << " snapshots on a " << cfg.n_p << "x" << cfg.n_phi << " grid\n";
  detail::print_continuity(log, r);
  return r.passed ? exit_code::ok : exit_code::numeric_gate;
}

inline int cmd_fit_diffusion(const std::filesystem::path& cells_mu, std::size_t t_start,
                             const std::filesystem::path& dir, std::ostream& log) {
  detail::ensure_dir(dir);
  std::ifstream in = io::open_input(cells_mu);
  io::CellSeries series = io::read_cells(in, cells_mu.string());
  CoarseFields f;
  f.grid = CellGrid(static_cast<int>(series.fields.front().rows()), static_cast<int>(series.fields.front().cols()));
  f.dt = io::uniform_step(series.times, cells_mu.string());
  f.mu = std::move(series.fields);
  const DiffusionFit fit = fit_diffusion(f, t_start);
  detail::write_json(dir / "fit.json", detail::fit_json(fit, t_start));
  detail::record_outputs(dir, "fit-diffusion", {{"cells_mu", cells_mu.filename().string()}, {"t_start", t_start}},
                         {"fit.json"});
  log << std::setprecision(10) << "fit-diffusion: gamma_p = " << fit.gamma_p << ", gamma_phi = " << fit.gamma_phi
      << ", gamma_loss = 2 (gamma_p + gamma_phi) = " << fit.gamma_loss << "\n"
      << "  relative residual " << fit.residual << " over " << fit.samples << " cell-steps\n";
  if (fit.clamped) log << "  warning: unconstrained fit had a negative coefficient; clamped to zero\n";
  return exit_code::ok;
}

struct KineticVerifyOptions {
  bool zero_v = false;  // drop all couplings
  bool skew_v = false;  // negate V_ab for a > b, breaking V_ab^dagger = V_ba
};

struct KineticVerifyReport {
  double max_deviation = 0.0;
  double h_alpha_defect = 0.0;
  double v_pairing_defect = 0.0;
  std::string failure;  // set when the integration itself aborted
  bool passed = false;
};

inline KineticVerifyReport kinetic_verify(const RunConfig& cfg, const KineticVerifyOptions& opts = {}) {
  cfg.validate();
  if (cfg.hamiltonian.n_env > 4) {
    throw ResourceError("kinetic-verify supports n_env <= 4 (got " + std::to_string(cfg.hamiltonian.n_env) + ")");
  }
  KineticOperators ops = build_kinetic_operators(decompose_hamiltonian(cfg.hamiltonian));
  for (std::size_t a = 0; a < ops.d_e(); ++a) {
    for (std::size_t b = 0; b < ops.d_e(); ++b) {
      if (a == b) continue;
      if (opts.zero_v) ops.v(a, b).setZero();
      if (opts.skew_v && a > b) ops.v(a, b) = -ops.v(a, b);
    }
  }
  ops.rebuild_neighbours();

  KineticVerifyReport r;
  r.h_alpha_defect = ops.max_h_alpha_defect();
  r.v_pairing_defect = ops.max_v_pairing_defect();
  const JointState psi0 = initial_state(cfg);
  std::vector<PhiEnsemble> kinetic;
  try {
    kinetic = kinetic_evolve(ops, PhiEnsemble::from_joint(psi0), cfg.dt, cfg.steps);
  } catch (const NumericError& e) {
    r.failure = e.what();
    r.max_deviation = std::numeric_limits<double>::infinity();
    return r;
  }
  const Propagator prop = make_propagator(build_dense_hamiltonian(cfg.hamiltonian), cfg.dt);
  evolve_each(psi0, prop, cfg.steps, [&](long n, const JointState& s) {
    const MatrixXc diff = kinetic[static_cast<std::size_t>(n)].phis - s.amplitudes();
    r.max_deviation = std::max(r.max_deviation, diff.colwise().norm().maxCoeff());
  });
  r.passed = r.max_deviation < 1e-7 && r.h_alpha_defect < 1e-12 && r.v_pairing_defect < 1e-12;
  return r;
}

inline int cmd_kinetic_verify(const RunConfig& cfg, const KineticVerifyOptions& opts, std::ostream& log) {
  const KineticVerifyReport r = kinetic_verify(cfg, opts);
  log << "kinetic-verify: n_env = " << cfg.hamiltonian.n_env << ", " << cfg.steps << " steps at dt = " << cfg.dt
      << (opts.zero_v ? " [V zeroed]" : "") << (opts.skew_v ? " [V skewed]" : "") << "\n";
  if (!r.failure.empty()) log << "  integration aborted: " << r.failure << "\n";
  log << "  max_alpha |Phi_kinetic - Phi_global| = " << r.max_deviation << " (gate 1e-7)\n"
      << "  max |H_alpha - H_alpha^dagger| = " << r.h_alpha_defect << " (gate 1e-12)\n"
      << "  max |V_ab^dagger - V_ba| = " << r.v_pairing_defect << " (gate 1e-12)\n"
      << "  " << (r.passed ? "PASS" : "FAIL") << "\n";
  return r.passed ? exit_code::ok : exit_code::numeric_gate;
}

struct IsolatedReport {
  double rigidity = 0.0;
  double oracle_deviation = 0.0;
  double energy_drift = 0.0;
  LiouvilleReport liouville;
  bool truncated = false;
  bool passed = false;
};

// Points drawn uniformly in the chart whose unitary orbit keeps at least
// `clearance` from both poles.
inline std::vector<BlochPoint> sample_cloud(const EnergyFunction& ef, int points, std::uint64_t seed,
                                            double clearance) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<BlochPoint> cloud;
  for (long tries = 0; static_cast<int>(cloud.size()) < points; ++tries) {
    if (tries > 1000L * points) {
      throw ValidationError("cannot place the cloud: no orbits keep " + std::to_string(clearance) +
                            " from the poles under this Hamiltonian");
    }
    const BlochPoint z{u(rng), kTwoPi * u(rng)};
    if (orbit_pole_clearance(ef, z) >= clearance) cloud.push_back(z);
  }
  return cloud;
}

inline IsolatedReport isolated_run(const RunConfig& cfg, std::vector<Trajectory>* trajectories = nullptr) {
  if (!(cfg.dt > 0.0) || cfg.steps < 1) throw ValidationError("run.dt and run.steps must be positive");
  const auto& c = cfg.isolated.hamiltonian;
  const EnergyFunction ef = EnergyFunction::from_pauli(c[0], c[1], c[2], c[3]);
  const auto cloud = sample_cloud(ef, cfg.isolated.points, cfg.isolated.seed, cfg.isolated.min_clearance);
  IsolatedReport r;
  std::vector<Trajectory> trajs;
  for (const auto& z : cloud) {
    trajs.push_back(integrate_flow(ef, z, cfg.dt, cfg.steps));
    r.truncated = r.truncated || trajs.back().truncated;
  }
  if (!r.truncated) {
    r.rigidity = check_rigidity(ef, cloud, cfg.dt, cfg.steps);
    for (std::size_t a = 0; a < trajs.size(); ++a) {
      r.energy_drift = std::max(r.energy_drift, max_energy_drift(ef, trajs[a]));
      for (std::size_t n = 0; n < trajs[a].size(); ++n) {
        const BlochPoint exact = exact_flow(ef, cloud[a], cfg.dt * static_cast<double>(n));
        r.oracle_deviation = std::max(r.oracle_deviation, fs_distance(trajs[a].point(n), exact));
      }
    }
    GeometricQuantumState gqs;
    for (const auto& z : cloud) gqs.particles.push_back({1.0 / static_cast<double>(cloud.size()), z, embed(z), true});
    r.liouville = liouville_check(ef, gqs, cfg.dt, cfg.steps);
  }
  r.passed = !r.truncated && r.rigidity < 1e-6 && r.oracle_deviation < 1e-8 && r.energy_drift < 1e-8 &&
             r.liouville.max_weight_drift <= 1e-12;
  if (trajectories != nullptr) *trajectories = std::move(trajs);
  return r;
}

inline int cmd_isolated(const RunConfig& cfg, std::ostream& log) {
  const auto& dir = cfg.output_dir;
  detail::ensure_dir(dir);
  std::vector<Trajectory> trajs;
  const IsolatedReport r = isolated_run(cfg, &trajs);
  {
    std::ofstream out = io::open_output(dir / "trajectories.csv");
    out << "t,point,p,phi\n";
    for (std::size_t a = 0; a < trajs.size(); ++a) {
      for (std::size_t n = 0; n < trajs[a].size(); ++n) {
        const BlochPoint z = trajs[a].point(n);
        out << io::format_real(cfg.dt * static_cast<double>(n)) << ',' << a << ',' << io::format_real(z.p) << ','
            << io::format_real(z.phi) << '\n';
      }
    }
    io::finish(out, "trajectories.csv");
  }
  const nlohmann::ordered_json report = {{"rigidity", r.rigidity},
                                         {"oracle_deviation", r.oracle_deviation},
                                         {"energy_drift", r.energy_drift},
                                         {"liouville_weight_drift", r.liouville.max_weight_drift},
                                         {"liouville_area_drift", r.liouville.max_area_drift},
                                         {"liouville_particles_checked", r.liouville.particles_checked},
                                         {"truncated", r.truncated},
                                         {"passed", r.passed}};
  detail::write_json(dir / "isolated_report.json", report);
  nlohmann::ordered_json config = to_json(cfg);
  detail::record_outputs(dir, "isolated", {{"run", config["run"]}, {"isolated", config["isolated"]}},
                         {"trajectories.csv", "isolated_report.json"});

  log << "isolated: " << trajs.size() << " points, " << cfg.steps << " RK4 steps at dt = " << cfg.dt << "\n";
  if (r.truncated) {
    log << "  FAIL: a trajectory reached a pole of the chart; reduce dt or raise isolated.min_clearance\n";
    return exit_code::numeric_gate;
  }
  log << "  rigidity: max |d_FS(t) - d_FS(0)| = " << r.rigidity << " (gate 1e-6)\n"
      << "  exact-flow oracle: max d_FS = " << r.oracle_deviation << " (gate 1e-8)\n"
      << "  energy drift: " << r.energy_drift << " (gate 1e-8)\n"
      << "  weights: max drift " << r.liouville.max_weight_drift << "; tracer area drift "
      << r.liouville.max_area_drift << " over " << r.liouville.particles_checked << " particles\n";
  if (r.energy_drift >= 1e-8) {
    log << "  FAIL: energy is not conserved along the integrated flow; dt = " << cfg.dt << " is too large\n";
  }
  log << "  " << (r.passed ? "PASS" : "FAIL") << "\n";
  return r.passed ? exit_code::ok : exit_code::numeric_gate;
}

}  // namespace geotransport
