// geotransport command-line interface.
//
//   geotransport simulate       [--config FILE] [flags]
//   geotransport coarsegrain    PARTICLES_CSV [--n-p N --n-phi N] [-o DIR]
//   geotransport isolated       [--hamiltonian c0 cx cy cz] [--points N] ...
//   geotransport kinetic-verify [--n-env N] [--zero-v] [--skew-v] ...
//   geotransport fit-diffusion  CELLS_MU_CSV [--t-start N] [-o DIR]
//   geotransport verify         [--only N]
//
// Flags override values loaded with --config.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "geotransport/config.hpp"
#include "geotransport/pipeline.hpp"
#include "geotransport/testing/acceptance.hpp"

namespace {

using namespace geotransport;

struct Overrides {
  std::string config_path;
  std::optional<int> n_env;
  std::optional<double> j_z;
  std::vector<double> field;
  std::optional<std::string> coupling;
  std::optional<int> system_site;
  std::optional<double> dt;
  std::optional<long> steps;
  std::optional<std::string> initial;
  std::optional<std::uint64_t> seed;
  std::optional<int> n_p;
  std::optional<int> n_phi;
  std::optional<std::size_t> transient_cut;
  std::optional<double> cluster_eps;
  std::optional<double> cluster_weight_cut;
  std::optional<std::string> output_dir;
  std::vector<std::string> emit;
  std::vector<double> isolated_h;
  std::optional<int> points;
  std::optional<std::uint64_t> cloud_seed;
  std::optional<double> min_clearance;

  RunConfig resolve() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    auto& h = cfg.hamiltonian;
    if (n_env) h.n_env = *n_env;
    if (j_z) h.j_z = *j_z;
    if (!field.empty()) h.field = {field[0], field[1], field[2]};
    if (coupling) h.coupling_range = parse_coupling(*coupling);
    if (system_site) h.system_site = *system_site;
    if (dt) cfg.dt = *dt;
    if (steps) cfg.steps = *steps;
    if (initial) cfg.initial.kind = parse_initial_kind(*initial);
    if (seed) cfg.initial.seed = *seed;
    if (n_p) cfg.n_p = *n_p;
    if (n_phi) cfg.n_phi = *n_phi;
    if (transient_cut) cfg.transient_cut = *transient_cut;
    if (cluster_eps) cfg.cluster_eps = *cluster_eps;
    if (cluster_weight_cut) cfg.cluster_weight_cut = *cluster_weight_cut;
    if (output_dir) cfg.output_dir = *output_dir;
    if (!emit.empty()) cfg.emit = std::set<std::string>(emit.begin(), emit.end());
    if (!isolated_h.empty()) cfg.isolated.hamiltonian = {isolated_h[0], isolated_h[1], isolated_h[2], isolated_h[3]};
    if (points) cfg.isolated.points = *points;
    if (cloud_seed) cfg.isolated.seed = *cloud_seed;
    if (min_clearance) cfg.isolated.min_clearance = *min_clearance;
    return cfg;
  }
};

void add_config(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "Run configuration file")->check(CLI::ExistingFile);
}

void add_output(CLI::App* cmd, Overrides& o) { cmd->add_option("-o,--output-dir", o.output_dir, "Output directory"); }

void add_chain(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--n-env", o.n_env, "Environment qubits");
  cmd->add_option("--j-z", o.j_z, "Ising coupling J_z (1 antiferromagnetic, -1 ferromagnetic)");
  cmd->add_option("--field", o.field, "Field bx by bz")->expected(3);
  cmd->add_option("--coupling", o.coupling, "nearest | next_nearest");
  cmd->add_option("--system-site", o.system_site, "Chain site of the system qubit");
  cmd->add_option("--initial", o.initial, "all_up | custom | random");
  cmd->add_option("--seed", o.seed, "Seed for --initial random");
}

void add_run(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--dt", o.dt, "Time step");
  cmd->add_option("--steps", o.steps, "Number of steps");
}

void add_grid(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--n-p", o.n_p, "Cells along p");
  cmd->add_option("--n-phi", o.n_phi, "Cells along phi");
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Information transport in qubit state space"};
  app.set_version_flag("--version", std::string(GEOTRANSPORT_VERSION));
  app.require_subcommand(1);
  Overrides o;

  auto* simulate = app.add_subcommand("simulate", "Evolve the chain and write particle and cell files");
  add_config(simulate, o);
  add_chain(simulate, o);
  add_run(simulate, o);
  add_grid(simulate, o);
  add_output(simulate, o);
  simulate->add_option("--transient-cut", o.transient_cut, "Steps excluded from the diffusion fit");
  simulate->add_option("--cluster-eps", o.cluster_eps, "Cluster linkage distance (FS radians)");
  simulate->add_option("--cluster-weight-cut", o.cluster_weight_cut, "Ignore lighter particles in clustering");
  simulate->add_option("--emit", o.emit, "Outputs: particles cells entropy clusters fit");

  std::string particles_path;
  auto* coarsegrain = app.add_subcommand("coarsegrain", "Coarse-grain a particles.csv file and check continuity");
  coarsegrain->add_option("particles", particles_path, "particles.csv")->required()->check(CLI::ExistingFile);
  add_config(coarsegrain, o);
  add_grid(coarsegrain, o);
  add_output(coarsegrain, o);

  auto* isolated = app.add_subcommand("isolated", "Hamiltonian flow of an isolated qubit with rigidity checks");
  add_config(isolated, o);
  add_run(isolated, o);
  add_output(isolated, o);
  isolated->add_option("--hamiltonian", o.isolated_h, "H = c0 I + cx sx + cy sy + cz sz")->expected(4);
  isolated->add_option("--points", o.points, "Cloud size");
  isolated->add_option("--cloud-seed", o.cloud_seed, "Cloud sampling seed");
  isolated->add_option("--min-clearance", o.min_clearance, "Minimum orbit distance from the poles in p");

  KineticVerifyOptions kv;
  auto* kinetic = app.add_subcommand("kinetic-verify", "Check the kinetic equations against global evolution");
  add_config(kinetic, o);
  add_chain(kinetic, o);
  add_run(kinetic, o);
  kinetic->add_flag("--zero-v", kv.zero_v, "Debug: drop all couplings V");
  kinetic->add_flag("--skew-v", kv.skew_v, "Debug: negate V_ab for a > b (breaks V pairing)");

  std::string cells_path;
  std::size_t t_start = 100;
  auto* fit = app.add_subcommand("fit-diffusion", "Fit the cell diffusion model to a cells_mu.csv file");
  fit->add_option("cells_mu", cells_path, "cells_mu.csv")->required()->check(CLI::ExistingFile);
  fit->add_option("--t-start", t_start, "First step used by the fit")->capture_default_str();
  add_config(fit, o);
  add_output(fit, o);

  int only = 0;
  auto* verify = app.add_subcommand("verify", "Run the acceptance suite");
  verify->add_option("--only", only, "Run a single criterion");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_code::validation;
  }

  // Kinetic verification defaults to the small chain it is meant for.
  if (kinetic->parsed() && !o.n_env && o.config_path.empty()) o.n_env = 3;
  if (kinetic->parsed() && !o.steps && o.config_path.empty()) o.steps = 100;
  const RunConfig cfg = o.resolve();

  if (simulate->parsed()) return cmd_simulate(cfg, std::cout);
  if (coarsegrain->parsed()) return cmd_coarsegrain(particles_path, cfg, std::cout);
  if (isolated->parsed()) return cmd_isolated(cfg, std::cout);
  if (kinetic->parsed()) return cmd_kinetic_verify(cfg, kv, std::cout);
  if (fit->parsed()) return cmd_fit_diffusion(cells_path, t_start, cfg.output_dir, std::cout);
  if (verify->parsed()) {
    const int failures = acceptance::run(std::cout, only);
    std::cout << (failures == 0 ? "verify: all criteria passed\n" : "verify: " + std::to_string(failures) + " failed\n");
    return failures == 0 ? exit_code::ok : exit_code::numeric_gate;
  }
  return exit_code::validation;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return exit_code::io;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return exit_code::validation;
  } catch (const ResourceError& e) {
    std::cerr << "resource limit: " << e.what() << "\n";
    return exit_code::validation;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return exit_code::validation;
  } catch (const NumericError& e) {
    std::cerr << "numeric gate: " << e.what() << "\n";
    return exit_code::numeric_gate;
  } catch (const DomainError& e) {
    std::cerr << "numeric gate: " << e.what() << "\n";
    return exit_code::numeric_gate;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
