#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gtest/gtest.h"

#include "geotransport/pipeline.hpp"
#include "geotransport/testing/oracles.hpp"

namespace gt = geotransport;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "geotransport_pipeline_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t data_rows(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  return n - 1;
}

gt::io::CellSeries cells(const fs::path& path) {
  std::ifstream in(path);
  return gt::io::read_cells(in, path.string());
}

nlohmann::json manifest(const fs::path& dir) { return nlohmann::json::parse(slurp(dir / "run_manifest.json")); }

gt::RunConfig small_run(const fs::path& dir, int n_env, long steps) {
  gt::RunConfig cfg;
  cfg.hamiltonian.n_env = n_env;
  cfg.steps = steps;
  cfg.output_dir = dir;
  return cfg;
}

struct CliResult {
  int code;
  std::string out;
};

CliResult cli(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / "geotransport_pipeline_test" / "cli.log";
  fs::create_directories(log.parent_path());
  const std::string cmd = std::string("\"") + GEOTRANSPORT_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

}  // namespace

// simulate

TEST(Simulate, SingleStepWritesOneRowPerParticlePerSnapshot) {
  const auto dir = fresh_dir("single_step");
  std::ostringstream log;
  EXPECT_EQ(gt::cmd_simulate(small_run(dir, 1, 1), log), gt::exit_code::ok);
  EXPECT_EQ(data_rows(dir / "particles.csv"), 4u);
  EXPECT_EQ(data_rows(dir / "cells_mu.csv"), 2u * 400u);
  EXPECT_EQ(data_rows(dir / "cells_sigma.csv"), 400u);
  EXPECT_EQ(data_rows(dir / "entropy.csv"), 2u);
  EXPECT_NE(log.str().find("PASS"), std::string::npos);
}

TEST(Simulate, ManifestHashesEveryOutput) {
  const auto dir = fresh_dir("manifest");
  auto cfg = small_run(dir, 2, 30);
  cfg.emit = {"particles", "cells", "entropy", "clusters", "fit"};
  cfg.transient_cut = 10;
  std::ostringstream log;
  ASSERT_EQ(gt::cmd_simulate(cfg, log), gt::exit_code::ok);
  const auto m = manifest(dir);
  EXPECT_EQ(m["commands"]["simulate"]["config"]["hamiltonian"]["n_env"], 2);
  std::size_t listed = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name == "run_manifest.json") continue;
    ASSERT_TRUE(m["outputs"].contains(name)) << name;
    EXPECT_EQ(m["outputs"][name]["sha256"], gt::io::sha256_file(entry.path())) << name;
    EXPECT_EQ(m["outputs"][name]["bytes"], fs::file_size(entry.path())) << name;
    ++listed;
  }
  EXPECT_EQ(listed, m["outputs"].size());
  EXPECT_EQ(listed, 8u);
  EXPECT_EQ(data_rows(dir / "clusters.csv"), 31u);
}

TEST(Simulate, EmitSelectsFiles) {
  const auto dir = fresh_dir("emit");
  auto cfg = small_run(dir, 1, 5);
  cfg.emit = {"entropy"};
  std::ostringstream log;
  ASSERT_EQ(gt::cmd_simulate(cfg, log), gt::exit_code::ok);
  EXPECT_TRUE(fs::exists(dir / "entropy.csv"));
  EXPECT_FALSE(fs::exists(dir / "particles.csv"));
  EXPECT_FALSE(fs::exists(dir / "cells_mu.csv"));
}

TEST(Simulate, OversizeChainIsResourceError) {
  std::ostringstream log;
  EXPECT_THROW(gt::cmd_simulate(small_run(fresh_dir("oversize"), gt::kMaxEnvSites + 1, 1), log), gt::ResourceError);
}

TEST(Simulate, AntiferromagneticRunRowsAndFit) {
  const auto dir = fresh_dir("antiferro");
  auto cfg = small_run(dir, 9, 500);
  cfg.emit = {"particles", "cells"};
  std::ostringstream log;
  ASSERT_EQ(gt::cmd_simulate(cfg, log), gt::exit_code::ok);
  EXPECT_EQ(data_rows(dir / "particles.csv"), 501u * 512u);
  ASSERT_EQ(gt::cmd_fit_diffusion(dir / "cells_mu.csv", 100, dir, log), gt::exit_code::ok);
  const auto fit = nlohmann::json::parse(slurp(dir / "fit.json"));
  EXPECT_TRUE(std::isfinite(fit["residual"].get<double>()));
  EXPECT_GE(fit["gamma_p"].get<double>(), 0.0);
  EXPECT_GE(fit["gamma_phi"].get<double>(), 0.0);
}

// coarsegrain

TEST(Coarsegrain, ReproducesSimulatedFields) {
  const auto sim = fresh_dir("cg_sim");
  const auto out = fresh_dir("cg_out");
  std::ostringstream log;
  ASSERT_EQ(gt::cmd_simulate(small_run(sim, 3, 40), log), gt::exit_code::ok);
  auto cfg = small_run(out, 3, 40);
  ASSERT_EQ(gt::cmd_coarsegrain(sim / "particles.csv", cfg, log), gt::exit_code::ok);
  for (const char* name : {"cells_mu.csv", "cells_flux.csv", "cells_sigma.csv"}) {
    const auto a = cells(sim / name);
    const auto b = cells(out / name);
    ASSERT_EQ(a.fields.size(), b.fields.size()) << name;
    for (std::size_t n = 0; n < a.fields.size(); ++n) {
      EXPECT_EQ(a.times[n], b.times[n]);
      EXPECT_LT((a.fields[n] - b.fields[n]).cwiseAbs().maxCoeff(), 1e-12) << name << " step " << n;
    }
  }
  EXPECT_TRUE(manifest(out)["outputs"].contains("cells_flux_vector.csv"));
}

TEST(Coarsegrain, StaticParticlesCarryNoFlux) {
  const auto dir = fresh_dir("cg_static");
  {
    std::ofstream f(dir / "particles.csv");
    f << "t,alpha,x,p,phi\n";
    for (int n = 0; n < 3; ++n) {
      f << 0.01 * n << ",0,0.25,0.3,1\n" << 0.01 * n << ",1,0.75,0.8,5\n";
    }
  }
  auto cfg = small_run(dir, 1, 1);
  std::ostringstream log;
  ASSERT_EQ(gt::cmd_coarsegrain(dir / "particles.csv", cfg, log), gt::exit_code::ok);
  for (const auto& field : cells(dir / "cells_flux.csv").fields) EXPECT_EQ(field.cwiseAbs().maxCoeff(), 0.0);
  const auto mu = cells(dir / "cells_mu.csv");
  EXPECT_NEAR(mu.fields[0].sum(), 1.0, 1e-15);
  EXPECT_EQ(mu.fields[0](6, 3), 0.25);
  EXPECT_EQ(mu.fields[0](16, 15), 0.75);
}

TEST(Coarsegrain, MissingColumnIsParseError) {
  const auto dir = fresh_dir("cg_bad");
  { std::ofstream(dir / "particles.csv") << "t,alpha,x,p\n0,0,1,0.5\n"; }
  std::ostringstream log;
  try {
    gt::cmd_coarsegrain(dir / "particles.csv", small_run(dir, 1, 1), log);
    FAIL() << "expected ParseError";
  } catch (const gt::ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("'phi'"), std::string::npos) << e.what();
  }
}

// isolated

TEST(Isolated, DiagonalHamiltonianPasses) {
  auto cfg = small_run(fresh_dir("iso_diag"), 1, 2000);
  cfg.dt = 1e-3;
  cfg.isolated.hamiltonian = {0.0, 0.0, 0.0, 0.7};
  const auto r = gt::isolated_run(cfg);
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.rigidity, 1e-10);
}

TEST(Isolated, TiltedFieldPassesAndWritesReport) {
  const auto dir = fresh_dir("iso_tilted");
  auto cfg = small_run(dir, 1, 1000);
  cfg.dt = 1e-3;
  std::ostringstream log;
  EXPECT_EQ(gt::cmd_isolated(cfg, log), gt::exit_code::ok) << log.str();
  const auto report = nlohmann::json::parse(slurp(dir / "isolated_report.json"));
  EXPECT_TRUE(report["passed"].get<bool>());
  EXPECT_EQ(data_rows(dir / "trajectories.csv"), 10u * 1001u);
}

TEST(Isolated, LargeStepFailsTheEnergyGate) {
  auto cfg = small_run(fresh_dir("iso_coarse"), 1, 200);
  cfg.dt = 0.2;
  std::ostringstream log;
  EXPECT_EQ(gt::cmd_isolated(cfg, log), gt::exit_code::numeric_gate);
  EXPECT_NE(log.str().find("energy is not conserved"), std::string::npos) << log.str();
}

// kinetic-verify

TEST(KineticVerify, DefaultChainPasses) {
  auto cfg = small_run(fresh_dir("kv"), 3, 100);
  const auto r = gt::kinetic_verify(cfg);
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_deviation, 1e-7);
}

TEST(KineticVerify, ZeroVExactForDiagonalEnvironment) {
  // A longitudinal field and zz couplings never flip an environment spin.
  auto cfg = small_run(fresh_dir("kv_zero"), 3, 100);
  cfg.hamiltonian.field = {0.0, 0.0, 0.7};
  const auto r = gt::kinetic_verify(cfg, {.zero_v = true});
  EXPECT_TRUE(r.passed) << r.max_deviation;
}

TEST(KineticVerify, ZeroVDeviatesForCoupledChain) {
  auto cfg = small_run(fresh_dir("kv_zero_bad"), 3, 100);
  const auto r = gt::kinetic_verify(cfg, {.zero_v = true});
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_deviation, 1e-3);
}

TEST(KineticVerify, SkewedCouplingFails) {
  auto cfg = small_run(fresh_dir("kv_skew"), 3, 100);
  const auto r = gt::kinetic_verify(cfg, {.skew_v = true});
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.v_pairing_defect, 1e-3);
}

TEST(KineticVerify, LargeChainIsResourceError) {
  EXPECT_THROW(gt::kinetic_verify(small_run(fresh_dir("kv_big"), 5, 10)), gt::ResourceError);
}

// fit-diffusion

TEST(FitDiffusion, RecoversPlantedCoefficients) {
  const auto dir = fresh_dir("fit");
  gt::CoarseFields f;
  f.dt = 0.005;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  Eigen::MatrixXd mu0(20, 20);
  for (Eigen::Index c = 0; c < mu0.size(); ++c) mu0(c) = u(rng);
  mu0 /= mu0.sum();
  const auto series = gt::oracle::forward_diffusion(mu0, 0.2, 0.5, f.dt, 220);
  std::vector<double> times;
  for (std::size_t n = 0; n < series.size(); ++n) times.push_back(f.dt * static_cast<double>(n));
  {
    std::ofstream out(dir / "cells_mu.csv");
    gt::io::write_cells(out, std::vector<gt::CellField>(series.begin(), series.end()), times);
  }
  std::ostringstream log;
  ASSERT_EQ(gt::cmd_fit_diffusion(dir / "cells_mu.csv", 100, dir, log), gt::exit_code::ok);
  const auto fit = nlohmann::json::parse(slurp(dir / "fit.json"));
  EXPECT_NEAR(fit["gamma_p"].get<double>(), 0.2, 1e-6 * 0.2);
  EXPECT_NEAR(fit["gamma_phi"].get<double>(), 0.5, 1e-6 * 0.5);
  EXPECT_NEAR(fit["gamma_loss"].get<double>(), 1.4, 1e-5);
  EXPECT_FALSE(fit["clamped"].get<bool>());
  EXPECT_TRUE(manifest(dir)["outputs"].contains("fit.json"));
}

TEST(FitDiffusion, UniformFieldGivesZero) {
  const auto dir = fresh_dir("fit_flat");
  std::vector<gt::CellField> series(30, gt::CellField::Constant(20, 20, 1.0 / 400.0));
  std::vector<double> times;
  for (std::size_t n = 0; n < series.size(); ++n) times.push_back(0.01 * static_cast<double>(n));
  {
    std::ofstream out(dir / "cells_mu.csv");
    gt::io::write_cells(out, series, times);
  }
  std::ostringstream log;
  ASSERT_EQ(gt::cmd_fit_diffusion(dir / "cells_mu.csv", 5, dir, log), gt::exit_code::ok);
  const auto fit = nlohmann::json::parse(slurp(dir / "fit.json"));
  EXPECT_EQ(fit["gamma_p"].get<double>(), 0.0);
  EXPECT_EQ(fit["gamma_phi"].get<double>(), 0.0);
}

TEST(FitDiffusion, TooFewStepsIsValidationError) {
  const auto dir = fresh_dir("fit_short");
  std::vector<gt::CellField> series(5, gt::CellField::Constant(4, 4, 1.0 / 16.0));
  {
    std::ofstream out(dir / "cells_mu.csv");
    gt::io::write_cells(out, series, {0.0, 0.1, 0.2, 0.3, 0.4});
  }
  std::ostringstream log;
  EXPECT_THROW(gt::cmd_fit_diffusion(dir / "cells_mu.csv", 4, dir, log), gt::ValidationError);
}

// Command line

TEST(Cli, SimulateExitsZeroAndHonoursFlags) {
  const auto dir = fresh_dir("cli_sim");
  const auto r = cli("simulate --n-env 2 --steps 3 --emit particles -o \"" + dir.string() + "\"");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(data_rows(dir / "particles.csv"), 4u * 4u);
  EXPECT_FALSE(fs::exists(dir / "cells_mu.csv"));
}

TEST(Cli, ConfigFileWithFlagOverride) {
  const auto dir = fresh_dir("cli_cfg");
  {
    std::ofstream(dir / "run.toml") << "[hamiltonian]\nn_env = 2\n[run]\nsteps = 7\n[output]\nemit = [\"entropy\"]\n";
  }
  const auto r = cli("simulate --config \"" + (dir / "run.toml").string() + "\" --steps 4 -o \"" + dir.string() + "\"");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(data_rows(dir / "entropy.csv"), 5u);
  EXPECT_EQ(manifest(dir)["commands"]["simulate"]["config"]["run"]["steps"], 4);
}

TEST(Cli, UnknownConfigKeyExitsTwo) {
  const auto dir = fresh_dir("cli_badcfg");
  { std::ofstream(dir / "run.toml") << "[run]\nstesp = 10\n"; }
  const auto r = cli("simulate --config \"" + (dir / "run.toml").string() + "\" -o \"" + dir.string() + "\"");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("run.stesp"), std::string::npos) << r.out;
}

TEST(Cli, BadArgumentsExitTwo) {
  EXPECT_EQ(cli("simulate --steps many").code, 2);
  EXPECT_EQ(cli("no-such-command").code, 2);
  EXPECT_EQ(cli("simulate --n-env 0 -o /tmp/geotransport_pipeline_test/x").code, 2);
}

TEST(Cli, KineticVerifyExitCodes) {
  EXPECT_EQ(cli("kinetic-verify").code, 0);
  const auto skew = cli("kinetic-verify --skew-v");
  EXPECT_EQ(skew.code, 3);
  EXPECT_NE(skew.out.find("FAIL"), std::string::npos) << skew.out;
  const auto big = cli("kinetic-verify --n-env 5");
  EXPECT_EQ(big.code, 2);
  EXPECT_NE(big.out.find("n_env <= 4"), std::string::npos) << big.out;
}

TEST(Cli, IsolatedAndFitDiffusion) {
  const auto dir = fresh_dir("cli_iso");
  EXPECT_EQ(cli("isolated --dt 0.001 --steps 500 -o \"" + dir.string() + "\"").code, 0);
  EXPECT_TRUE(fs::exists(dir / "isolated_report.json"));
  EXPECT_EQ(cli("isolated --dt 0.2 --steps 200 -o \"" + dir.string() + "\"").code, 3);

  const auto sim = fresh_dir("cli_fit");
  ASSERT_EQ(cli("simulate --n-env 2 --steps 30 --emit cells -o \"" + sim.string() + "\"").code, 0);
  EXPECT_EQ(cli("fit-diffusion \"" + (sim / "cells_mu.csv").string() + "\" --t-start 10 -o \"" + sim.string() + "\"")
                .code,
            0);
  EXPECT_TRUE(fs::exists(sim / "fit.json"));
}

TEST(Cli, MissingInputExitsTwoOrFour) {
  // CLI11 checks existence of positional inputs before the command runs.
  EXPECT_EQ(cli("coarsegrain /nonexistent/particles.csv").code, 2);
  const auto dir = fresh_dir("cli_io");
  { std::ofstream(dir / "blocker") << "x"; }
  const auto r = cli("simulate --n-env 1 --steps 1 -o \"" + (dir / "blocker" / "sub").string() + "\"");
  EXPECT_EQ(r.code, 4) << r.out;
}
