// config.hpp
// Run configuration: defaults, TOML-style file loading (sections, key =
// value, arrays), validation and JSON export for manifests.
//
//   [hamiltonian]  n_env, j_z, field = [bx, by, bz], coupling = "nearest" |
//                  "next_nearest", system_site
//   [run]          dt, steps
//   [initial]      kind = "all_up" | "custom" | "random", system = [re0, im0,
//                  re1, im1], environment = [4 reals per site], seed
//   [grid]         n_p, n_phi
//   [analysis]     transient_cut, cluster_eps, cluster_weight_cut,
//                  plateau_window, plateau_tol
//   [isolated]     hamiltonian = [c0, cx, cy, cz], points, seed, min_clearance
//   [output]       dir, emit = ["particles", "cells", "entropy", "clusters", "fit"]
//
// Unknown sections or keys are errors.

#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "geotransport/common.hpp"
#include "geotransport/spinchain.hpp"

namespace geotransport {

enum class InitialKind { all_up, custom, random };

struct InitialSpec {
  InitialKind kind = InitialKind::all_up;
  std::vector<double> system;       // re0, im0, re1, im1
  std::vector<double> environment;  // 4 per environment site
  std::uint64_t seed = 0;
};

struct IsolatedSpec {
  std::array<double, 4> hamiltonian{0.0, 1.0, 0.0, 0.5};  // c0, cx, cy, cz
  int points = 10;
  std::uint64_t seed = 1;
  double min_clearance = 0.02;
};

inline const std::set<std::string>& emit_choices() {
  static const std::set<std::string> choices{"particles", "cells", "entropy", "clusters", "fit"};
  return choices;
}

struct RunConfig {
  HamiltonianSpec hamiltonian;
  double dt = 0.005;
  long steps = 500;
  InitialSpec initial;
  int n_p = 20;
  int n_phi = 20;
  std::size_t transient_cut = 100;
  double cluster_eps = 0.05;
  double cluster_weight_cut = 1e-6;
  std::size_t plateau_window = 50;
  double plateau_tol = 0.01;
  IsolatedSpec isolated;
  std::filesystem::path output_dir = "out";
  std::set<std::string> emit{"particles", "cells", "entropy"};

  bool emits(const std::string& what) const { return emit.count(what) > 0; }

  void validate() const {
    hamiltonian.validate();
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ValidationError("run.dt must be positive");
    if (steps < 1) throw ValidationError("run.steps must be >= 1");
    if (n_p < 1 || n_phi < 1) throw ValidationError("grid.n_p and grid.n_phi must be >= 1");
    if (!(cluster_eps > 0.0)) throw ValidationError("analysis.cluster_eps must be positive");
    if (!(plateau_tol > 0.0) || plateau_window < 1) {
      throw ValidationError("analysis.plateau_window and plateau_tol must be positive");
    }
    if (initial.kind == InitialKind::custom) {
      if (initial.system.size() != 4) throw ValidationError("initial.system needs 4 reals");
      if (initial.environment.size() != 4 * static_cast<std::size_t>(hamiltonian.n_env)) {
        throw ValidationError("initial.environment needs 4 reals per environment site (" +
                              std::to_string(4 * hamiltonian.n_env) + ")");
      }
    }
    if (isolated.points < 2) throw ValidationError("isolated.points must be >= 2");
    for (const auto& e : emit) {
      if (!emit_choices().count(e)) throw ValidationError("unknown output.emit entry '" + e + "'");
    }
  }
};

inline Vector2c ket_from_reals(const std::vector<double>& v, std::size_t offset) {
  return {Complex(v[offset], v[offset + 1]), Complex(v[offset + 2], v[offset + 3])};
}

inline JointState initial_state(const RunConfig& cfg) {
  const int n_env = cfg.hamiltonian.n_env;
  switch (cfg.initial.kind) {
    case InitialKind::all_up:
      return all_up_state(n_env);
    case InitialKind::custom: {
      std::vector<Vector2c> env;
      for (int m = 0; m < n_env; ++m) env.push_back(ket_from_reals(cfg.initial.environment, 4 * static_cast<std::size_t>(m)));
      return product_state(ket_from_reals(cfg.initial.system, 0), env);
    }
    case InitialKind::random: {
      std::mt19937_64 rng(cfg.initial.seed);
      std::normal_distribution<double> normal;
      MatrixXc amps(2, static_cast<Eigen::Index>(cfg.hamiltonian.env_dim()));
      for (Eigen::Index c = 0; c < amps.size(); ++c) amps(c) = Complex(normal(rng), normal(rng));
      return JointState(amps / amps.norm());
    }
  }
  throw ValidationError("unknown initial state kind");
}

namespace detail {

inline std::string where(const CLI::ConfigItem& item, const std::string& source) {
  return source + ": '" + item.fullname() + "'";
}

inline void require_scalar(const CLI::ConfigItem& item, const std::string& source) {
  if (item.inputs.size() != 1) throw ParseError(where(item, source) + " expects a single value");
}

inline double parse_real(const std::string& text, const CLI::ConfigItem& item, const std::string& source) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ParseError(where(item, source) + ": not a number: '" + text + "'");
  }
  return v;
}

inline long parse_integer(const std::string& text, const CLI::ConfigItem& item, const std::string& source) {
  long v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw ParseError(where(item, source) + ": not an integer: '" + text + "'");
  }
  return v;
}

inline double real_of(const CLI::ConfigItem& item, const std::string& source) {
  require_scalar(item, source);
  return parse_real(item.inputs[0], item, source);
}

inline long integer_of(const CLI::ConfigItem& item, const std::string& source) {
  require_scalar(item, source);
  return parse_integer(item.inputs[0], item, source);
}

inline std::vector<double> reals_of(const CLI::ConfigItem& item, const std::string& source) {
  std::vector<double> out;
  for (const auto& s : item.inputs) out.push_back(parse_real(s, item, source));
  return out;
}

inline std::string string_of(const CLI::ConfigItem& item, const std::string& source) {
  require_scalar(item, source);
  return item.inputs[0];
}

}  // namespace detail

inline CouplingRange parse_coupling(const std::string& s) {
  if (s == "nearest") return CouplingRange::nearest;
  if (s == "next_nearest") return CouplingRange::next_nearest;
  throw ValidationError("coupling must be 'nearest' or 'next_nearest', got '" + s + "'");
}

inline std::string coupling_name(CouplingRange c) {
  return c == CouplingRange::nearest ? "nearest" : "next_nearest";
}

inline InitialKind parse_initial_kind(const std::string& s) {
  if (s == "all_up") return InitialKind::all_up;
  if (s == "custom") return InitialKind::custom;
  if (s == "random") return InitialKind::random;
  throw ValidationError("initial.kind must be all_up, custom or random, got '" + s + "'");
}

inline std::string initial_kind_name(InitialKind k) {
  switch (k) {
    case InitialKind::all_up: return "all_up";
    case InitialKind::custom: return "custom";
    case InitialKind::random: return "random";
  }
  return "?";
}

// Applies the settings in a config stream on top of `cfg`.
inline void apply_config(RunConfig& cfg, std::istream& in, const std::string& source) {
  CLI::ConfigTOML parser;
  std::vector<CLI::ConfigItem> items;
  try {
    items = parser.from_config(in);
  } catch (const CLI::Error& e) {
    throw ParseError(source + ": " + e.what());
  }
  using namespace detail;
  for (const auto& item : items) {
    // CLI11 emits bookkeeping entries when sections open and close.
    if (item.name == "++" || item.name == "--") continue;
    const std::string key = item.fullname();
    auto& h = cfg.hamiltonian;
    if (key == "hamiltonian.n_env") {
      h.n_env = static_cast<int>(integer_of(item, source));
    } else if (key == "hamiltonian.j_z") {
      h.j_z = real_of(item, source);
    } else if (key == "hamiltonian.field") {
      const auto v = reals_of(item, source);
      if (v.size() != 3) throw ParseError(where(item, source) + " expects [bx, by, bz]");
      h.field = {v[0], v[1], v[2]};
    } else if (key == "hamiltonian.coupling") {
      h.coupling_range = parse_coupling(string_of(item, source));
    } else if (key == "hamiltonian.system_site") {
      h.system_site = static_cast<int>(integer_of(item, source));
    } else if (key == "run.dt") {
      cfg.dt = real_of(item, source);
    } else if (key == "run.steps") {
      cfg.steps = integer_of(item, source);
    } else if (key == "initial.kind") {
      cfg.initial.kind = parse_initial_kind(string_of(item, source));
    } else if (key == "initial.system") {
      cfg.initial.system = reals_of(item, source);
    } else if (key == "initial.environment") {
      cfg.initial.environment = reals_of(item, source);
    } else if (key == "initial.seed") {
      cfg.initial.seed = static_cast<std::uint64_t>(integer_of(item, source));
    } else if (key == "grid.n_p") {
      cfg.n_p = static_cast<int>(integer_of(item, source));
    } else if (key == "grid.n_phi") {
      cfg.n_phi = static_cast<int>(integer_of(item, source));
    } else if (key == "analysis.transient_cut") {
      const long v = integer_of(item, source);
      if (v < 0) throw ParseError(where(item, source) + " must be non-negative");
      cfg.transient_cut = static_cast<std::size_t>(v);
    } else if (key == "analysis.cluster_eps") {
      cfg.cluster_eps = real_of(item, source);
    } else if (key == "analysis.cluster_weight_cut") {
      cfg.cluster_weight_cut = real_of(item, source);
    } else if (key == "analysis.plateau_window") {
      const long v = integer_of(item, source);
      if (v < 1) throw ParseError(where(item, source) + " must be positive");
      cfg.plateau_window = static_cast<std::size_t>(v);
    } else if (key == "analysis.plateau_tol") {
      cfg.plateau_tol = real_of(item, source);
    } else if (key == "isolated.hamiltonian") {
      const auto v = reals_of(item, source);
      if (v.size() != 4) throw ParseError(where(item, source) + " expects [c0, cx, cy, cz]");
      cfg.isolated.hamiltonian = {v[0], v[1], v[2], v[3]};
    } else if (key == "isolated.points") {
      cfg.isolated.points = static_cast<int>(integer_of(item, source));
    } else if (key == "isolated.seed") {
      cfg.isolated.seed = static_cast<std::uint64_t>(integer_of(item, source));
    } else if (key == "isolated.min_clearance") {
      cfg.isolated.min_clearance = real_of(item, source);
    } else if (key == "output.dir") {
      cfg.output_dir = string_of(item, source);
    } else if (key == "output.emit") {
      cfg.emit.clear();
      for (const auto& e : item.inputs) {
        if (!emit_choices().count(e)) throw ParseError(where(item, source) + ": unknown entry '" + e + "'");
        cfg.emit.insert(e);
      }
    } else {
      throw ParseError(source + ": unknown key '" + key + "'");
    }
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  RunConfig cfg;
  apply_config(cfg, in, path.string());
  return cfg;
}

inline nlohmann::ordered_json to_json(const RunConfig& cfg) {
  const auto& h = cfg.hamiltonian;
  nlohmann::ordered_json j;
  j["hamiltonian"] = {{"n_env", h.n_env},
                      {"j_z", h.j_z},
                      {"field", {h.field[0], h.field[1], h.field[2]}},
                      {"coupling", coupling_name(h.coupling_range)},
                      {"boundary", "periodic"},
                      {"system_site", h.system_site}};
  j["run"] = {{"dt", cfg.dt}, {"steps", cfg.steps}};
  j["initial"] = {{"kind", initial_kind_name(cfg.initial.kind)},
                  {"system", cfg.initial.system},
                  {"environment", cfg.initial.environment},
                  {"seed", cfg.initial.seed}};
  j["grid"] = {{"n_p", cfg.n_p}, {"n_phi", cfg.n_phi}};
  j["analysis"] = {{"transient_cut", cfg.transient_cut},
                   {"cluster_eps", cfg.cluster_eps},
                   {"cluster_weight_cut", cfg.cluster_weight_cut},
                   {"plateau_window", cfg.plateau_window},
                   {"plateau_tol", cfg.plateau_tol}};
  j["isolated"] = {{"hamiltonian", cfg.isolated.hamiltonian},
                   {"points", cfg.isolated.points},
                   {"seed", cfg.isolated.seed},
                   {"min_clearance", cfg.isolated.min_clearance}};
  j["output"] = {{"dir", cfg.output_dir.string()},
                 {"emit", std::vector<std::string>(cfg.emit.begin(), cfg.emit.end())}};
  return j;
}

}  // namespace geotransport
