#pragma once

// Command-line configuration: per-subcommand defaults, then a JSON config file, then
// flags. Every JSON object is checked against its known keys.

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmotdc/dc_solver.hpp"
#include "mmotdc/error.hpp"
#include "mmotdc/experiments.hpp"
#include "mmotdc/sinkhorn.hpp"

namespace mmotdc::cli {

using nlohmann::json;

enum class Subcommand { sinkhorn, solve, expt };

struct CliConfig {
  Subcommand subcommand = Subcommand::sinkhorn;
  std::filesystem::path cost_path;
  std::filesystem::path marginals_path;
  std::filesystem::path partition_path;
  std::filesystem::path init_duals_path;
  std::filesystem::path output_dir = "out";
  std::string study;
  /// Set once epsilon comes from the config file or --epsilon.
  bool epsilon_given = false;
  bool warm_start = false;
  int verbosity = 1;
  SinkhornConfig sinkhorn;
  DcConfig dc;
  experiments::ExperimentConfig experiment;

  static CliConfig defaults_for(Subcommand sub) {
    CliConfig c;
    c.subcommand = sub;
    if (sub == Subcommand::expt) {
      c.dc = experiments::default_study_dc();
      c.output_dir = "results";
    }
    return c;
  }
};

namespace detail {

inline void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) known = known || it.key() == k;
    if (!known) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

inline std::string path_of(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

template <class T>
void read(const json& obj, const std::string& where, const char* key, T& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  const std::string field = path_of(where, key);
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(field + " must be a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(field + " must be an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(field + " must be non-negative");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(field + " must be a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(field + " must be a string");
    }
    out = v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(field + " has the wrong type");
  }
}

inline void read_grid(const json& obj, const std::string& where, const char* key, std::vector<double>& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  const std::string field = path_of(where, key);
  if (!v.is_array()) throw ConfigError(field + " must be a list of numbers");
  std::vector<double> g;
  for (const json& x : v) {
    if (!x.is_number()) throw ConfigError(field + " must be a list of numbers");
    g.push_back(x.get<double>());
  }
  out = std::move(g);
}

inline void read_path(const json& obj, const char* key, std::filesystem::path& out) {
  std::string s;
  if (!obj.contains(key)) return;
  read(obj, "", key, s);
  out = s;
}

inline void apply_sinkhorn(const json& j, const std::string& where, SinkhornConfig& s, bool* epsilon_given) {
  check_keys(j, where, {"epsilon", "max_iters", "tol", "check_every"});
  if (j.contains("epsilon") && epsilon_given != nullptr) *epsilon_given = true;
  read(j, where, "epsilon", s.epsilon);
  read(j, where, "max_iters", s.max_iters);
  read(j, where, "tol", s.tol);
  read(j, where, "check_every", s.check_every);
}

inline void apply_dc(const json& j, DcConfig& dc, bool& epsilon_given) {
  check_keys(j, "dc", {"epsilon", "epsilon0", "step", "max_outer", "outer_tol", "gradient_mode", "inner"});
  if (j.contains("epsilon")) epsilon_given = true;
  read(j, "dc", "epsilon", dc.epsilon);
  read(j, "dc", "epsilon0", dc.epsilon0);
  read(j, "dc", "step", dc.step);
  read(j, "dc", "max_outer", dc.max_outer);
  read(j, "dc", "outer_tol", dc.outer_tol);
  if (j.contains("gradient_mode")) {
    std::string mode;
    read(j, "dc", "gradient_mode", mode);
    dc.gradient_mode = parse_gradient_mode(mode);
  }
  if (j.contains("inner")) apply_sinkhorn(j.at("inner"), "dc.inner", dc.inner, nullptr);
}

inline void apply_permutation(const json& j, experiments::PermutationSettings& p) {
  check_keys(j, "permutation", {"rows", "cols", "epsilons", "warm_start", "histogram_bins"});
  read(j, "permutation", "rows", p.rows);
  read(j, "permutation", "cols", p.cols);
  read_grid(j, "permutation", "epsilons", p.epsilons);
  read(j, "permutation", "warm_start", p.warm_start);
  read(j, "permutation", "histogram_bins", p.histogram_bins);
}

inline void apply_gw(const json& j, experiments::GwSettings& g) {
  check_keys(j, "gw", {"x_rows", "x_cols", "y_rows", "y_cols", "egw_grid", "bcd_grid", "dc_grid",
                       "baseline_max_sweeps", "baseline_tol", "warm_start"});
  read(j, "gw", "x_rows", g.x_rows);
  read(j, "gw", "x_cols", g.x_cols);
  read(j, "gw", "y_rows", g.y_rows);
  read(j, "gw", "y_cols", g.y_cols);
  read_grid(j, "gw", "egw_grid", g.egw_grid);
  read_grid(j, "gw", "bcd_grid", g.bcd_grid);
  read_grid(j, "gw", "dc_grid", g.dc_grid);
  read(j, "gw", "baseline_max_sweeps", g.baseline_max_sweeps);
  read(j, "gw", "baseline_tol", g.baseline_tol);
  read(j, "gw", "warm_start", g.warm_start);
}

inline void apply_solvers(const json& j, experiments::SolverSelection& s) {
  check_keys(j, "solvers", {"egw_pg", "bcd", "mmot_dc", "mmot_dc_v1"});
  read(j, "solvers", "egw_pg", s.egw_pg);
  read(j, "solvers", "bcd", s.bcd);
  read(j, "solvers", "mmot_dc", s.mmot_dc);
  read(j, "solvers", "mmot_dc_v1", s.mmot_dc_v1);
}

}  // namespace detail

/// Merges a config document into `cfg`. Keys that do not apply to the chosen subcommand
/// are accepted and ignored, so one file can serve several subcommands.
inline void apply_config_json(CliConfig& cfg, const json& j) {
  detail::check_keys(j, "config",
                     {"seed", "trials", "threads", "output", "format", "verbosity", "cost", "marginals", "partition",
                      "init_duals", "warm_start", "sinkhorn", "dc", "baseline_inner", "permutation", "gw", "solvers"});
  auto& e = cfg.experiment;
  detail::read(j, "", "seed", e.master_seed);
  detail::read(j, "", "trials", e.trials);
  detail::read(j, "", "threads", e.threads);
  detail::read(j, "", "format", e.format);
  detail::read(j, "", "verbosity", cfg.verbosity);
  detail::read(j, "", "warm_start", cfg.warm_start);
  detail::read_path(j, "output", cfg.output_dir);
  detail::read_path(j, "cost", cfg.cost_path);
  detail::read_path(j, "marginals", cfg.marginals_path);
  detail::read_path(j, "partition", cfg.partition_path);
  detail::read_path(j, "init_duals", cfg.init_duals_path);
  if (j.contains("sinkhorn")) {
    bool given = false;
    detail::apply_sinkhorn(j.at("sinkhorn"), "sinkhorn", cfg.sinkhorn, &given);
    if (given && cfg.subcommand == Subcommand::sinkhorn) cfg.epsilon_given = true;
  }
  if (j.contains("dc")) {
    bool given = false;
    detail::apply_dc(j.at("dc"), cfg.dc, given);
    if (given && cfg.subcommand != Subcommand::sinkhorn) cfg.epsilon_given = true;
  }
  if (j.contains("baseline_inner")) detail::apply_sinkhorn(j.at("baseline_inner"), "baseline_inner", e.baseline_inner, nullptr);
  if (j.contains("permutation")) detail::apply_permutation(j.at("permutation"), e.permutation);
  if (j.contains("gw")) detail::apply_gw(j.at("gw"), e.gw);
  if (j.contains("solvers")) detail::apply_solvers(j.at("solvers"), e.solvers);
}

/// Values given on the command line; unset fields leave the merged config alone.
struct FlagOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> epsilon;
  std::optional<double> epsilon0;
  std::optional<double> step;
  std::optional<int> max_outer;
  std::optional<double> sinkhorn_tol;
  std::optional<std::string> mode;
  std::optional<int> trials;
  std::optional<unsigned> threads;
  std::optional<std::string> output;
  std::optional<std::string> format;
  std::optional<bool> warm_start;
};

inline void apply_flags(CliConfig& cfg, const FlagOverrides& f) {
  auto& e = cfg.experiment;
  if (f.seed) e.master_seed = *f.seed;
  if (f.epsilon) {
    cfg.epsilon_given = true;
    cfg.sinkhorn.epsilon = *f.epsilon;
    cfg.dc.epsilon = *f.epsilon;
    if (cfg.subcommand == Subcommand::expt) e.single_epsilon = *f.epsilon;
  }
  if (f.epsilon0) cfg.dc.epsilon0 = *f.epsilon0;
  if (f.step) cfg.dc.step = *f.step;
  if (f.max_outer) cfg.dc.max_outer = *f.max_outer;
  if (f.sinkhorn_tol) {
    cfg.sinkhorn.tol = *f.sinkhorn_tol;
    cfg.dc.inner.tol = *f.sinkhorn_tol;
  }
  if (f.mode) cfg.dc.gradient_mode = parse_gradient_mode(*f.mode);
  if (f.trials) e.trials = *f.trials;
  if (f.threads) e.threads = *f.threads;
  if (f.output) cfg.output_dir = *f.output;
  if (f.format) e.format = *f.format;
  if (f.warm_start) cfg.warm_start = *f.warm_start;
}

/// Copies the shared settings into the experiment config and validates what the
/// subcommand will use.
inline void finalize(CliConfig& cfg) {
  auto& e = cfg.experiment;
  e.dc = cfg.dc;
  e.output_dir = cfg.output_dir;
  if (e.format != "csv" && e.format != "json") throw ConfigError("format must be 'csv' or 'json'");
  switch (cfg.subcommand) {
    case Subcommand::sinkhorn:
      if (!cfg.epsilon_given) throw ConfigError("--epsilon is required");
      if (cfg.cost_path.empty() || cfg.marginals_path.empty()) throw ConfigError("cost and marginals files are required");
      cfg.sinkhorn.validate();
      break;
    case Subcommand::solve:
      if (!cfg.epsilon_given) throw ConfigError("--epsilon is required");
      if (cfg.cost_path.empty() || cfg.marginals_path.empty() || cfg.partition_path.empty()) {
        throw ConfigError("cost, marginals and partition files are required");
      }
      cfg.dc.validate();
      if (cfg.warm_start && cfg.dc.epsilon0 > cfg.dc.epsilon) {
        throw ConfigError("epsilon0 must not exceed epsilon for a warm start");
      }
      break;
    case Subcommand::expt:
      if (cfg.study != "permutation" && cfg.study != "gw-quality" && cfg.study != "v1-compare") {
        throw ConfigError("unknown study '" + cfg.study + "' (expected permutation, gw-quality or v1-compare)");
      }
      e.validate();
      break;
  }
  for (const auto* p : {&cfg.cost_path, &cfg.marginals_path, &cfg.partition_path, &cfg.init_duals_path}) {
    if (!p->empty() && !std::filesystem::is_regular_file(*p)) throw ConfigError("no such file: " + p->string());
  }
}

}  // namespace mmotdc::cli
