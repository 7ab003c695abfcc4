// mmotdc: entropic multi-marginal OT, the DC relaxation solver, and the reproduction studies.
//
//   mmotdc sinkhorn --cost C.json --marginals mu.json --epsilon 0.5 --output out/
//   mmotdc solve    --cost C.json --marginals mu.json --partition T.json --epsilon 1 [--warm-start]
//   mmotdc expt     permutation|gw-quality|v1-compare [--trials N] [--seed S]
//
// Exit status: 0 success, 1 input or configuration error, 2 numerical non-convergence.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmotdc/cli_config.hpp"
#include "mmotdc/mmotdc.hpp"

namespace {

using namespace mmotdc;
using cli::CliConfig;
using cli::Subcommand;
using io::json;

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitNonConvergence = 2;

struct RawArgs {
  std::string config;
  std::string cost;
  std::string marginals;
  std::string partition;
  std::string init_duals;
  std::string study;
  bool quiet = false;
  cli::FlagOverrides flags;
};

void add_common_flags(CLI::App& app, RawArgs& a) {
  app.add_option("--config", a.config, "JSON config file; flags override its values");
  app.add_option("--seed", a.flags.seed, "Master seed");
  app.add_option("--epsilon", a.flags.epsilon, "Regularization strength");
  app.add_option("--epsilon0", a.flags.epsilon0, "First warm-start regularization");
  app.add_option("--step", a.flags.step, "Warm-start growth factor");
  app.add_option("--max-outer", a.flags.max_outer, "Outer DC iteration cap");
  app.add_option("--sinkhorn-tol", a.flags.sinkhorn_tol, "Sinkhorn marginal tolerance");
  app.add_option("--mode", a.flags.mode, "Concave-gradient variant")
      ->check(CLI::IsMember({"corrected", "paper-literal", "v1"}));
  app.add_option("--trials", a.flags.trials, "Number of trials");
  app.add_option("--threads", a.flags.threads, "Worker cap (0 = all cores)");
  app.add_option("--output", a.flags.output, "Output directory");
  app.add_option("--format", a.flags.format, "Table format")->check(CLI::IsMember({"csv", "json"}));
  app.add_flag("-q,--quiet", a.quiet, "Only report errors");
}

void add_input_flags(CLI::App& app, RawArgs& a, bool with_partition) {
  app.add_option("--cost", a.cost, "Cost tensor file");
  app.add_option("--marginals", a.marginals, "Marginals file");
  if (with_partition) app.add_option("--partition", a.partition, "Partition file");
  app.add_option("--init-duals", a.init_duals, "Initial dual potentials file");
}

CliConfig build_config(Subcommand sub, const RawArgs& a) {
  CliConfig cfg = CliConfig::defaults_for(sub);
  if (!a.config.empty()) cli::apply_config_json(cfg, io::read_json_file(a.config));
  if (!a.cost.empty()) cfg.cost_path = a.cost;
  if (!a.marginals.empty()) cfg.marginals_path = a.marginals;
  if (!a.partition.empty()) cfg.partition_path = a.partition;
  if (!a.init_duals.empty()) cfg.init_duals_path = a.init_duals;
  cfg.study = a.study;
  if (a.quiet) cfg.verbosity = 0;
  cli::apply_flags(cfg, a.flags);
  cli::finalize(cfg);
  return cfg;
}

std::optional<DualPotentials> load_duals(const CliConfig& cfg, const Shape& extents) {
  if (cfg.init_duals_path.empty()) return std::nullopt;
  DualPotentials d = io::duals_from_json(io::read_json_file(cfg.init_duals_path));
  if (!d.matches(extents)) throw ConfigError(cfg.init_duals_path.string() + ": duals do not match the cost shape");
  return d;
}

int cmd_sinkhorn(const CliConfig& cfg) {
  const DenseTensor cost = io::read_tensor(cfg.cost_path);
  const MarginalFamily mu = io::read_marginals(cfg.marginals_path);
  mu.check_shape(cost.shape());
  const std::optional<DualPotentials> init = load_duals(cfg, cost.shape());
  const SinkhornResult r = sinkhorn_mmot(cost, mu, cfg.sinkhorn, init ? &*init : nullptr);

  json report;
  report["epsilon"] = cfg.sinkhorn.epsilon;
  report["tol"] = cfg.sinkhorn.tol;
  report["converged"] = r.converged;
  report["iterations"] = r.iters;
  report["residual"] = r.residual;
  report["dual_objective"] = r.dual_objective;
  report["transport_cost"] = inner(cost, r.plan.tensor());
  io::write_tensor(cfg.output_dir / "plan.json", r.plan.tensor());
  io::atomic_write(cfg.output_dir / "duals.json", io::dump(io::duals_to_json(r.duals)));
  io::atomic_write(cfg.output_dir / "report.json", io::dump(report));
  if (cfg.verbosity > 0) {
    std::printf("sinkhorn: %s after %d iterations, residual %s\n", r.converged ? "converged" : "NOT converged", r.iters,
                io::format_double(r.residual).c_str());
  }
  return r.converged ? kExitOk : kExitNonConvergence;
}

int cmd_solve(const CliConfig& cfg) {
  const DenseTensor cost = io::read_tensor(cfg.cost_path);
  const MarginalFamily mu = io::read_marginals(cfg.marginals_path);
  mu.check_shape(cost.shape());
  const TuplePartition partition = io::read_partition(cfg.partition_path);
  partition.check_rank(cost.rank());
  const std::optional<DualPotentials> init = load_duals(cfg, cost.shape());
  const DualPotentials* duals0 = init ? &*init : nullptr;
  const DcReport r = cfg.warm_start ? dc_solve_warmstart(cost, mu, partition, cfg.dc, nullptr, duals0)
                                    : dc_solve(cost, mu, partition, cfg.dc, nullptr, duals0);

  json report;
  report["epsilon"] = cfg.dc.epsilon;
  report["gradient_mode"] = std::string(to_string(cfg.dc.gradient_mode));
  report["warm_start"] = cfg.warm_start;
  report["converged"] = r.converged;
  report["outer_iters"] = r.outer_iters;
  report["sinkhorn_iters"] = r.sinkhorn_iters;
  report["inner_nonconverged"] = r.inner_nonconverged;
  report["objective"] = r.objective_trace.back();
  report["objective_trace"] = r.objective_trace;
  report["kl_trace"] = r.kl_trace;
  report["linear_trace"] = r.linear_trace;
  report["stage_epsilons"] = r.stage_epsilons;
  report["stage_starts"] = r.stage_starts;
  report["seconds"] = r.seconds;
  json blocks = json::array();
  for (const DenseTensor& m : block_marginals(r.plan.tensor(), partition)) blocks.push_back(io::tensor_to_json(m));
  report["block_marginals"] = std::move(blocks);
  io::write_tensor(cfg.output_dir / "plan.json", r.plan.tensor());
  io::atomic_write(cfg.output_dir / "duals.json", io::dump(io::duals_to_json(r.duals)));
  io::atomic_write(cfg.output_dir / "report.json", io::dump(report));
  if (cfg.verbosity > 0) {
    std::printf("solve: %s after %d outer iterations, objective %s\n", r.converged ? "converged" : "NOT converged",
                r.outer_iters, io::format_double(r.objective_trace.back()).c_str());
  }
  return r.converged ? kExitOk : kExitNonConvergence;
}

int cmd_expt(const CliConfig& cfg) {
  namespace ex = experiments;
  if (cfg.study == "permutation") {
    const ex::PermutationReport r = ex::run_permutation_study(cfg.experiment);
    if (cfg.verbosity > 0) {
      for (const auto& row : r.rows) {
        std::printf("eps %-6s sample acc %.3f feature acc %.3f coot loss %s\n", io::format_double(row.epsilon).c_str(),
                    row.sample_accuracy, row.feature_accuracy, io::format_double(row.coot_loss).c_str());
      }
    }
    return kExitOk;
  }
  const ex::GwReport r = cfg.study == "gw-quality" ? ex::run_gw_quality_study(cfg.experiment)
                                                   : ex::run_v1_comparison(cfg.experiment);
  if (cfg.verbosity > 0) {
    for (const std::string& name : r.solver_names) {
      const ex::SampleStats& s = r.summary.at(name).stats;
      std::printf("%-11s mean %.4f std %.4f (n=%zu)\n", name.c_str(), s.mean, s.stddev, s.count);
    }
    if (r.excluded > 0) std::printf("excluded trials: %zu\n", r.excluded);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entropic multi-marginal optimal transport and the MMOT-DC relaxation"};
  app.require_subcommand(1);
  RawArgs args;

  CLI::App* sinkhorn = app.add_subcommand("sinkhorn", "Entropic multi-marginal Sinkhorn");
  add_common_flags(*sinkhorn, args);
  add_input_flags(*sinkhorn, args, false);

  CLI::App* solve = app.add_subcommand("solve", "DC relaxation solver");
  add_common_flags(*solve, args);
  add_input_flags(*solve, args, true);
  solve->add_flag("--warm-start", args.flags.warm_start, "Continue along an increasing epsilon ladder");

  CLI::App* expt = app.add_subcommand("expt", "Reproduction studies");
  add_common_flags(*expt, args);
  expt->add_option("study", args.study, "permutation, gw-quality or v1-compare")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitInput;
  }

  const Subcommand sub = sinkhorn->parsed() ? Subcommand::sinkhorn
                         : solve->parsed()  ? Subcommand::solve
                                            : Subcommand::expt;
  try {
    const CliConfig cfg = build_config(sub, args);
    switch (sub) {
      case Subcommand::sinkhorn:
        return cmd_sinkhorn(cfg);
      case Subcommand::solve:
        return cmd_solve(cfg);
      case Subcommand::expt:
        return cmd_expt(cfg);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const DomainError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNonConvergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitOk;
}
