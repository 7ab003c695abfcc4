#pragma once

// Seeded reproduction studies:
//   permutation  planted sample/feature permutations, recovered from P_{#1}, P_{#2};
//   gw-quality   COOT loss of MMOT-DC against entropic GW and COOT block descent;
//   v1-compare   MMOT-DC against its memory-light gradient variant, paired per trial.
// Every study is a pure function of its ExperimentConfig. Trials may run in parallel,
// but each draws from its own stream and results are written in trial order.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mmotdc/baselines.hpp"
#include "mmotdc/dc_solver.hpp"
#include "mmotdc/error.hpp"
#include "mmotdc/io.hpp"
#include "mmotdc/random.hpp"
#include "mmotdc/tensor.hpp"

namespace mmotdc::experiments {

inline constexpr const char* kEgwPg = "EGW-PG";
inline constexpr const char* kGwBcd = "GW-BCD";
inline constexpr const char* kEgwBcd = "EGW-BCD";
inline constexpr const char* kMmotDc = "MMOT-DC";
inline constexpr const char* kMmotDcV1 = "MMOT-DC-v1";

struct PermutationSettings {
  std::size_t rows = 30;
  std::size_t cols = 25;
  std::vector<double> epsilons{1.0, 1.4, 1.8, 2.2, 2.6};
  bool warm_start = true;
  std::size_t histogram_bins = 40;
};

struct GwSettings {
  std::size_t x_rows = 20;
  std::size_t x_cols = 3;
  std::size_t y_rows = 30;
  std::size_t y_cols = 2;
  std::vector<double> egw_grid{0.0008, 0.0016, 0.0032, 0.0064, 0.0128, 0.0256};
  std::vector<double> bcd_grid{0.0005, 0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0};
  std::vector<double> dc_grid{1.0, 1.4, 1.8, 2.2, 2.6};
  int baseline_max_sweeps = 200;
  double baseline_tol = 1e-7;
  bool warm_start = false;
};

struct SolverSelection {
  bool egw_pg = true;
  bool bcd = true;
  bool mmot_dc = true;
  bool mmot_dc_v1 = false;
};

/// MMOT-DC settings used by the studies: a longer outer budget and a looser inner
/// tolerance than the library defaults (see README, "Experiment profile").
inline DcConfig default_study_dc() {
  DcConfig cfg;
  cfg.max_outer = 1000;
  cfg.outer_tol = 1e-5;
  cfg.inner.tol = 1e-6;
  return cfg;
}

struct ExperimentConfig {
  std::uint64_t master_seed = 0;
  int trials = 30;
  /// 0 means one worker per hardware thread.
  unsigned threads = 0;
  std::filesystem::path output_dir = "results";
  /// Tabular outputs as "csv" or "json".
  std::string format = "csv";
  /// MMOT-DC settings; epsilon is taken from the study grids unless `single_epsilon` is set.
  DcConfig dc = default_study_dc();
  std::optional<double> single_epsilon;
  SinkhornConfig baseline_inner = default_baseline_inner();
  PermutationSettings permutation;
  GwSettings gw;
  SolverSelection solvers;

  void validate() const {
    if (trials < 1) throw ConfigError("trials must be >= 1");
    if (format != "csv" && format != "json") throw ConfigError("format must be 'csv' or 'json'");
    DcConfig probe = dc;
    if (single_epsilon) probe.epsilon = *single_epsilon;
    probe.validate();
    baseline_inner.validate();
    auto positive = [](std::size_t v, const char* what) {
      if (v == 0) throw ConfigError(std::string(what) + " must be positive");
    };
    positive(permutation.rows, "permutation.rows");
    positive(permutation.cols, "permutation.cols");
    positive(permutation.histogram_bins, "permutation.histogram_bins");
    positive(gw.x_rows, "gw.x_rows");
    positive(gw.x_cols, "gw.x_cols");
    positive(gw.y_rows, "gw.y_rows");
    positive(gw.y_cols, "gw.y_cols");
    auto grid = [](const std::vector<double>& g, const char* what) {
      if (g.empty()) throw ConfigError(std::string(what) + " must not be empty");
      for (double v : g) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(what) + " entries must be > 0");
      }
    };
    grid(permutation.epsilons, "permutation.epsilons");
    grid(gw.egw_grid, "gw.egw_grid");
    grid(gw.bcd_grid, "gw.bcd_grid");
    grid(gw.dc_grid, "gw.dc_grid");
    if (gw.baseline_max_sweeps < 1) throw ConfigError("gw.baseline_max_sweeps must be >= 1");
    if (!(gw.baseline_tol > 0.0)) throw ConfigError("gw.baseline_tol must be > 0");
  }

  std::vector<double> permutation_epsilons() const {
    return single_epsilon ? std::vector<double>{*single_epsilon} : permutation.epsilons;
  }
  std::vector<double> dc_epsilons() const {
    return single_epsilon ? std::vector<double>{*single_epsilon} : gw.dc_grid;
  }
};

/// Runs fn(0..n-1) on up to `threads` workers. The first exception is rethrown after all
/// workers stop.
template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct SampleStats {
  std::size_t count = 0;
  double mean = std::numeric_limits<double>::quiet_NaN();
  /// Unbiased (n - 1) standard deviation; 0 for a single sample.
  double stddev = std::numeric_limits<double>::quiet_NaN();
};

inline SampleStats sample_stats(const std::vector<double>& xs) {
  SampleStats s;
  s.count = xs.size();
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - s.mean) * (x - s.mean);
  s.stddev = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
  return s;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double ma = sample_stats(a).mean, mb = sample_stats(b).mean;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return saa > 0.0 && sbb > 0.0 ? sab / std::sqrt(saa * sbb) : std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------
// Data generation

struct PlantedInstance {
  DenseTensor X;
  DenseTensor Y;
  /// Y[j, l] = X[sample_perm[j], feature_perm[l]].
  std::vector<std::size_t> sample_perm;
  std::vector<std::size_t> feature_perm;
};

inline PlantedInstance make_planted_instance(std::uint64_t master_seed, std::uint64_t trial, std::size_t rows,
                                             std::size_t cols) {
  PlantedInstance inst;
  RandomStream stream(master_seed, trial, "perm-x");
  inst.X = gen_uniform_matrix(rows, cols, stream);
  inst.sample_perm = random_permutation(rows, stream);
  inst.feature_perm = random_permutation(cols, stream);
  inst.Y = DenseTensor(Shape{rows, cols});
  for (std::size_t j = 0; j < rows; ++j) {
    for (std::size_t l = 0; l < cols; ++l) inst.Y.values()[j * cols + l] = inst.X(inst.sample_perm[j], inst.feature_perm[l]);
  }
  return inst;
}

struct GwInstance {
  DenseTensor X;
  DenseTensor Y;
  DenseTensor Cx;
  DenseTensor Cy;
};

inline GwInstance make_gw_instance(std::uint64_t master_seed, std::uint64_t trial, const GwSettings& s) {
  GwInstance inst;
  RandomStream sx(master_seed, trial, "gw-x");
  RandomStream sy(master_seed, trial, "gw-y");
  inst.X = gen_uniform_matrix(s.x_rows, s.x_cols, sx);
  inst.Y = gen_uniform_matrix(s.y_rows, s.y_cols, sy);
  inst.Cx = sq_euclidean_distances(inst.X);
  inst.Cy = sq_euclidean_distances(inst.Y);
  return inst;
}

inline std::vector<double> uniform_vector(std::size_t n) { return std::vector<double>(n, 1.0 / static_cast<double>(n)); }

/// Fraction of rows of `coupling` whose argmax (lowest index on ties) equals truth[row].
inline double argmax_accuracy(const DenseTensor& coupling, const std::vector<std::size_t>& truth) {
  const std::size_t rows = coupling.extent(0), cols = coupling.extent(1);
  if (truth.size() != rows) throw ConfigError("argmax_accuracy: truth length does not match rows");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < cols; ++j) {
      if (coupling(i, j) > coupling(i, best)) best = j;
    }
    hits += best == truth[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(rows);
}

inline std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& p) {
  std::vector<std::size_t> inv(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) inv[p[j]] = j;
  return inv;
}

inline TuplePartition coot_partition() { return TuplePartition::from_lists({{0, 1}, {2, 3}}); }

// ---------------------------------------------------------------------------
// Permutation study

struct Histogram {
  double low = 0.0;
  double high = 0.0;
  std::vector<std::size_t> counts;
};

inline Histogram make_histogram(const std::vector<double>& xs, double low, double high, std::size_t bins) {
  Histogram h{low, high, std::vector<std::size_t>(bins, 0)};
  const double width = (high - low) / static_cast<double>(bins);
  for (double x : xs) {
    auto b = static_cast<std::ptrdiff_t>(std::floor((x - low) / width));
    b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

struct CrossMarginal {
  std::string name;
  std::vector<std::size_t> axes;
  std::vector<double> deviations;
  Histogram histogram;
};

struct PermutationRow {
  double epsilon = 0.0;
  double sample_accuracy = 0.0;
  double feature_accuracy = 0.0;
  double coot_loss = 0.0;
  double objective = 0.0;
  double max_cross_deviation = 0.0;
  int outer_iters = 0;
  long sinkhorn_iters = 0;
  int inner_nonconverged = 0;
  bool converged = false;
  /// Largest objective increase between consecutive outer steps (<= 0: monotone).
  double max_ascent = 0.0;
  double seconds = 0.0;
  DenseTensor sample_coupling;
  DenseTensor feature_coupling;
  std::vector<CrossMarginal> cross;
};

struct PermutationReport {
  PlantedInstance instance;
  std::vector<PermutationRow> rows;
};

inline PermutationReport permutation_study(const ExperimentConfig& cfg) {
  cfg.validate();
  const PermutationSettings& s = cfg.permutation;
  PermutationReport report;
  report.instance = make_planted_instance(cfg.master_seed, 0, s.rows, s.cols);
  const DenseTensor cost = build_cost_4d(report.instance.X, report.instance.Y);
  const MarginalFamily mu({uniform_vector(s.rows), uniform_vector(s.rows), uniform_vector(s.cols),
                           uniform_vector(s.cols)});
  const TuplePartition partition = coot_partition();
  const std::vector<std::size_t> sample_truth = inverse_permutation(report.instance.sample_perm);
  const std::vector<std::size_t> feature_truth = inverse_permutation(report.instance.feature_perm);
  const double uniform_cross = 1.0 / static_cast<double>(s.rows * s.cols);

  const std::vector<double> eps = cfg.permutation_epsilons();
  report.rows.resize(eps.size());
  parallel_for(eps.size(), cfg.threads, [&](std::size_t e) {
    const auto start = std::chrono::steady_clock::now();
    DcConfig dc = cfg.dc;
    dc.epsilon = eps[e];
    dc.epsilon0 = std::min(dc.epsilon0, dc.epsilon);
    const DcReport r = s.warm_start ? dc_solve_warmstart(cost, mu, partition, dc) : dc_solve(cost, mu, partition, dc);
    PermutationRow row;
    row.epsilon = eps[e];
    std::vector<DenseTensor> m = block_marginals(r.plan.tensor(), partition);
    row.sample_coupling = m[0];
    row.feature_coupling = m[1];
    row.sample_accuracy = argmax_accuracy(m[0], sample_truth);
    row.feature_accuracy = argmax_accuracy(m[1], feature_truth);
    row.coot_loss = coot_loss(cost, CouplingPair{m[0], m[1]});
    row.objective = r.objective_trace.back();
    row.outer_iters = r.outer_iters;
    row.sinkhorn_iters = r.sinkhorn_iters;
    row.inner_nonconverged = r.inner_nonconverged;
    row.converged = r.converged;
    row.max_ascent = max_stage_ascent(r);
    const std::vector<std::pair<std::string, std::vector<std::size_t>>> pairs{
        {"1-3", {0, 2}}, {"1-4", {0, 3}}, {"2-3", {1, 2}}, {"2-4", {1, 3}}};
    double max_dev = 0.0;
    for (const auto& [name, axes] : pairs) {
      CrossMarginal cm{name, axes, {}, {}};
      const DenseTensor joint = marginalize_axes(r.plan.tensor(), axes);
      for (double v : joint.values()) {
        cm.deviations.push_back(v - uniform_cross);
        max_dev = std::max(max_dev, std::abs(v - uniform_cross));
      }
      row.cross.push_back(std::move(cm));
    }
    row.max_cross_deviation = max_dev;
    const double range = max_dev > 0.0 ? max_dev : 1e-300;
    for (CrossMarginal& cm : row.cross) cm.histogram = make_histogram(cm.deviations, -range, range, s.histogram_bins);
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.rows[e] = std::move(row);
  });
  return report;
}

// ---------------------------------------------------------------------------
// GW-quality and v1 studies

/// One hyperparameter setting of one solver on one trial.
struct GridPoint {
  std::string solver;
  double param_1 = 0.0;
  std::optional<double> param_2;
  double loss = 0.0;
  bool converged = false;
  int iterations = 0;
  /// MMOT-DC only: largest objective increase between outer steps.
  double max_ascent = 0.0;
};

struct SolverOutcome {
  bool ran = false;
  bool failed = false;
  std::string error;
  double loss = std::numeric_limits<double>::quiet_NaN();
  double param_1 = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> param_2;
  bool converged = false;
  double seconds = 0.0;
};

struct TrialRecord {
  std::size_t trial = 0;
  std::map<std::string, SolverOutcome> solvers;
  std::vector<GridPoint> grid;

  bool failed() const {
    return std::any_of(solvers.begin(), solvers.end(), [](const auto& kv) { return kv.second.failed; });
  }
};

/// Best grid point by loss; ties keep the earliest point, i.e. the smallest hyperparameter
/// because grids are visited in ascending order.
inline const GridPoint* best_point(const std::vector<GridPoint>& grid, const std::string& solver) {
  const GridPoint* best = nullptr;
  for (const GridPoint& g : grid) {
    if (g.solver != solver) continue;
    if (best == nullptr || g.loss < best->loss) best = &g;
  }
  return best;
}

namespace detail {

inline std::vector<double> ascending(std::vector<double> g) {
  std::sort(g.begin(), g.end());
  return g;
}

inline void fill_outcome(SolverOutcome& out, const GridPoint* best) {
  out.ran = true;
  if (best == nullptr) return;
  out.loss = best->loss;
  out.param_1 = best->param_1;
  out.param_2 = best->param_2;
  out.converged = best->converged;
}

template <class F>
void timed_solver(TrialRecord& rec, const std::vector<std::string>& names, F&& body) {
  const auto start = std::chrono::steady_clock::now();
  try {
    body();
  } catch (const std::exception& e) {
    for (const auto& n : names) {
      rec.solvers[n].ran = true;
      rec.solvers[n].failed = true;
      rec.solvers[n].error = e.what();
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const auto& n : names) rec.solvers[n].seconds = secs;
}

inline void run_dc_grid(TrialRecord& rec, const std::string& name, const DenseTensor& cost, const MarginalFamily& mu,
                        const ExperimentConfig& cfg, GradientMode mode) {
  timed_solver(rec, {name}, [&] {
    const TuplePartition partition = coot_partition();
    for (double e : ascending(cfg.dc_epsilons())) {
      DcConfig dc = cfg.dc;
      dc.epsilon = e;
      dc.epsilon0 = std::min(dc.epsilon0, e);
      dc.gradient_mode = mode;
      const DcReport r = cfg.gw.warm_start ? dc_solve_warmstart(cost, mu, partition, dc)
                                           : dc_solve(cost, mu, partition, dc);
      const std::vector<DenseTensor> m = block_marginals(r.plan.tensor(), partition);
      rec.grid.push_back({name, e, std::nullopt, coot_loss(cost, CouplingPair{m[0], m[1]}), r.converged, r.outer_iters,
                          max_stage_ascent(r)});
    }
    fill_outcome(rec.solvers[name], best_point(rec.grid, name));
  });
}

}  // namespace detail

/// All enabled solvers on one seeded instance.
inline TrialRecord run_gw_trial(const ExperimentConfig& cfg, std::size_t trial) {
  const GwSettings& s = cfg.gw;
  const GwInstance inst = make_gw_instance(cfg.master_seed, trial, s);
  const std::vector<double> ux = uniform_vector(s.x_rows), uy = uniform_vector(s.y_rows);
  const CostSpec spec{inst.Cx, inst.Cy};
  TrialRecord rec;
  rec.trial = trial;

  if (cfg.solvers.egw_pg) {
    detail::timed_solver(rec, {kEgwPg}, [&] {
      for (double e : detail::ascending(s.egw_grid)) {
        const GwResult r = egw_pg(inst.Cx, inst.Cy, ux, uy, e, s.baseline_max_sweeps, s.baseline_tol, cfg.baseline_inner);
        rec.grid.push_back({kEgwPg, e, std::nullopt, r.loss_trace.back(), r.converged, r.sweeps});
      }
      detail::fill_outcome(rec.solvers[kEgwPg], best_point(rec.grid, kEgwPg));
    });
  }
  if (cfg.solvers.bcd) {
    // One parametric block descent: GW-BCD is its least-regularized grid point,
    // EGW-BCD the best pair over the whole grid.
    detail::timed_solver(rec, {kGwBcd, kEgwBcd}, [&] {
      const MarginalFamily mu({ux, uy, ux, uy});
      const std::vector<double> regs = detail::ascending(s.bcd_grid);
      for (double a : regs) {
        for (double b : regs) {
          const BcdResult r = coot_bcd(spec, mu, a, b, s.baseline_max_sweeps, s.baseline_tol, cfg.baseline_inner);
          rec.grid.push_back({kEgwBcd, a, b, r.loss_trace.back(), r.converged, r.sweeps});
        }
      }
      detail::fill_outcome(rec.solvers[kEgwBcd], best_point(rec.grid, kEgwBcd));
      const GridPoint* least = nullptr;
      for (const GridPoint& g : rec.grid) {
        if (g.solver == kEgwBcd && g.param_1 == regs.front() && g.param_2 == regs.front()) least = &g;
      }
      detail::fill_outcome(rec.solvers[kGwBcd], least);
    });
  }
  if (cfg.solvers.mmot_dc || cfg.solvers.mmot_dc_v1) {
    const DenseTensor cost = build_cost_4d(spec);
    const MarginalFamily mu({ux, uy, ux, uy});
    if (cfg.solvers.mmot_dc) detail::run_dc_grid(rec, kMmotDc, cost, mu, cfg, cfg.dc.gradient_mode);
    if (cfg.solvers.mmot_dc_v1) detail::run_dc_grid(rec, kMmotDcV1, cost, mu, cfg, GradientMode::v1);
  }
  return rec;
}

struct SolverSummary {
  SampleStats stats;
  std::vector<double> losses;
};

struct GwReport {
  std::vector<TrialRecord> trials;
  std::vector<std::string> solver_names;
  std::size_t excluded = 0;
  std::map<std::string, SolverSummary> summary;
};

inline std::vector<std::string> enabled_solvers(const SolverSelection& s) {
  std::vector<std::string> out;
  if (s.egw_pg) out.push_back(kEgwPg);
  if (s.bcd) {
    out.push_back(kGwBcd);
    out.push_back(kEgwBcd);
  }
  if (s.mmot_dc) out.push_back(kMmotDc);
  if (s.mmot_dc_v1) out.push_back(kMmotDcV1);
  return out;
}

/// Runs the trials and aggregates over those where no solver failed.
inline GwReport gw_study(const ExperimentConfig& cfg) {
  cfg.validate();
  GwReport report;
  report.solver_names = enabled_solvers(cfg.solvers);
  if (report.solver_names.empty()) throw ConfigError("no solver selected");
  report.trials.resize(static_cast<std::size_t>(cfg.trials));
  parallel_for(report.trials.size(), cfg.threads, [&](std::size_t t) { report.trials[t] = run_gw_trial(cfg, t); });
  for (const TrialRecord& rec : report.trials) {
    if (rec.failed()) {
      ++report.excluded;
      continue;
    }
    for (const std::string& name : report.solver_names) report.summary[name].losses.push_back(rec.solvers.at(name).loss);
  }
  for (const std::string& name : report.solver_names) {
    report.summary[name].stats = sample_stats(report.summary[name].losses);
  }
  return report;
}

inline ExperimentConfig v1_compare_config(ExperimentConfig cfg) {
  cfg.solvers = SolverSelection{false, false, true, true};
  cfg.dc.gradient_mode = GradientMode::corrected;
  return cfg;
}

// ---------------------------------------------------------------------------
// Report files

namespace detail {

inline std::string cell(const std::optional<double>& x) { return x ? io::format_double(*x) : std::string(); }

inline void write_table(const std::filesystem::path& dir, const std::string& stem, const io::CsvTable& table,
                        const std::string& format) {
  if (format == "json") io::atomic_write(dir / (stem + ".json"), io::dump(table.to_json()));
  else io::atomic_write(dir / (stem + ".csv"), table.str());
}

inline io::json stats_json(const SampleStats& s) {
  io::json j;
  j["n"] = s.count;
  j["mean"] = s.count > 0 ? io::json(s.mean) : io::json(nullptr);
  j["std"] = s.count > 0 ? io::json(s.stddev) : io::json(nullptr);
  return j;
}

inline std::string slug(const std::string& solver) {
  std::string out;
  for (char c : solver) out += c == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace detail

inline void write_permutation_report(const PermutationReport& report, const ExperimentConfig& cfg) {
  const std::filesystem::path& dir = cfg.output_dir;
  io::CsvTable trials({"epsilon", "sample_accuracy", "feature_accuracy", "coot_loss", "objective",
                       "max_cross_deviation", "outer_iters", "sinkhorn_iters", "inner_nonconverged", "converged",
                       "max_ascent"});
  io::CsvTable timing({"epsilon", "seconds"});
  io::CsvTable hist({"epsilon", "pair", "bin", "low", "high", "count"});
  io::json couplings;
  couplings["sample_permutation"] = report.instance.sample_perm;
  couplings["feature_permutation"] = report.instance.feature_perm;
  couplings["X"] = io::tensor_to_json(report.instance.X);
  couplings["Y"] = io::tensor_to_json(report.instance.Y);
  couplings["runs"] = io::json::array();
  for (const PermutationRow& r : report.rows) {
    trials.row() << r.epsilon << r.sample_accuracy << r.feature_accuracy << r.coot_loss << r.objective
                 << r.max_cross_deviation << r.outer_iters << r.sinkhorn_iters << r.inner_nonconverged << r.converged
                 << r.max_ascent;
    timing.row() << r.epsilon << r.seconds;
    for (const CrossMarginal& cm : r.cross) {
      const Histogram& h = cm.histogram;
      const double width = (h.high - h.low) / static_cast<double>(h.counts.size());
      for (std::size_t b = 0; b < h.counts.size(); ++b) {
        hist.row() << r.epsilon << cm.name << b << h.low + width * static_cast<double>(b)
                   << h.low + width * static_cast<double>(b + 1) << h.counts[b];
      }
    }
    io::json run;
    run["epsilon"] = r.epsilon;
    run["sample_coupling"] = io::tensor_to_json(r.sample_coupling);
    run["feature_coupling"] = io::tensor_to_json(r.feature_coupling);
    couplings["runs"].push_back(std::move(run));
  }
  detail::write_table(dir, "trials", trials, cfg.format);
  detail::write_table(dir, "histograms", hist, cfg.format);
  detail::write_table(dir, "timing", timing, cfg.format);
  io::atomic_write(dir / "couplings.json", io::dump(couplings));

  io::json summary;
  summary["study"] = "permutation";
  summary["master_seed"] = cfg.master_seed;
  bool recovered = false;
  double best_loss = std::numeric_limits<double>::infinity();
  for (const PermutationRow& r : report.rows) {
    recovered = recovered || (r.sample_accuracy == 1.0 && r.feature_accuracy == 1.0);
    best_loss = std::min(best_loss, r.coot_loss);
  }
  summary["recovered_at_some_epsilon"] = recovered;
  summary["min_coot_loss"] = best_loss;
  io::atomic_write(dir / "summary.json", io::dump(summary));
}

inline void write_gw_report(const GwReport& report, const ExperimentConfig& cfg, const std::string& study) {
  const std::filesystem::path& dir = cfg.output_dir;
  std::vector<std::string> header{"trial"};
  for (const std::string& name : report.solver_names) {
    const std::string k = detail::slug(name);
    header.insert(header.end(), {k + "_loss", k + "_param_1", k + "_param_2", k + "_converged"});
  }
  header.push_back("failed");
  io::CsvTable trials(header);
  std::vector<std::string> theader{"trial"};
  for (const std::string& name : report.solver_names) theader.push_back(detail::slug(name) + "_seconds");
  io::CsvTable timing(theader);
  io::CsvTable grid({"trial", "solver", "param_1", "param_2", "loss", "converged", "iterations", "max_ascent"});
  std::vector<std::string> sheader{"trial"};
  for (const std::string& name : report.solver_names) sheader.push_back(detail::slug(name));
  io::CsvTable scatter(sheader);

  for (const TrialRecord& rec : report.trials) {
    auto& row = trials.row();
    auto& trow = timing.row();
    row << rec.trial;
    trow << rec.trial;
    for (const std::string& name : report.solver_names) {
      const SolverOutcome& o = rec.solvers.at(name);
      row << o.loss << o.param_1 << detail::cell(o.param_2) << o.converged;
      trow << o.seconds;
    }
    row << rec.failed();
    for (const GridPoint& g : rec.grid) {
      grid.row() << rec.trial << g.solver << g.param_1 << detail::cell(g.param_2) << g.loss << g.converged << g.iterations
                 << g.max_ascent;
    }
    if (!rec.failed()) {
      auto& srow = scatter.row();
      srow << rec.trial;
      for (const std::string& name : report.solver_names) srow << rec.solvers.at(name).loss;
    }
  }
  detail::write_table(dir, "trials", trials, cfg.format);
  detail::write_table(dir, "timing", timing, cfg.format);
  detail::write_table(dir, "grid", grid, cfg.format);
  detail::write_table(dir, "scatter", scatter, cfg.format);

  io::json summary;
  summary["study"] = study;
  summary["master_seed"] = cfg.master_seed;
  summary["trials"] = report.trials.size();
  summary["excluded_trials"] = report.excluded;
  io::json solvers = io::json::object();
  for (const std::string& name : report.solver_names) solvers[name] = detail::stats_json(report.summary.at(name).stats);
  summary["solvers"] = std::move(solvers);
  if (study == "v1-compare" && report.summary.count(kMmotDc) && report.summary.count(kMmotDcV1)) {
    const auto& a = report.summary.at(kMmotDc);
    const auto& b = report.summary.at(kMmotDcV1);
    io::json paired;
    paired["mean_difference"] = a.stats.count > 0 ? io::json(a.stats.mean - b.stats.mean) : io::json(nullptr);
    const double r = pearson(a.losses, b.losses);
    paired["correlation"] = std::isfinite(r) ? io::json(r) : io::json(nullptr);
    summary["paired"] = std::move(paired);
  }
  io::atomic_write(dir / "summary.json", io::dump(summary));
}

inline PermutationReport run_permutation_study(const ExperimentConfig& cfg) {
  PermutationReport r = permutation_study(cfg);
  write_permutation_report(r, cfg);
  return r;
}

inline GwReport run_gw_quality_study(const ExperimentConfig& cfg) {
  GwReport r = gw_study(cfg);
  write_gw_report(r, cfg, "gw-quality");
  return r;
}

inline GwReport run_v1_comparison(const ExperimentConfig& cfg) {
  const ExperimentConfig paired = v1_compare_config(cfg);
  GwReport r = gw_study(paired);
  write_gw_report(r, paired, "v1-compare");
  return r;
}

}  // namespace mmotdc::experiments
