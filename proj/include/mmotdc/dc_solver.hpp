#pragma once

// Difference-of-convex solver for the relaxed factored MMOT problem
//
//     min_{P in U}  <C, P> + eps KL(P | P_{#T})
//   = min_{P in U}  <C, P> + eps H(P) - eps sum_m H(P_{#m}).
//
// Each outer step linearizes the concave part at P^(t) and solves the resulting
// entropic MMOT problem with cost C - eps G^(t) by Sinkhorn, warm-started from the
// previous duals.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmotdc/error.hpp"
#include "mmotdc/sinkhorn.hpp"
#include "mmotdc/tensor.hpp"

namespace mmotdc {

/// How G^(t) is formed from the current plan.
enum class GradientMode {
  /// (+)_m (log P_{#m} + 1): the exact gradient of sum_m H(P_{#m}).
  corrected,
  /// sum_m [log P_{#m} + P / P_{#m}] broadcast per entry, as originally printed.
  paper_literal,
  /// (+)_m (log P_{#m} + P_{#m}), the memory-light variant evaluated at P_{#T}.
  v1,
};

inline std::string_view to_string(GradientMode mode) {
  switch (mode) {
    case GradientMode::corrected: return "corrected";
    case GradientMode::paper_literal: return "paper-literal";
    case GradientMode::v1: return "v1";
  }
  return "?";
}

inline GradientMode parse_gradient_mode(std::string_view name) {
  if (name == "corrected") return GradientMode::corrected;
  if (name == "paper-literal" || name == "paper_literal") return GradientMode::paper_literal;
  if (name == "v1") return GradientMode::v1;
  throw ConfigError("unknown gradient mode '" + std::string(name) + "'");
}

inline bool is_block_separable(GradientMode mode) { return mode != GradientMode::paper_literal; }

struct DcConfig {
  double epsilon = 1.0;
  /// First rung of the warm-start ladder.
  double epsilon0 = 0.1;
  /// Ladder growth factor, > 1.
  double step = 2.0;
  int max_outer = 200;
  /// Stop when |F_t - F_{t-1}| <= outer_tol * |F_{t-1}|.
  double outer_tol = 1e-7;
  SinkhornConfig inner{};
  GradientMode gradient_mode = GradientMode::corrected;

  void validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("dc: epsilon must be > 0");
    if (!(epsilon0 > 0.0)) throw ConfigError("dc: epsilon0 must be > 0");
    if (!(step > 1.0)) throw ConfigError("dc: step must be > 1");
    if (max_outer < 1) throw ConfigError("dc: max_outer must be >= 1");
    if (!(outer_tol > 0.0)) throw ConfigError("dc: outer_tol must be > 0");
  }
};

struct DcReport {
  ProbabilityTensor plan;
  DenseTensor log_plan;
  /// <C,P> + eps KL(P|P_{#T}); entry 0 is the initial plan, then one per outer iteration.
  std::vector<double> objective_trace;
  std::vector<double> kl_trace;
  std::vector<double> linear_trace;
  /// Regularization of each stage and the trace index at which it starts.
  std::vector<double> stage_epsilons;
  std::vector<std::size_t> stage_starts;
  int outer_iters = 0;
  long sinkhorn_iters = 0;
  int inner_nonconverged = 0;
  /// Inner solves repeated at a tighter tolerance after an objective increase.
  int inner_refinements = 0;
  DualPotentials duals;
  bool converged = false;
  double seconds = 0.0;
};

/// Pieces of the relaxed objective at one plan.
struct DcObjectiveParts {
  double linear = 0.0;
  double kl = 0.0;
  double value = 0.0;
};

inline DcObjectiveParts mmotdc_objective_parts(const DenseTensor& cost, const DenseTensor& plan,
                                               const TuplePartition& partition, double epsilon) {
  partition.check_rank(plan.rank());
  DcObjectiveParts parts;
  parts.linear = inner(cost, plan);
  double kl = neg_entropy(plan);
  for (const DenseTensor& m : block_marginals(plan, partition)) kl -= neg_entropy(m);
  parts.kl = kl;
  parts.value = epsilon == 0.0 ? parts.linear : parts.linear + epsilon * kl;
  return parts;
}

/// <C,P> + eps (H(P) - sum_m H(P_{#m})), i.e. <C,P> + eps KL(P | P_{#T}) on probability tensors.
inline double mmotdc_objective(const DenseTensor& cost, const DenseTensor& plan, const TuplePartition& partition,
                               double epsilon) {
  return mmotdc_objective_parts(cost, plan, partition, epsilon).value;
}

namespace detail {

inline void check_log_marginal(const DenseTensor& log_m) {
  for (double v : log_m.values()) {
    if (!(v > -1e100)) throw DomainError("concave_gradient: zero marginal entry");
  }
}

}  // namespace detail

/// Per-block gradient pieces g_m with G = (+)_m g_m, for the block-separable modes.
inline std::vector<DenseTensor> concave_gradient_blocks(std::span<const DenseTensor> log_marginals,
                                                        GradientMode mode) {
  if (!is_block_separable(mode)) throw ConfigError("paper-literal gradient is not block separable");
  std::vector<DenseTensor> out;
  for (const DenseTensor& lm : log_marginals) {
    DenseTensor g = lm;
    for (auto& x : g.values()) {
      switch (mode) {
        case GradientMode::corrected: x += 1.0; break;
        case GradientMode::v1: x += std::exp(x); break;
        default: break;
      }
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// Full N-D gradient tensor from log P and the block log-marginals.
inline DenseTensor concave_gradient_from_log(const DenseTensor& log_plan, std::span<const DenseTensor> log_marginals,
                                             const TuplePartition& partition, GradientMode mode) {
  partition.check_rank(log_plan.rank());
  if (mode != GradientMode::paper_literal) {
    return tensor_sum(concave_gradient_blocks(log_marginals, mode), log_plan.shape());
  }
  DenseTensor g = tensor_sum(log_marginals, log_plan.shape());
  auto gv = g.values();
  auto lp = log_plan.values();
  for (std::size_t m = 0; m < partition.num_blocks(); ++m) {
    const auto [outer, middle, inner] = detail::split_at(log_plan.shape(), partition.block(m));
    auto lm = log_marginals[m].values();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t k = 0; k < middle; ++k) {
        const std::size_t base = (o * middle + k) * inner;
        for (std::size_t i = 0; i < inner; ++i) gv[base + i] += std::exp(lp[base + i] - lm[k]);
      }
    }
  }
  return g;
}

/// G in the (sub)gradient of sum_m H(P_{#m}) at P, per `mode`.
inline DenseTensor concave_gradient(const DenseTensor& plan, const TuplePartition& partition, GradientMode mode) {
  partition.check_rank(plan.rank());
  DenseTensor log_plan(plan.shape());
  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (plan[i] < 0.0) throw DomainError("concave_gradient: negative entry");
    log_plan[i] = plan[i] > 0.0 ? std::log(plan[i]) : -1e300;
  }
  std::vector<DenseTensor> log_marginals;
  for (const DenseTensor& m : block_marginals(plan, partition)) {
    DenseTensor lm(m.shape());
    for (std::size_t k = 0; k < m.size(); ++k) {
      if (!(m[k] > 0.0)) throw DomainError("concave_gradient: zero marginal entry");
      lm[k] = std::log(m[k]);
    }
    log_marginals.push_back(std::move(lm));
  }
  return concave_gradient_from_log(log_plan, log_marginals, partition, mode);
}

/// Regularization ladder eps0, s eps0, s^2 eps0, ... (all < eps), then eps itself.
inline std::vector<double> warmstart_schedule(double epsilon0, double step, double epsilon) {
  if (!(step > 1.0)) throw ConfigError("warm start: step must be > 1");
  if (!(epsilon0 > 0.0)) throw ConfigError("warm start: epsilon0 must be > 0");
  std::vector<double> out;
  for (double e = epsilon0; e < epsilon; e *= step) out.push_back(e);
  out.push_back(epsilon);
  return out;
}

namespace detail {

inline DenseTensor log_of_product_measure(const MarginalFamily& mu) {
  std::vector<DenseTensor> logs;
  for (const auto& v : mu.all()) {
    std::vector<double> l(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) l[k] = v[k] > 0.0 ? std::log(v[k]) : -1e300;
    logs.push_back(DenseTensor::vector(std::move(l)));
  }
  return tensor_sum(logs);
}

inline DenseTensor log_of(const DenseTensor& p) {
  DenseTensor out(p.shape());
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0) throw DomainError("initial plan has a negative entry");
    out[i] = p[i] > 0.0 ? std::log(p[i]) : -1e300;
  }
  return out;
}

inline bool objective_settled(double previous, double current, double tol) {
  return std::abs(current - previous) <= tol * std::max(std::abs(previous), 1e-300);
}

/// Objective pieces and block log-marginals of one iterate, sharing the passes over P.
struct IterateSummary {
  DcObjectiveParts parts;
  std::vector<DenseTensor> log_marginals;
};

inline IterateSummary summarize_iterate(const DenseTensor& cost, const DenseTensor& plan, const DenseTensor& log_plan,
                                        const TuplePartition& partition, double eps) {
  IterateSummary out;
  auto p = plan.values();
  auto lp = log_plan.values();
  double plogp = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) plogp += p[i] * lp[i];
  }
  double kl = plogp;
  for (std::size_t m = 0; m < partition.num_blocks(); ++m) {
    const DenseTensor marg = marginalize(plan, partition.block(m));
    kl -= neg_entropy(marg);
    DenseTensor lm(marg.shape());
    bool tiny = false;
    for (std::size_t k = 0; k < marg.size(); ++k) {
      tiny = tiny || !(marg[k] > 1e-250);
      lm[k] = marg[k] > 0.0 ? std::log(marg[k]) : -1e300;
    }
    // Near-underflow slices lose relative accuracy in the linear domain.
    if (tiny) lm = log_marginalize(log_plan, partition.block(m));
    check_log_marginal(lm);
    out.log_marginals.push_back(std::move(lm));
  }
  out.parts.linear = inner(cost, plan);
  out.parts.kl = kl;
  out.parts.value = eps == 0.0 ? out.parts.linear : out.parts.linear + eps * kl;
  return out;
}

}  // namespace detail

namespace detail {

/// Largest objective increase accepted as rounding noise.
inline double ascent_slack(double f) { return 1e-12 * std::max(1.0, std::abs(f)); }

inline DcReport dc_solve_from(const DenseTensor& cost, const MarginalFamily& mu, const TuplePartition& partition,
                              const DcConfig& cfg, const DenseTensor* init_plan, const DenseTensor* init_log_plan,
                              const DualPotentials* init_duals) {
  cfg.validate();
  mu.check_shape(cost.shape());
  partition.check_rank(cost.rank());
  const auto start = std::chrono::steady_clock::now();
  const double eps = cfg.epsilon;

  DenseTensor plan = init_plan ? *init_plan : product_measure(mu);
  if (plan.shape() != cost.shape()) throw ConfigError("dc_solve: initial plan shape does not match cost");
  DenseTensor log_plan = init_log_plan ? *init_log_plan : init_plan ? log_of(plan) : log_of_product_measure(mu);
  if (log_plan.shape() != cost.shape()) throw ConfigError("dc_solve: initial log plan shape does not match cost");
  DualPotentials duals = init_duals ? *init_duals : DualPotentials::zeros(cost.shape());
  if (!duals.matches(cost.shape())) throw ConfigError("dc_solve: initial duals do not match marginal extents");

  SinkhornConfig inner_cfg = cfg.inner;
  inner_cfg.epsilon = eps;

  std::vector<double> objective, kl, linear;
  IterateSummary current = summarize_iterate(cost, plan, log_plan, partition, eps);
  auto record = [&](const IterateSummary& s) {
    objective.push_back(s.parts.value);
    kl.push_back(s.parts.kl);
    linear.push_back(s.parts.linear);
  };
  record(current);

  KernelCache kernel_cache;
  auto solve_inner = [&](const SinkhornConfig& icfg, const DualPotentials& from) {
    if (is_block_separable(cfg.gradient_mode)) {
      // G is a sum of block tensors: hand them to the kernel assembly instead of
      // forming C - eps G.
      std::vector<BlockTerm> terms;
      std::vector<DenseTensor> blocks = concave_gradient_blocks(current.log_marginals, cfg.gradient_mode);
      for (std::size_t m = 0; m < blocks.size(); ++m) {
        for (auto& x : blocks[m].values()) x *= -eps;
        terms.push_back({partition.block(m), std::move(blocks[m])});
      }
      return run_sinkhorn(cost, terms, mu, icfg, &from, &kernel_cache);
    }
    DenseTensor modified = concave_gradient_from_log(log_plan, current.log_marginals, partition, cfg.gradient_mode);
    auto mv = modified.values();
    auto cv = cost.values();
    for (std::size_t i = 0; i < mv.size(); ++i) mv[i] = cv[i] - eps * mv[i];
    return sinkhorn_mmot(modified, mu, icfg, &from);
  };

  int outer = 0;
  long sinkhorn_iters = 0;
  int nonconverged = 0;
  int refinements = 0;
  bool converged = false;
  for (int step = 1; step <= cfg.max_outer; ++step) {
    // The descent guarantee assumes exact inner solves. An objective increase means the
    // inner tolerance is too loose for this step, so the solve is tightened (twice at most).
    SinkhornConfig icfg = inner_cfg;
    SinkhornResult res = solve_inner(icfg, duals);
    sinkhorn_iters += res.iters;
    IterateSummary next = summarize_iterate(cost, res.plan.tensor(), res.log_plan, partition, eps);
    const bool descends_exactly = cfg.gradient_mode == GradientMode::corrected;
    for (int attempt = 0; descends_exactly && attempt < 2 &&
                          next.parts.value > current.parts.value + ascent_slack(current.parts.value);
         ++attempt) {
      ++refinements;
      icfg.tol = std::max(icfg.tol * 1e-2, 1e-14);
      icfg.max_iters = std::max(icfg.max_iters, 10 * inner_cfg.max_iters);
      const DualPotentials from = res.duals;
      res = solve_inner(icfg, from);
      sinkhorn_iters += res.iters;
      next = summarize_iterate(cost, res.plan.tensor(), res.log_plan, partition, eps);
    }
    if (descends_exactly && next.parts.value > current.parts.value + ascent_slack(current.parts.value)) {
      // No further progress is resolvable at double precision: keep the last accepted iterate.
      converged = true;
      break;
    }
    if (!res.converged) ++nonconverged;
    duals = std::move(res.duals);
    log_plan = std::move(res.log_plan);
    plan = res.plan.tensor();
    current = std::move(next);
    record(current);
    outer = step;
    if (objective_settled(objective[objective.size() - 2], objective.back(), cfg.outer_tol)) {
      converged = true;
      break;
    }
  }

  DcReport report{ProbabilityTensor(std::move(plan), 1e-6), std::move(log_plan)};
  report.objective_trace = std::move(objective);
  report.kl_trace = std::move(kl);
  report.linear_trace = std::move(linear);
  report.stage_epsilons = {eps};
  report.stage_starts = {0};
  report.outer_iters = outer;
  report.sinkhorn_iters = sinkhorn_iters;
  report.inner_nonconverged = nonconverged;
  report.inner_refinements = refinements;
  report.duals = std::move(duals);
  report.converged = converged;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace detail

/// DC iterations at a single epsilon, starting from `init_plan` (default mu_T) and
/// `init_duals` (default zero).
inline DcReport dc_solve(const DenseTensor& cost, const MarginalFamily& mu, const TuplePartition& partition,
                         const DcConfig& cfg, const DenseTensor* init_plan = nullptr,
                         const DualPotentials* init_duals = nullptr) {
  return detail::dc_solve_from(cost, mu, partition, cfg, init_plan, nullptr, init_duals);
}

/// DC iterations along the ladder eps0, s eps0, ... < eps, each stage initialized from
/// the previous plan and duals, finishing with a solve at exactly eps.
inline DcReport dc_solve_warmstart(const DenseTensor& cost, const MarginalFamily& mu, const TuplePartition& partition,
                                   const DcConfig& cfg, const DenseTensor* init_plan = nullptr,
                                   const DualPotentials* init_duals = nullptr) {
  cfg.validate();
  if (cfg.epsilon0 > cfg.epsilon) throw ConfigError("warm start: epsilon0 must not exceed epsilon");
  const auto start = std::chrono::steady_clock::now();
  const std::vector<double> ladder = warmstart_schedule(cfg.epsilon0, cfg.step, cfg.epsilon);

  std::optional<DcReport> acc;
  for (double e : ladder) {
    DcConfig stage_cfg = cfg;
    stage_cfg.epsilon = e;
    const DenseTensor* plan0 = acc ? &acc->plan.tensor() : init_plan;
    const DenseTensor* log_plan0 = acc ? &acc->log_plan : nullptr;
    const DualPotentials* duals0 = acc ? &acc->duals : init_duals;
    DcReport stage = detail::dc_solve_from(cost, mu, partition, stage_cfg, plan0, log_plan0, duals0);
    if (!acc) {
      acc = std::move(stage);
      continue;
    }
    const std::size_t offset = acc->objective_trace.size();
    auto append = [](std::vector<double>& dst, const std::vector<double>& src) {
      dst.insert(dst.end(), src.begin(), src.end());
    };
    append(acc->objective_trace, stage.objective_trace);
    append(acc->kl_trace, stage.kl_trace);
    append(acc->linear_trace, stage.linear_trace);
    acc->stage_epsilons.push_back(e);
    acc->stage_starts.push_back(offset);
    acc->outer_iters += stage.outer_iters;
    acc->sinkhorn_iters += stage.sinkhorn_iters;
    acc->inner_nonconverged += stage.inner_nonconverged;
    acc->inner_refinements += stage.inner_refinements;
    acc->converged = stage.converged;
    acc->duals = std::move(stage.duals);
    acc->log_plan = std::move(stage.log_plan);
    acc->plan = std::move(stage.plan);
  }
  acc->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return std::move(*acc);
}

/// Largest single-step increase of the objective within any stage; <= 0 means the run
/// descended monotonically.
inline double max_stage_ascent(const DcReport& r) {
  double worst = -std::numeric_limits<double>::infinity();
  const std::size_t stages = std::max<std::size_t>(r.stage_starts.size(), 1);
  for (std::size_t s = 0; s < stages; ++s) {
    const std::size_t begin = r.stage_starts.empty() ? 0 : r.stage_starts[s];
    const std::size_t end = s + 1 < r.stage_starts.size() ? r.stage_starts[s + 1] : r.objective_trace.size();
    for (std::size_t t = begin + 1; t < end; ++t) {
      worst = std::max(worst, r.objective_trace[t] - r.objective_trace[t - 1]);
    }
  }
  return std::isfinite(worst) ? worst : 0.0;
}

}  // namespace mmotdc
