#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mmotdc/baselines.hpp"
#include "mmotdc/dc_solver.hpp"
#include "mmotdc/experiments.hpp"
#include "test_util.hpp"

using namespace mmotdc;
using mmotdc::testing::max_abs_diff;
using mmotdc::testing::random_marginals;
using mmotdc::testing::random_probability;
using mmotdc::testing::random_tensor;
using mmotdc::testing::unravel;

namespace {

double sum_block_entropies(const DenseTensor& p, const TuplePartition& part) {
  double s = 0.0;
  for (const DenseTensor& m : block_marginals(p, part)) s += neg_entropy(m);
  return s;
}

void expect_descent(const DcReport& r, double slack = 1e-9) {
  for (std::size_t t = 1; t < r.objective_trace.size(); ++t) {
    EXPECT_LE(r.objective_trace[t], r.objective_trace[t - 1] + slack) << "outer step " << t;
  }
}

DenseTensor random_coot_cost(std::mt19937_64& rng, std::size_t m, std::size_t n, std::size_t p, std::size_t q) {
  return build_cost_4d(random_tensor({m, p}, rng), random_tensor({n, q}, rng));
}

const TuplePartition kPairs = TuplePartition::from_lists({{0, 1}, {2, 3}});

}  // namespace

TEST(MmotdcObjective, FactoredPlanHasNoPenalty) {
  std::mt19937_64 rng(51);
  const DenseTensor p = tensor_product({random_probability({2, 3}, rng), random_probability({2, 2}, rng)});
  const DenseTensor c = random_tensor(p.shape(), rng);
  const DcObjectiveParts parts = mmotdc_objective_parts(c, p, kPairs, 3.0);
  EXPECT_NEAR(parts.kl, 0.0, 1e-14);
  EXPECT_NEAR(parts.value, inner(c, p), 1e-13);
}

TEST(MmotdcObjective, ZeroEpsilonIsLinear) {
  std::mt19937_64 rng(52);
  const DenseTensor p = random_probability({2, 2, 2, 2}, rng);
  const DenseTensor c = random_tensor(p.shape(), rng);
  EXPECT_EQ(mmotdc_objective(c, p, kPairs, 0.0), inner(c, p));
}

TEST(MmotdcObjective, MatchesDirectKl) {
  std::mt19937_64 rng(53);
  for (int t = 0; t < 10; ++t) {
    const DenseTensor p = random_probability({2, 2, 2, 2}, rng, 0.0);
    const DenseTensor c = random_tensor(p.shape(), rng);
    const double direct = inner(c, p) + 0.7 * kl_divergence(p, factored_projection(p, kPairs));
    EXPECT_NEAR(mmotdc_objective(c, p, kPairs, 0.7), direct, 1e-10);
  }
}

TEST(ConcaveGradient, CorrectedMatchesCentralDifferences) {
  std::mt19937_64 rng(54);
  const double h = 1e-5;
  for (int t = 0; t < 20; ++t) {
    const DenseTensor p = random_probability({2, 2, 2, 2}, rng, 0.1);
    const DenseTensor g = concave_gradient(p, kPairs, GradientMode::corrected);
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      DenseTensor up = p, down = p;
      up[i] += h;
      down[i] -= h;
      const double fd = (sum_block_entropies(up, kPairs) - sum_block_entropies(down, kPairs)) / (2 * h);
      worst = std::max(worst, std::abs(fd - g[i]));
    }
    EXPECT_LE(worst, 1e-6);
  }
}

TEST(ConcaveGradient, UniformSingletonClosedForm) {
  const DenseTensor p = DenseTensor::matrix(2, 2, {0.25, 0.25, 0.25, 0.25});
  const DenseTensor g = concave_gradient(p, TuplePartition::singletons(2), GradientMode::corrected);
  for (double v : g.values()) EXPECT_NEAR(v, 2.0 * (std::log(0.5) + 1.0), 1e-15);
}

TEST(ConcaveGradient, LiteralAndV1FollowTheirFormulas) {
  std::mt19937_64 rng(55);
  const DenseTensor p = random_probability({2, 3, 2}, rng);
  const TuplePartition part = TuplePartition::from_lists({{0}, {1, 2}});
  const DenseTensor m1 = marginalize(p, part.block(0));
  const DenseTensor m2 = marginalize(p, part.block(1));
  const DenseTensor lit = concave_gradient(p, part, GradientMode::paper_literal);
  const DenseTensor v1 = concave_gradient(p, part, GradientMode::v1);
  for (std::size_t f = 0; f < p.size(); ++f) {
    const auto idx = unravel(f, p.shape());
    const double a = m1(idx[0]);
    const double b = m2(idx[1], idx[2]);
    EXPECT_NEAR(lit[f], std::log(a) + p[f] / a + std::log(b) + p[f] / b, 1e-12);
    EXPECT_NEAR(v1[f], std::log(a) + a + std::log(b) + b, 1e-12);
  }
}

TEST(ConcaveGradient, ZeroMarginalIsDomainError) {
  const DenseTensor p = DenseTensor::matrix(2, 2, {0.5, 0.5, 0.0, 0.0});
  EXPECT_THROW(concave_gradient(p, TuplePartition::singletons(2), GradientMode::corrected), DomainError);
}

TEST(ConcaveGradient, ConstantShiftLeavesInnerSolveUnchanged) {
  // corrected and the log-only gradient differ by a constant per block, which the duals absorb.
  std::mt19937_64 rng(56);
  const DenseTensor p = random_probability({2, 3, 2, 2}, rng);
  const DenseTensor c = random_tensor(p.shape(), rng);
  const MarginalFamily mu = random_marginals(p.shape(), rng);
  const double eps = 0.5;
  std::vector<BlockTerm> with_one, log_only;
  for (const AxisBlock& b : kPairs.blocks()) {
    DenseTensor m = marginalize(p, b);
    DenseTensor g1 = m, g0 = m;
    for (std::size_t k = 0; k < m.size(); ++k) {
      g0[k] = -eps * std::log(m[k]);
      g1[k] = -eps * (std::log(m[k]) + 1.0);
    }
    with_one.push_back({b, g1});
    log_only.push_back({b, g0});
  }
  SinkhornConfig cfg;
  cfg.epsilon = eps;
  cfg.tol = 1e-12;
  const SinkhornResult a = sinkhorn_mmot(c, with_one, mu, cfg);
  const SinkhornResult b = sinkhorn_mmot(c, log_only, mu, cfg);
  EXPECT_LT(max_abs_diff(a.plan.tensor(), b.plan.tensor()), 1e-8);
}

TEST(DcSolve, DescentOnRandomInstances) {
  std::mt19937_64 rng(57);
  for (int t = 0; t < 8; ++t) {
    const DenseTensor c = random_coot_cost(rng, 3, 4, 2, 3);
    const MarginalFamily mu = random_marginals(c.shape(), rng);
    DcConfig cfg;
    cfg.epsilon = 0.2 + 0.4 * t;
    const DcReport r = dc_solve(c, mu, kPairs, cfg);
    expect_descent(r);
    // mu_T is factored, so the first objective is <C, mu_T> and every later one is below it.
    EXPECT_NEAR(r.objective_trace.front(), inner(c, product_measure(mu)), 1e-12);
    EXPECT_EQ(r.objective_trace.size(), static_cast<std::size_t>(r.outer_iters) + 1);
    EXPECT_EQ(r.kl_trace.size(), r.objective_trace.size());
    EXPECT_NEAR(r.objective_trace.back(), mmotdc_objective(c, r.plan.tensor(), kPairs, cfg.epsilon), 1e-9);
  }
}

TEST(DcSolve, V1AndLiteralModesRun) {
  std::mt19937_64 rng(58);
  const DenseTensor c = random_coot_cost(rng, 3, 3, 2, 2);
  const MarginalFamily mu = MarginalFamily::uniform(c.shape());
  for (GradientMode mode : {GradientMode::v1, GradientMode::paper_literal}) {
    DcConfig cfg;
    cfg.gradient_mode = mode;
    cfg.max_outer = 50;
    const DcReport r = dc_solve(c, mu, kPairs, cfg);
    EXPECT_TRUE(r.plan.tensor().all_finite());
    EXPECT_LE(r.objective_trace.back(), r.objective_trace.front() + 1e-9) << to_string(mode);
  }
}

TEST(DcSolve, SingletonBlocksAtLargeEpsilonCollapseToProduct) {
  std::mt19937_64 rng(59);
  const DenseTensor c = random_tensor({2, 2, 2}, rng);
  const MarginalFamily mu = random_marginals({2, 2, 2}, rng);
  DcConfig cfg;
  cfg.epsilon = 100.0;
  const DcReport r = dc_solve(c, mu, TuplePartition::singletons(3), cfg);
  EXPECT_LT(max_abs_diff(r.plan.tensor(), product_measure(mu)), 1e-3);
}

TEST(DcSolve, KlBoundedByCostOverEpsilon) {
  std::mt19937_64 rng(60);
  const DenseTensor c = random_coot_cost(rng, 3, 3, 2, 2);
  const MarginalFamily mu = MarginalFamily::uniform(c.shape());
  const double bound_num = inner(c, product_measure(mu));
  for (double eps : {1.0, 10.0, 100.0, 1000.0}) {
    DcConfig cfg;
    cfg.epsilon = eps;
    const DcReport r = dc_solve(c, mu, kPairs, cfg);
    EXPECT_LE(r.kl_trace.back(), bound_num / eps + 1e-12) << "eps " << eps;
  }
}

TEST(DcSolve, Deterministic) {
  std::mt19937_64 rng(61);
  const DenseTensor c = random_coot_cost(rng, 4, 3, 3, 2);
  const MarginalFamily mu = random_marginals(c.shape(), rng);
  DcConfig cfg;
  cfg.epsilon = 0.8;
  const DcReport a = dc_solve(c, mu, kPairs, cfg);
  const DcReport b = dc_solve(c, mu, kPairs, cfg);
  EXPECT_EQ(a.objective_trace, b.objective_trace);
  EXPECT_EQ(a.plan.tensor(), b.plan.tensor());
}

TEST(DcSolve, InputValidation) {
  const DenseTensor c(Shape{2, 2, 2, 2});
  const MarginalFamily mu = MarginalFamily::uniform(c.shape());
  DcConfig cfg;
  cfg.epsilon = -1.0;
  EXPECT_THROW(dc_solve(c, mu, kPairs, cfg), ConfigError);
  cfg = DcConfig{};
  EXPECT_THROW(dc_solve(c, MarginalFamily::uniform({2, 2, 2}), kPairs, cfg), ConfigError);
  EXPECT_THROW(dc_solve(c, mu, TuplePartition::from_lists({{0, 1, 2}}), cfg), ConfigError);
  cfg.step = 1.0;
  EXPECT_THROW(dc_solve_warmstart(c, mu, kPairs, cfg), ConfigError);
  cfg = DcConfig{};
  cfg.epsilon0 = 2.0;
  EXPECT_THROW(dc_solve_warmstart(c, mu, kPairs, cfg), ConfigError);
  const DenseTensor wrong(Shape{2, 2, 2, 1});
  EXPECT_THROW(dc_solve(c, mu, kPairs, DcConfig{}, &wrong), ConfigError);
}

TEST(WarmStart, GeometricLadder) {
  const std::vector<double> s = warmstart_schedule(0.1, 2.0, 2.6);
  const std::vector<double> expected{0.1, 0.2, 0.4, 0.8, 1.6, 2.6};
  ASSERT_EQ(s.size(), expected.size());
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], expected[i], 1e-15);
  EXPECT_EQ(warmstart_schedule(1.5, 2.0, 2.6).size(), 2u);
  EXPECT_EQ(warmstart_schedule(2.6, 2.0, 2.6), std::vector<double>{2.6});
}

TEST(WarmStart, StagesAreConcatenated) {
  std::mt19937_64 rng(62);
  const DenseTensor c = random_coot_cost(rng, 3, 3, 2, 2);
  const MarginalFamily mu = MarginalFamily::uniform(c.shape());
  DcConfig cfg;
  cfg.epsilon = 1.0;
  cfg.epsilon0 = 0.25;
  const DcReport r = dc_solve_warmstart(c, mu, kPairs, cfg);
  EXPECT_EQ(r.stage_epsilons, (std::vector<double>{0.25, 0.5, 1.0}));
  ASSERT_EQ(r.stage_starts.size(), 3u);
  EXPECT_EQ(r.stage_starts[0], 0u);
  EXPECT_LT(r.stage_starts[1], r.stage_starts[2]);
  EXPECT_EQ(r.objective_trace.size(), r.kl_trace.size());
  // Descent holds within each stage (the objective changes with epsilon between stages).
  for (std::size_t s = 0; s < r.stage_starts.size(); ++s) {
    const std::size_t end = s + 1 < r.stage_starts.size() ? r.stage_starts[s + 1] : r.objective_trace.size();
    for (std::size_t t = r.stage_starts[s] + 1; t < end; ++t) {
      EXPECT_LE(r.objective_trace[t], r.objective_trace[t - 1] + 1e-9) << "stage " << s << " step " << t;
    }
  }
  EXPECT_NEAR(r.objective_trace.back(), mmotdc_objective(c, r.plan.tensor(), kPairs, 1.0), 1e-9);
}

TEST(WarmStart, NotWorseThanColdStartOnPlantedInstances) {
  // Planted-permutation instances as in the recovery study. On generic random costs the
  // continuation can settle in a worse local minimum than the cold start from mu_T.
  for (std::uint64_t t = 0; t < 10; ++t) {
    const experiments::PlantedInstance inst = experiments::make_planted_instance(100, t, 6, 5);
    const DenseTensor c = build_cost_4d(inst.X, inst.Y);
    const MarginalFamily mu = MarginalFamily::uniform(c.shape());
    DcConfig cfg;
    cfg.epsilon = 2.6;
    cfg.max_outer = 1000;
    const DcReport cold = dc_solve(c, mu, kPairs, cfg);
    const DcReport warm = dc_solve_warmstart(c, mu, kPairs, cfg);
    EXPECT_LE(warm.objective_trace.back(), cold.objective_trace.back() + 1e-6) << "instance " << t;
  }
}

TEST(DcSolve, SymmetricGwInstanceGivesEqualBlockMarginals) {
  std::mt19937_64 rng(64);
  const DenseTensor cx = sq_euclidean_distances(random_tensor({5, 2}, rng));
  const DenseTensor cy = sq_euclidean_distances(random_tensor({4, 2}, rng));
  const DenseTensor c = build_cost_4d(cx, cy);
  const MarginalFamily mu = MarginalFamily::uniform(c.shape());
  DcConfig cfg;
  cfg.epsilon = 0.5;
  cfg.max_outer = 2000;
  cfg.outer_tol = 1e-12;
  cfg.inner.tol = 1e-10;
  const DcReport r = dc_solve(c, mu, kPairs, cfg);
  const std::vector<DenseTensor> m = block_marginals(r.plan.tensor(), kPairs);
  EXPECT_LE(max_abs_diff(m[0], m[1]), 1e-4);
}
