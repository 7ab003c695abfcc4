#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mmotdc/experiments.hpp"

using namespace mmotdc;
using namespace mmotdc::experiments;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("mmotdc_expt_" + name);
  fs::remove_all(d);
  return d;
}

ExperimentConfig small_permutation_config(const fs::path& out) {
  ExperimentConfig cfg;
  cfg.output_dir = out;
  cfg.threads = 1;
  cfg.permutation.rows = 6;
  cfg.permutation.cols = 5;
  cfg.permutation.epsilons = {1.0, 2.6};
  cfg.permutation.histogram_bins = 8;
  return cfg;
}

ExperimentConfig small_gw_config(const fs::path& out) {
  ExperimentConfig cfg;
  cfg.output_dir = out;
  cfg.threads = 1;
  cfg.trials = 2;
  cfg.gw.x_rows = 5;
  cfg.gw.x_cols = 2;
  cfg.gw.y_rows = 6;
  cfg.gw.y_cols = 2;
  cfg.gw.egw_grid = {0.01, 0.005};
  cfg.gw.bcd_grid = {0.05, 0.01};
  cfg.gw.dc_grid = {2.6};
  cfg.dc.max_outer = 200;
  return cfg;
}

}  // namespace

TEST(SampleStats, KnownValues) {
  const SampleStats s = sample_stats({1, 2, 3, 4});
  EXPECT_EQ(s.count, 4u);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.stddev, std::sqrt(5.0 / 3.0));
  EXPECT_EQ(sample_stats({7}).stddev, 0.0);
  EXPECT_TRUE(std::isnan(sample_stats({}).mean));
}

TEST(Pearson, KnownValues) {
  EXPECT_NEAR(pearson({1, 2, 3}, {2, 4, 6}), 1.0, 1e-15);
  EXPECT_NEAR(pearson({1, 2, 3}, {3, 2, 1}), -1.0, 1e-15);
  EXPECT_NEAR(pearson({1, 2, 3, 4}, {1, 3, 2, 4}), 0.8, 1e-15);
  EXPECT_TRUE(std::isnan(pearson({1, 1, 1}, {1, 2, 3})));
  EXPECT_TRUE(std::isnan(pearson({1}, {1})));
}

TEST(ParallelFor, VisitsEveryIndexOnceForAnyWorkerCount) {
  for (unsigned threads : {0u, 1u, 3u, 16u}) {
    std::vector<std::atomic<int>> hits(37);
    parallel_for(hits.size(), threads, [&](std::size_t i) { ++hits[i]; });
    for (auto& h : hits) EXPECT_EQ(h.load(), 1) << threads;
  }
}

TEST(ParallelFor, RethrowsAfterAllWorkersFinish) {
  for (unsigned threads : {1u, 4u}) {
    std::atomic<int> done{0};
    EXPECT_THROW(parallel_for(20, threads,
                              [&](std::size_t i) {
                                if (i == 5) throw std::runtime_error("boom");
                                ++done;
                              }),
                 std::runtime_error);
    if (threads > 1) {
      EXPECT_EQ(done.load(), 19);
    }
  }
}

TEST(PlantedInstance, RelationAndDeterminism) {
  const PlantedInstance a = make_planted_instance(7, 0, 9, 4);
  for (std::size_t j = 0; j < 9; ++j) {
    for (std::size_t l = 0; l < 4; ++l) EXPECT_EQ(a.Y(j, l), a.X(a.sample_perm[j], a.feature_perm[l]));
  }
  const PlantedInstance b = make_planted_instance(7, 0, 9, 4);
  EXPECT_EQ(a.sample_perm, b.sample_perm);
  EXPECT_EQ(a.feature_perm, b.feature_perm);
  for (std::size_t i = 0; i < a.X.size(); ++i) EXPECT_EQ(a.X[i], b.X[i]);
  const PlantedInstance c = make_planted_instance(8, 0, 9, 4);
  EXPECT_NE(a.X[0], c.X[0]);
}

TEST(GwInstance, DistanceMatricesMatchPoints) {
  GwSettings s;
  const GwInstance g = make_gw_instance(1, 2, s);
  EXPECT_EQ(g.X.shape(), (Shape{20, 3}));
  EXPECT_EQ(g.Y.shape(), (Shape{30, 2}));
  double d = 0;
  for (std::size_t k = 0; k < 3; ++k) d += std::pow(g.X(3, k) - g.X(7, k), 2);
  EXPECT_NEAR(g.Cx(3, 7), d, 1e-15);
  const GwInstance h = make_gw_instance(1, 3, s);
  EXPECT_NE(g.X[0], h.X[0]);
}

TEST(ArgmaxAccuracy, CountsMatchesAndBreaksTiesLow) {
  const DenseTensor c(Shape{3, 3}, {0.1, 0.5, 0.2, 0.3, 0.3, 0.0, 0.0, 0.1, 0.9});
  EXPECT_DOUBLE_EQ(argmax_accuracy(c, {1, 0, 2}), 1.0);
  EXPECT_DOUBLE_EQ(argmax_accuracy(c, {1, 1, 2}), 2.0 / 3.0);
  EXPECT_THROW(argmax_accuracy(c, {0, 1}), ConfigError);
}

TEST(InversePermutation, ComposesToIdentity) {
  const std::vector<std::size_t> p{2, 0, 3, 1};
  const auto inv = inverse_permutation(p);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(inv[p[i]], i);
}

TEST(Histogram, BinsAndClampsToRange) {
  const Histogram h = make_histogram({-1.0, -0.5, 0.0, 0.49, 0.5, 1.0, 5.0}, -1.0, 1.0, 4);
  EXPECT_EQ(h.counts, (std::vector<std::size_t>{1, 1, 2, 3}));
}

TEST(BestPoint, LowestLossAndEarliestOnTies) {
  const std::vector<GridPoint> grid{{"A", 1.0, {}, 0.3}, {"B", 1.0, {}, 0.1}, {"A", 2.0, {}, 0.2},
                                    {"A", 3.0, {}, 0.2}};
  EXPECT_EQ(best_point(grid, "A")->param_1, 2.0);
  EXPECT_EQ(best_point(grid, "B")->param_1, 1.0);
  EXPECT_EQ(best_point(grid, "C"), nullptr);
}

TEST(TrialRecord, FailedWhenAnySolverFailed) {
  TrialRecord rec;
  rec.solvers[kEgwPg].ran = true;
  EXPECT_FALSE(rec.failed());
  rec.solvers[kMmotDc].failed = true;
  EXPECT_TRUE(rec.failed());
}

TEST(SolverSelection, NamesAndV1Pairing) {
  EXPECT_EQ(enabled_solvers(SolverSelection{}), (std::vector<std::string>{kEgwPg, kGwBcd, kEgwBcd, kMmotDc}));
  ExperimentConfig cfg;
  cfg.dc.gradient_mode = GradientMode::paper_literal;
  const ExperimentConfig v1 = v1_compare_config(cfg);
  EXPECT_EQ(enabled_solvers(v1.solvers), (std::vector<std::string>{kMmotDc, kMmotDcV1}));
  EXPECT_EQ(v1.dc.gradient_mode, GradientMode::corrected);
}

TEST(ExperimentConfig, ValidateRejectsBadSettings) {
  EXPECT_NO_THROW(ExperimentConfig{}.validate());
  auto bad = [](auto mutate) {
    ExperimentConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  bad([](ExperimentConfig& c) { c.trials = 0; });
  bad([](ExperimentConfig& c) { c.format = "xml"; });
  bad([](ExperimentConfig& c) { c.single_epsilon = -1.0; });
  bad([](ExperimentConfig& c) { c.permutation.rows = 0; });
  bad([](ExperimentConfig& c) { c.gw.egw_grid.clear(); });
  bad([](ExperimentConfig& c) { c.gw.dc_grid = {1.0, 0.0}; });
  bad([](ExperimentConfig& c) { c.gw.baseline_max_sweeps = 0; });
}

TEST(ExperimentConfig, SingleEpsilonOverridesGrids) {
  ExperimentConfig c;
  EXPECT_EQ(c.permutation_epsilons().size(), 5u);
  c.single_epsilon = 1.8;
  EXPECT_EQ(c.permutation_epsilons(), std::vector<double>{1.8});
  EXPECT_EQ(c.dc_epsilons(), std::vector<double>{1.8});
}

TEST(PermutationStudy, SmallInstanceRecoversAndWritesFiles) {
  const fs::path out = scratch_dir("perm");
  const PermutationReport r = run_permutation_study(small_permutation_config(out));
  ASSERT_EQ(r.rows.size(), 2u);
  bool recovered = false;
  for (const PermutationRow& row : r.rows) {
    recovered = recovered || (row.sample_accuracy == 1.0 && row.feature_accuracy == 1.0);
    EXPECT_GE(row.coot_loss, 0.0);
    EXPECT_EQ(row.cross.size(), 4u);
    EXPECT_EQ(row.sample_coupling.shape(), (Shape{6, 6}));
    EXPECT_EQ(row.feature_coupling.shape(), (Shape{5, 5}));
  }
  EXPECT_TRUE(recovered);
  for (const char* f : {"trials.csv", "histograms.csv", "timing.csv", "couplings.json", "summary.json"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  const std::string trials = slurp(out / "trials.csv");
  EXPECT_EQ(trials.rfind("epsilon,sample_accuracy,feature_accuracy,coot_loss,", 0), 0u);
  EXPECT_EQ(std::count(trials.begin(), trials.end(), '\n'), 3);
  const io::json summary = io::read_json_file(out / "summary.json");
  EXPECT_TRUE(summary["recovered_at_some_epsilon"].get<bool>());
  fs::remove_all(out);
}

TEST(PermutationStudy, RerunIsByteIdentical) {
  const fs::path a = scratch_dir("perm_a"), b = scratch_dir("perm_b");
  ExperimentConfig ca = small_permutation_config(a), cb = small_permutation_config(b);
  ca.master_seed = cb.master_seed = 7;
  cb.threads = 2;
  run_permutation_study(ca);
  run_permutation_study(cb);
  EXPECT_EQ(slurp(a / "trials.csv"), slurp(b / "trials.csv"));
  EXPECT_EQ(slurp(a / "couplings.json"), slurp(b / "couplings.json"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(PermutationStudy, JsonFormat) {
  const fs::path out = scratch_dir("perm_json");
  ExperimentConfig cfg = small_permutation_config(out);
  cfg.format = "json";
  cfg.single_epsilon = 2.6;
  run_permutation_study(cfg);
  const io::json trials = io::read_json_file(out / "trials.json");
  ASSERT_EQ(trials.size(), 1u);
  EXPECT_EQ(trials[0]["epsilon"].get<double>(), 2.6);
  EXPECT_FALSE(fs::exists(out / "trials.csv"));
  fs::remove_all(out);
}

TEST(GwStudy, SmallRunProducesAllSolversAndConsistentBest) {
  const fs::path out = scratch_dir("gw");
  const ExperimentConfig cfg = small_gw_config(out);
  const GwReport r = run_gw_quality_study(cfg);
  ASSERT_EQ(r.trials.size(), 2u);
  EXPECT_EQ(r.excluded, 0u);
  for (const TrialRecord& rec : r.trials) {
    for (const std::string& name : r.solver_names) {
      const SolverOutcome& o = rec.solvers.at(name);
      EXPECT_TRUE(o.ran);
      EXPECT_FALSE(o.failed) << o.error;
      EXPECT_GE(o.loss, 0.0);
    }
    // The reported best is the minimum over that solver's grid.
    for (const GridPoint& g : rec.grid) EXPECT_GE(g.loss, rec.solvers.at(g.solver).loss);
    EXPECT_LE(rec.solvers.at(kEgwBcd).loss, rec.solvers.at(kGwBcd).loss);
    EXPECT_EQ(rec.solvers.at(kGwBcd).param_1, 0.01);
  }
  const io::json summary = io::read_json_file(out / "summary.json");
  for (const char* k : {kEgwPg, kGwBcd, kEgwBcd, kMmotDc}) {
    ASSERT_TRUE(summary["solvers"].contains(k)) << k;
    EXPECT_EQ(summary["solvers"][k]["n"].get<int>(), 2);
  }
  for (const char* f : {"trials.csv", "timing.csv", "grid.csv", "scatter.csv"}) EXPECT_TRUE(fs::exists(out / f)) << f;
  const std::string header = slurp(out / "trials.csv").substr(0, 60);
  EXPECT_EQ(header.rfind("trial,egw_pg_loss,egw_pg_param_1,", 0), 0u);
  fs::remove_all(out);
}

TEST(GwStudy, V1ComparisonWritesPairedSummary) {
  const fs::path out = scratch_dir("v1");
  ExperimentConfig cfg = small_gw_config(out);
  const GwReport r = run_v1_comparison(cfg);
  EXPECT_EQ(r.solver_names, (std::vector<std::string>{kMmotDc, kMmotDcV1}));
  const io::json summary = io::read_json_file(out / "summary.json");
  EXPECT_EQ(summary["study"], "v1-compare");
  ASSERT_TRUE(summary.contains("paired"));
  const double diff = summary["paired"]["mean_difference"].get<double>();
  EXPECT_NEAR(diff, r.summary.at(kMmotDc).stats.mean - r.summary.at(kMmotDcV1).stats.mean, 1e-15);
  const std::string trials = slurp(out / "trials.csv");
  EXPECT_NE(trials.find("mmot_dc_loss"), std::string::npos);
  EXPECT_NE(trials.find("mmot_dc_v1_loss"), std::string::npos);
  fs::remove_all(out);
}
