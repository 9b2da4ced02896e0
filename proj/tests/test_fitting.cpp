#include "colliderlab/fitting.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>

#include "oracle.hpp"

using namespace colliderlab;

namespace {

double max_abs_error(const CbnParams &a, const CbnParams &b) {
  return std::max({std::abs(a.b - b.b), std::abs(a.m1 - b.m1), std::abs(a.m2 - b.m2),
                   std::abs(a.p1 - b.p1), std::abs(a.p2 - b.p2)});
}

const CbnParams kTheta{0.1, 0.8, 0.6, 0.4, 0.4};

}  // namespace

TEST(SseLoss, ZeroAtGeneratingParameters) {
  const auto data = oracle::synthetic_dataset(kTheta);
  EXPECT_LT(sse_loss(kTheta, data), 1e-28);
}

TEST(SseLoss, SingleRecordHandArithmetic) {
  // P(E=1 | C1=1, C2=1) = 0.8 at b=0.2, m=0.5; (0.8 - 0.5)^2
  const CbnParams p{0.2, 0.5, 0.5, 0.5, 0.5};
  const std::vector<JudgmentRecord> one{
      JudgmentRecord::make("a", Condition{}, "weather", TaskId::I, 50.0)};
  EXPECT_NEAR(sse_loss(p, one), 0.09, 1e-15);
}

TEST(SseLoss, AdditiveUnderDuplication) {
  std::mt19937_64 rng(2);
  const auto data = oracle::synthetic_dataset(oracle::random_params(rng), 0.1, 9);
  auto doubled = data;
  doubled.insert(doubled.end(), data.begin(), data.end());
  const CbnParams p{0.3, 0.4, 0.7, 0.6, 0.6};
  EXPECT_NEAR(sse_loss(p, doubled), 2.0 * sse_loss(p, data), 1e-12);
}

TEST(SseLoss, UndefinedIsInfiniteAndEmptyThrows) {
  const std::vector<JudgmentRecord> one{
      JudgmentRecord::make("a", Condition{}, "weather", TaskId::VI, 30.0)};
  EXPECT_TRUE(std::isinf(sse_loss(CbnParams{0.2, 0.5, 1.0, 0.5, 0.5}, one)));
  EXPECT_THROW(sse_loss(kTheta, std::vector<JudgmentRecord>{}), std::invalid_argument);
}

TEST(SseLoss, AggregatedSummaryMatchesRecordByRecord) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    const auto data = oracle::synthetic_dataset(oracle::random_params(rng), 0.08, i);
    const TaskSummary summary(data);
    const CbnParams p = oracle::random_params(rng);
    EXPECT_NEAR(summary.sse(p), sse_loss(p, data), 1e-12);
  }
}

TEST(StartPoints, CornersFirstAndDeterministic) {
  FitConfig c;
  const auto a = start_points(c);
  ASSERT_EQ(a.size(), 16u);
  EXPECT_DOUBLE_EQ(a[0].b, 0.01);
  EXPECT_DOUBLE_EQ(a[0].m1, 0.99);
  EXPECT_DOUBLE_EQ(a[0].p1, 0.5);
  EXPECT_DOUBLE_EQ(a[1].b, 0.5);
  EXPECT_EQ(a, start_points(c));
  c.start_seed = 1;
  EXPECT_NE(a, start_points(c));
  for (const auto &p : a) EXPECT_NO_THROW(p.validate());
}

TEST(FitConfig, Validation) {
  FitConfig c;
  c.n_starts = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.n_starts = 1;
  c.convergence_tol = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Fit, RecoversNoiselessParameters) {
  const auto data = oracle::synthetic_dataset(kTheta);
  const FitResult r = fit(data, FitConfig{});
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.sse, 1e-8);
  EXPECT_LE(max_abs_error(r.params, kTheta), 1e-3);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Fit, BoundarySolutionIsAdmissible) {
  std::vector<JudgmentRecord> data;
  for (const auto &t : rw17_task_set()) {
    for (auto d : kStoryDomains) {
      const double v = t.kind() == TaskKind::Predictive ? 100.0 : 50.0;
      data.push_back(JudgmentRecord::make("a", Condition{}, std::string(d), t.id, v));
    }
  }
  FitResult r;
  try {
    r = fit(data, FitConfig{});
  } catch (const NonConvergence &e) {
    r = e.best();
  }
  EXPECT_TRUE(std::isfinite(r.sse));
  EXPECT_GE(std::max({r.params.b, r.params.m1, r.params.m2}), 0.99);
  EXPECT_NO_THROW(r.params.validate());
}

TEST(Fit, DeterministicAndNoWorseThanAnyStart) {
  std::mt19937_64 rng(8);
  const auto data = oracle::synthetic_dataset(oracle::random_params(rng), 0.05, 3);
  const FitResult a = fit(data, FitConfig{});
  const FitResult b = fit(data, FitConfig{});
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.sse, b.sse);
  EXPECT_EQ(a.best_start_index, b.best_start_index);
  for (double s : a.start_losses) EXPECT_LE(a.sse, s);
}

TEST(Fit, MaeMatchesIndependentRecomputation) {
  std::mt19937_64 rng(12);
  const auto data = oracle::synthetic_dataset(oracle::random_params(rng), 0.05, 1);
  const FitResult r = fit(data, FitConfig{});
  double total = 0.0;
  for (const auto &rec : data) {
    total += std::abs(oracle::conditional(r.params, task_query(rec.task)) - rec.normalized);
  }
  EXPECT_NEAR(r.mae, total / data.size(), 1e-12);
  EXPECT_GE(r.mae, 0.0);
  EXPECT_LE(r.mae, 1.0);
}

TEST(Fit, WarnsWhenTooFewTasks) {
  std::vector<JudgmentRecord> data;
  for (TaskId t : {TaskId::I, TaskId::II, TaskId::III}) {
    data.push_back(JudgmentRecord::make("a", Condition{}, "weather", t, 60.0));
  }
  FitResult r;
  try {
    r = fit(data, FitConfig{});
  } catch (const NonConvergence &e) {
    r = e.best();
  }
  ASSERT_FALSE(r.warnings.empty());
  EXPECT_NE(r.warnings[0].find("unidentifiable"), std::string::npos);
  EXPECT_THROW(fit(std::vector<JudgmentRecord>{}, FitConfig{}), InsufficientData);
}

TEST(Fit, TiedModelIsInvariantToSwappingCauseLabels) {
  std::mt19937_64 rng(14);
  FitConfig c;
  c.tie_strengths = true;
  CbnParams theta = oracle::random_params(rng);
  theta.m2 = theta.m1;
  const auto data = oracle::synthetic_dataset(theta, 0.05, 2);
  const FitResult r = fit(data, c);
  // Relabelling C1 <-> C2 turns every query into its mirror image. Under a
  // tied model the mirrored loss is the same function of the parameters.
  double mirrored = 0.0;
  for (const auto &rec : data) {
    const double d = eval_query(r.params, mirror(task_query(rec.task))) - rec.normalized;
    mirrored += d * d;
  }
  EXPECT_NEAR(mirrored, r.sse, 1e-12);
  EXPECT_EQ(r.params.m1, r.params.m2);
}

TEST(Fit, AggregateCellsUsesCellMeans) {
  std::vector<JudgmentRecord> data;
  for (double v : {40.0, 60.0, 50.0}) {
    data.push_back(JudgmentRecord::make("human", Condition{}, "economy", TaskId::IV, v));
  }
  data.push_back(JudgmentRecord::make("human", Condition{}, "weather", TaskId::IV, 20.0));
  const auto cells = aggregate_cells(data);
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_EQ(cells[0].domain, "economy");
  EXPECT_DOUBLE_EQ(cells[0].raw_value, 50.0);
  EXPECT_DOUBLE_EQ(cells[1].raw_value, 20.0);
}

TEST(FitMany, ParallelMatchesSerial) {
  std::mt19937_64 rng(21);
  std::vector<std::vector<JudgmentRecord>> sets;
  for (int i = 0; i < 6; ++i) {
    sets.push_back(oracle::synthetic_dataset(oracle::random_params(rng), 0.05, i));
  }
  sets.emplace_back();
  const auto serial = fit_many(sets, FitConfig{}, Execution::Serial);
  const auto parallel = fit_many(sets, FitConfig{}, Execution::Parallel);
  ASSERT_EQ(serial.size(), parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(serial[i].ok, parallel[i].ok);
    EXPECT_EQ(serial[i].result.params, parallel[i].result.params);
    EXPECT_EQ(serial[i].result.sse, parallel[i].result.sse);
  }
  EXPECT_FALSE(serial.back().ok);
  EXPECT_FALSE(serial.back().error.empty());
}

TEST(GridOracle, LatticeCardinality) {
  const auto data = oracle::synthetic_dataset(CbnParams::tied(0.5, 0.5, 0.5));
  const FitResult r = grid_oracle_fit(data, 0.5, true, true);
  EXPECT_EQ(r.n_starts_used, 27);
  EXPECT_EQ(lattice_axis(0.05).size(), 21u);
  EXPECT_EQ(lattice_axis(0.3).back(), 1.0);
  EXPECT_THROW(lattice_axis(0.0), std::invalid_argument);
  EXPECT_THROW(lattice_axis(0.6), std::invalid_argument);
}

TEST(GridOracle, RecoversLatticeMember) {
  const CbnParams theta = CbnParams::tied(0.25, 0.75, 0.5);
  const auto data = oracle::synthetic_dataset(theta);
  const FitResult r = grid_oracle_fit(data, 0.25, true, true);
  EXPECT_EQ(r.params, theta);
  EXPECT_LT(r.sse, 1e-28);

  const CbnParams untied{0.5, 0.25, 0.75, 0.5, 0.5};
  const FitResult u = grid_oracle_fit(oracle::synthetic_dataset(untied), 0.25);
  EXPECT_EQ(u.params, untied);
}

TEST(GridOracle, ParallelMatchesSerial) {
  std::mt19937_64 rng(6);
  const auto data = oracle::synthetic_dataset(oracle::random_params(rng), 0.05, 4);
  const FitResult s = grid_oracle_fit(data, 0.1, false, true, Execution::Serial);
  const FitResult p = grid_oracle_fit(data, 0.1, false, true, Execution::Parallel);
  EXPECT_EQ(s.params, p.params);
  EXPECT_EQ(s.sse, p.sse);
  EXPECT_EQ(s.best_start_index, p.best_start_index);
}

TEST(GridOracle, NeverBeatsTheFitter) {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 50; ++i) {
    const double noise = i % 2 ? 0.05 : 0.0;
    const auto data = oracle::synthetic_dataset(oracle::random_params(rng), noise, i);
    const FitResult f = fit(data, FitConfig{});
    const FitResult g = grid_oracle_fit(data, 0.05);
    EXPECT_LE(f.sse, g.sse) << "agent " << i;
  }
}

TEST(GridOracle, GapShrinksUnderRefinement) {
  std::mt19937_64 rng(33);
  const auto data = oracle::synthetic_dataset(oracle::random_params(rng), 0.05, 7);
  const double best = fit(data, FitConfig{}).sse;
  std::vector<double> gaps;
  for (double step : {0.5, 0.25, 0.1, 0.05}) {
    gaps.push_back(grid_oracle_fit(data, step).sse - best);
  }
  for (double g : gaps) EXPECT_GE(g, 0.0);
  // 0.25 and 0.05 lattices contain the 0.5 and 0.1 lattices respectively.
  EXPECT_LE(gaps[1], gaps[0]);
  EXPECT_LE(gaps[3], gaps[2]);
  EXPECT_LT(gaps[3], 0.1 * gaps[0]);
  EXPECT_LT(gaps[3], 0.02);
}

TEST(Loocv, NoiselessDataGeneralizes) {
  const auto data = oracle::synthetic_dataset(kTheta);
  const LoocvResult r = loocv_r2(data, FitConfig{});
  EXPECT_GE(r.r2, 1.0 - 1e-6);
  EXPECT_LE(r.r2, 1.0);
}

TEST(Loocv, FoldsPartitionTheData) {
  std::mt19937_64 rng(41);
  const auto data = oracle::synthetic_dataset(oracle::random_params(rng), 0.05, 5);
  const LoocvResult r = loocv_r2(data, FitConfig{});
  ASSERT_EQ(r.predictions.size(), data.size());
  std::map<TaskId, int> held;
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(r.predictions[i].task, data[i].task);
    EXPECT_EQ(r.predictions[i].domain, data[i].domain);
    EXPECT_EQ(r.predictions[i].judgment, data[i].normalized);
    ++held[data[i].task];
  }
  EXPECT_EQ(held.size(), 11u);
  for (auto [t, n] : held) EXPECT_EQ(n, 3);
}

TEST(Loocv, ParallelMatchesSerial) {
  std::mt19937_64 rng(43);
  const auto data = oracle::synthetic_dataset(oracle::random_params(rng), 0.05, 6);
  const LoocvResult s = loocv_r2(data, FitConfig{}, Execution::Serial);
  const LoocvResult p = loocv_r2(data, FitConfig{}, Execution::Parallel);
  EXPECT_EQ(s.r2, p.r2);
  EXPECT_EQ(s.fold_params, p.fold_params);
}

TEST(Loocv, PermutedNoiseCanGoNegative) {
  // Judgments unrelated to the task structure: the held-out fits predict
  // systematically wrong values and R^2 drops below zero.
  auto data = oracle::synthetic_dataset(kTheta);
  std::mt19937_64 rng(45);
  std::vector<double> values;
  for (const auto &r : data) values.push_back(r.normalized);
  std::shuffle(values.begin(), values.end(), rng);
  std::normal_distribution<double> noise(0.0, 0.3);
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = JudgmentRecord::make("a", Condition{}, data[i].domain, data[i].task,
                                   100.0 * std::clamp(values[i] + noise(rng), 0.0, 1.0));
  }
  const LoocvResult r = loocv_r2(data, FitConfig{});
  EXPECT_LT(r.r2, 0.0);
}

TEST(Loocv, ErrorPaths) {
  std::vector<JudgmentRecord> constant;
  for (const auto &t : rw17_task_set()) {
    constant.push_back(JudgmentRecord::make("a", Condition{}, "weather", t.id, 50.0));
  }
  EXPECT_THROW(loocv_r2(constant, FitConfig{}), UndefinedR2);
  constant.pop_back();
  EXPECT_THROW(loocv_r2(constant, FitConfig{}), InsufficientData);
}
