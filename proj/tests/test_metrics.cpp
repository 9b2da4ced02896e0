#include "colliderlab/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "oracle.hpp"

using namespace colliderlab;

namespace {

JudgmentRecord rec(TaskId t, double raw, std::string domain = "weather") {
  return JudgmentRecord::make("agent", Condition{}, std::move(domain), t, raw);
}

}  // namespace

TEST(ExplainingAway, HandFixtures) {
  const std::vector<JudgmentRecord> strong{rec(TaskId::IX, 100), rec(TaskId::XI, 50)};
  EXPECT_DOUBLE_EQ(explaining_away(strong), 0.5);
  const std::vector<JudgmentRecord> none{rec(TaskId::IX, 70), rec(TaskId::XI, 70)};
  EXPECT_DOUBLE_EQ(explaining_away(none), 0.0);
}

TEST(ExplainingAway, AveragesDomainsThenDifferences) {
  const std::vector<JudgmentRecord> rs{rec(TaskId::IX, 80, "weather"),
                                       rec(TaskId::IX, 60, "economy"),
                                       rec(TaskId::IX, 60, "economy"),
                                       rec(TaskId::XI, 50, "weather"),
                                       rec(TaskId::XI, 50, "economy")};
  EXPECT_NEAR(explaining_away(rs), 0.2, 1e-15);
}

TEST(ExplainingAway, MissingTaskListsIt) {
  const std::vector<JudgmentRecord> rs{rec(TaskId::IX, 80)};
  try {
    explaining_away(rs);
    FAIL() << "expected MissingData";
  } catch (const MissingData &e) {
    ASSERT_EQ(e.missing().size(), 1u);
    EXPECT_EQ(e.missing()[0], TaskId::XI);
    EXPECT_NE(std::string(e.what()).find("XI"), std::string::npos);
  }
}

TEST(MarkovViolation, HandFixtures) {
  EXPECT_DOUBLE_EQ(markov_violation(std::vector{rec(TaskId::IV, 50), rec(TaskId::V, 50)}), 0.0);
  EXPECT_NEAR(markov_violation(std::vector{rec(TaskId::IV, 70), rec(TaskId::V, 40)}), 0.3,
              1e-15);
  EXPECT_NEAR(markov_violation(std::vector{rec(TaskId::IV, 40), rec(TaskId::V, 70)}), 0.3,
              1e-15);
  EXPECT_THROW(markov_violation(std::vector{rec(TaskId::IV, 40)}), MissingData);
}

TEST(BiasSignatures, CbnGeneratedJudgmentsAreNormative) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const auto data = oracle::synthetic_dataset(oracle::random_params(rng));
    EXPECT_GE(explaining_away(data), -1e-12);
    EXPECT_LE(markov_violation(data), 1e-12);
  }
}

TEST(Bacs, HandFixtures) {
  EXPECT_DOUBLE_EQ(bacs(CbnParams{0.0, 1.0, 1.0, 0.5, 0.5}), 1.0);
  EXPECT_NEAR(bacs(CbnParams{0.2, 0.8, 1.0, 0.5, 0.5}), 0.7, 1e-15);
  EXPECT_DOUBLE_EQ(bacs(CbnParams{1.0, 0.0, 0.0, 0.5, 0.5}), -1.0);
  FitResult f;
  f.params = CbnParams{0.1, 0.9, 0.7, 0.5, 0.5};
  EXPECT_NEAR(bacs(f), 0.7, 1e-15);
}

TEST(BiasReport, RawAndModelSources) {
  const CbnParams p{0.1, 0.8, 0.6, 0.4, 0.4};
  const auto data = oracle::synthetic_dataset(p);
  FitResult f;
  f.params = p;
  const BiasReport raw = bias_report(data, &f);
  EXPECT_EQ(raw.source, BiasSource::RawJudgments);
  ASSERT_TRUE(raw.bacs.has_value());
  const BiasReport model = model_bias(p);
  EXPECT_EQ(model.source, BiasSource::FittedModel);
  EXPECT_NEAR(raw.ea, model.ea, 1e-12);
  EXPECT_EQ(model.mv, 0.0);
}

TEST(Spearman, PerfectConcordanceAndDiscordance) {
  const std::vector<double> x{0.1, 0.4, 0.35, 0.9, 0.2};
  std::vector<double> y;
  for (double v : x) y.push_back(std::exp(3 * v));
  EXPECT_DOUBLE_EQ(spearman_rho(x, y), 1.0);
  std::vector<double> rev;
  for (double v : x) rev.push_back(-v);
  EXPECT_DOUBLE_EQ(spearman_rho(x, rev), -1.0);
}

TEST(Spearman, HandDerivedFourPoint) {
  // 1 - 6 * 4 / (4 * 15)
  EXPECT_NEAR(spearman_rho(std::vector{1.0, 2.0, 3.0, 4.0}, std::vector{2.0, 1.0, 4.0, 3.0}),
              0.6, 1e-15);
}

TEST(Spearman, TiesMatchReference) {
  // scipy.stats.spearmanr
  EXPECT_NEAR(spearman_rho(std::vector<double>{1, 2, 2, 3, 5, 4}, std::vector<double>{2, 1, 3, 3, 6, 5}),
              0.8676470588235294, 1e-12);
  EXPECT_EQ(average_ranks(std::vector{3.0, 1.0, 3.0, 2.0}), (std::vector{3.5, 1.0, 3.5, 2.0}));
}

TEST(Spearman, UndefinedCases) {
  EXPECT_THROW(spearman_rho(std::vector{1.0, 2.0}, std::vector{1.0, 2.0}), UndefinedCorrelation);
  EXPECT_THROW(spearman_rho(std::vector{1.0, 1.0, 1.0}, std::vector{1.0, 2.0, 3.0}),
               UndefinedCorrelation);
}

TEST(Spearman, InvariantUnderMonotoneTransforms) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(12), y(12);
    for (auto &v : x) v = std::round(u(rng) * 20) / 20;
    for (auto &v : y) v = std::round(u(rng) * 20) / 20;
    double rho;
    try {
      rho = spearman_rho(x, y);
    } catch (const UndefinedCorrelation &) {
      continue;
    }
    std::vector<double> tx, ty;
    for (double v : x) tx.push_back(std::log1p(v) * 7 + 3);
    for (double v : y) ty.push_back(v * v * v);
    EXPECT_NEAR(spearman_rho(tx, ty), rho, 1e-12);
  }
}

TEST(Bootstrap, DeterministicParallelMatchesSerialAndCoversRho) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> x(33), y(33);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = n(rng);
    y[i] = 0.6 * x[i] + n(rng);
  }
  const auto s = bootstrap_spearman(x, y, 2000, 42, Execution::Serial);
  const auto p = bootstrap_spearman(x, y, 2000, 42, Execution::Parallel);
  EXPECT_EQ(s.ci_low, p.ci_low);
  EXPECT_EQ(s.ci_high, p.ci_high);
  EXPECT_EQ(s.n_boot, 2000);
  EXPECT_EQ(s.n_valid_boot, 2000);
  EXPECT_LE(s.ci_low, s.rho);
  EXPECT_LE(s.rho, s.ci_high);
  EXPECT_LT(s.ci_high - s.ci_low, 1.0);
  const auto other = bootstrap_spearman(x, y, 2000, 43);
  EXPECT_NE(other.ci_low, s.ci_low);
}

TEST(Alignment, PairsMatchingCells) {
  std::vector<JudgmentRecord> human, llm;
  const double hv[] = {20, 40, 60, 80};
  const double lv[] = {35, 30, 90, 85};
  int i = 0;
  for (TaskId t : {TaskId::I, TaskId::II, TaskId::III, TaskId::IV}) {
    human.push_back(rec(t, hv[i] - 5));
    human.push_back(rec(t, hv[i] + 5));
    llm.push_back(rec(t, lv[i]));
    ++i;
  }
  llm.push_back(rec(TaskId::X, 10));  // no human counterpart
  const auto cells = pair_cells(human, llm);
  ASSERT_EQ(cells.a.size(), 4u);
  EXPECT_DOUBLE_EQ(cells.a[0], 0.2);
  const AlignmentReport r = spearman_alignment(human, llm, 500, 1);
  EXPECT_EQ(r.n_pairs, 4);
  EXPECT_NEAR(r.rho, 0.6, 1e-15);
}

TEST(KruskalWallis, HandDerivedNoTies) {
  const std::vector<std::vector<double>> g{{1, 2}, {3, 4}, {5, 6}};
  const auto r = kruskal_wallis(g);
  EXPECT_NEAR(r.h, 32.0 / 7.0, 1e-12);
  EXPECT_EQ(r.df, 2);
  EXPECT_NEAR(r.p, std::exp(-16.0 / 7.0), 1e-12);
}

TEST(KruskalWallis, ReferenceCrossChecks) {
  // scipy.stats.kruskal
  const std::vector<std::vector<double>> same{{1, 2, 3}, {1, 2, 3}, {1, 2, 3}};
  EXPECT_NEAR(kruskal_wallis(same).h, 0.0, 1e-12);
  EXPECT_NEAR(kruskal_wallis(same).p, 1.0, 1e-12);

  std::vector<double> a, b, c;
  for (int i = 1; i <= 10; ++i) {
    a.push_back(i);
    b.push_back(i + 0.5);
    c.push_back(i + 100);
  }
  const std::vector<std::vector<double>> shifted{a, b, c};
  const auto r = kruskal_wallis(shifted);
  EXPECT_NEAR(r.h, 19.41935483870968, 1e-10);
  EXPECT_NEAR(r.p, 6.069328941198605e-05, 1e-12);
  EXPECT_LT(r.p, 0.01);

  const std::vector<std::vector<double>> tied{{1, 1, 2, 3}, {2, 2, 5}, {5, 7, 7, 7, 9}};
  EXPECT_NEAR(kruskal_wallis(tied).h, 8.400120772946861, 1e-10);
  EXPECT_NEAR(kruskal_wallis(tied).p, 0.014994671317816793, 1e-12);
}

TEST(KruskalWallis, AllIdenticalConvention) {
  const std::vector<std::vector<double>> g{{0.5, 0.5}, {0.5}, {0.5, 0.5, 0.5}};
  const auto r = kruskal_wallis(g);
  EXPECT_EQ(r.h, 0.0);
  EXPECT_EQ(r.p, 1.0);
  const std::vector<std::vector<double>> empty{{1.0}, {}};
  EXPECT_THROW(kruskal_wallis(empty), std::invalid_argument);
}

TEST(BhFdr, HandDerivedStepUp) {
  const auto adj = bh_fdr(std::vector{0.01, 0.04, 0.03, 0.20});
  ASSERT_EQ(adj.size(), 4u);
  EXPECT_NEAR(adj[0], 0.04, 1e-12);
  EXPECT_NEAR(adj[1], 0.04 * 4 / 3, 1e-12);
  EXPECT_NEAR(adj[2], 0.04 * 4 / 3, 1e-12);
  EXPECT_NEAR(adj[3], 0.20, 1e-12);
}

TEST(BhFdr, TrivialCases) {
  EXPECT_EQ(bh_fdr(std::vector{0.3}), std::vector{0.3});
  for (double v : bh_fdr(std::vector{0.2, 0.2, 0.2})) EXPECT_NEAR(v, 0.2, 1e-15);
  EXPECT_TRUE(bh_fdr(std::vector<double>{}).empty());
  EXPECT_THROW(bh_fdr(std::vector{1.2}), std::invalid_argument);
}

TEST(BhFdr, MonotoneAndNeverDecreasing) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> p(1 + trial % 17);
    for (auto &v : p) v = u(rng) * u(rng);
    const auto adj = bh_fdr(p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_GE(adj[i], p[i]);
      EXPECT_LE(adj[i], 1.0);
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (p[i] < p[j]) EXPECT_LE(adj[i], adj[j]);
      }
    }
  }
}

TEST(Dispersion, ZeroForIdenticalAndDistanceForPair) {
  std::vector<std::array<double, 5>> same(8, {0.3, 0.2, 0.9, 0.1, 0.4});
  EXPECT_EQ(robustness_dispersion(same), 0.0);
  const std::vector<std::array<double, 5>> pair{{0, 0, 0, 0, 0}, {0.3, 0.4, 0, 0, 0}};
  EXPECT_NEAR(robustness_dispersion(pair), 0.5, 1e-15);
  EXPECT_THROW(robustness_dispersion(std::span(pair).first(1)), InsufficientPoints);
}

TEST(Dispersion, OutlierIncreasesSpread) {
  std::vector<SignaturePoint> pts;
  for (int i = 0; i < 7; ++i) pts.push_back({0.8 + 0.01 * i, 0.9, 0.3, 0.02, 0.05});
  pts.push_back({0.1, -3.0, -0.2, 0.4, 0.3});
  const SignatureScaler scaler(pts);
  std::vector<std::array<double, 5>> scaled;
  for (const auto &p : pts) scaled.push_back(scaler.scale(p));
  const double with_outlier = robustness_dispersion(scaled);

  std::array<double, 5> centroid{};
  for (const auto &s : scaled) {
    for (int k = 0; k < 5; ++k) centroid[k] += s[k] / scaled.size();
  }
  auto replaced = scaled;
  replaced.back() = centroid;
  EXPECT_GT(with_outlier, robustness_dispersion(replaced));
  // LOOCV R^2 is clamped at -1 before scaling.
  EXPECT_EQ(pts.back().axes()[1], -1.0);
}

TEST(Dispersion, PermutationAndTranslationInvariant) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::array<double, 5>> pts(8);
    for (auto &p : pts) {
      for (auto &v : p) v = u(rng);
    }
    const double d = robustness_dispersion(pts);
    auto shuffled = pts;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    EXPECT_NEAR(robustness_dispersion(shuffled), d, 1e-12);
    auto moved = pts;
    for (auto &p : moved) {
      for (int k = 0; k < 5; ++k) p[k] += 0.25 * k - 0.5;
    }
    EXPECT_NEAR(robustness_dispersion(moved), d, 1e-12);
  }
}

TEST(Scaler, ConstantAxisMapsToZero) {
  const std::vector<SignaturePoint> pts{{0.5, 0.5, 0.1, 0.0, 0.1}, {0.7, 0.5, 0.3, 0.0, 0.2}};
  const SignatureScaler s(pts);
  const auto a = s.scale(pts[1]);
  EXPECT_DOUBLE_EQ(a[0], 1.0);
  EXPECT_DOUBLE_EQ(a[1], 0.0);
  EXPECT_DOUBLE_EQ(a[3], 0.0);
}
