// Serial reference vs OpenMP kernel for each parallel entry point. Both paths
// produce identical results (tested elsewhere); only wall time differs.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "colliderlab/agents.hpp"
#include "colliderlab/fitting.hpp"
#include "colliderlab/metrics.hpp"
#include "colliderlab/rng.hpp"

using namespace colliderlab;

namespace {

std::vector<JudgmentRecord> noisy_cell(std::uint64_t seed, int repeats) {
  CbnParams truth;
  truth.b = 0.15;
  truth.m1 = truth.m2 = 0.7;
  truth.p1 = truth.p2 = 0.5;
  SyntheticAgentSpec spec;
  spec.params = truth;
  spec.noise_sd = 0.05;
  spec.seed = seed;
  std::vector<JudgmentRecord> out;
  for (int r = 0; r < repeats; ++r) {
    for (std::string_view d : kStoryDomains) {
      for (const auto &q : rw17_task_set()) {
        const double v = synthetic_judge(spec, q, stream_seed(fnv1a(d), r));
        out.push_back(JudgmentRecord::make("bench", Condition{}, std::string(d), q.id, v));
      }
    }
  }
  return out;
}

Execution exec_of(const benchmark::State &state) {
  return state.range(0) == 0 ? Execution::Serial : Execution::Parallel;
}

void BM_FitMany(benchmark::State &state) {
  std::vector<std::vector<JudgmentRecord>> cells;
  for (int i = 0; i < 16; ++i) cells.push_back(noisy_cell(i, 1));
  const FitConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(fit_many(cells, cfg, exec_of(state)));
}

void BM_Loocv(benchmark::State &state) {
  const auto data = noisy_cell(1, 1);
  const FitConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(loocv_r2(data, cfg, exec_of(state)));
}

void BM_GridOracle(benchmark::State &state) {
  const auto data = noisy_cell(2, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(grid_oracle_fit(data, 0.05, false, true, exec_of(state)));
  }
}

void BM_BootstrapSpearman(benchmark::State &state) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(33), y(33);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = u(rng);
    y[i] = x[i] + 0.3 * u(rng);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(bootstrap_spearman(x, y, 2000, 7, exec_of(state)));
  }
}

// Loss evaluation over 50 human-style repeats, raw vs per-cell means.
void BM_SseLoss(benchmark::State &state) {
  const auto raw = noisy_cell(4, 50);
  const auto data = state.range(0) == 0 ? raw : aggregate_cells(raw);
  CbnParams p;
  p.b = 0.2;
  for (auto _ : state) benchmark::DoNotOptimize(sse_loss(p, data));
  state.SetLabel(state.range(0) == 0 ? "raw" : "aggregated");
}

}  // namespace

BENCHMARK(BM_FitMany)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Loocv)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GridOracle)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BootstrapSpearman)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SseLoss)->ArgName("aggregated")->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
