#include "colliderlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include <boost/math/special_functions/gamma.hpp>

#include "colliderlab/rng.hpp"

namespace colliderlab {

namespace {

double require_mean(std::span<const JudgmentRecord> records, TaskId a, TaskId b,
                    double &mean_b) {
  const auto ma = task_mean(records, a);
  const auto mb = task_mean(records, b);
  std::vector<TaskId> missing;
  if (!ma) missing.push_back(a);
  if (!mb) missing.push_back(b);
  if (!missing.empty()) {
    std::string what = "missing judgments for task";
    for (TaskId t : missing) what += " " + std::string(to_roman(t));
    throw MissingData(what, missing);
  }
  mean_b = *mb;
  return *ma;
}

/// Linear-interpolated sample quantile of sorted data.
double quantile(const std::vector<double> &sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) {
    throw UndefinedCorrelation("zero rank variance");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// rho of one bootstrap resample, or NaN when undefined.
double resample_rho(std::span<const double> x, std::span<const double> y,
                    std::uint64_t seed, int b) {
  std::mt19937_64 rng(stream_seed(seed, static_cast<std::uint64_t>(b)));
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
  std::vector<double> xs(x.size()), ys(y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t k = pick(rng);
    xs[i] = x[k];
    ys[i] = y[k];
  }
  try {
    return spearman_rho(xs, ys);
  } catch (const UndefinedCorrelation &) {
    return std::nan("");
  }
}

}  // namespace

std::optional<double> task_mean(std::span<const JudgmentRecord> records, TaskId task) {
  std::map<std::string, std::pair<double, int>> per_domain;
  for (const auto &r : records) {
    if (r.task != task) continue;
    auto &[sum, n] = per_domain[r.domain];
    sum += r.normalized;
    ++n;
  }
  if (per_domain.empty()) return std::nullopt;
  double total = 0.0;
  for (const auto &[domain, acc] : per_domain) total += acc.first / acc.second;
  return total / static_cast<double>(per_domain.size());
}

double explaining_away(std::span<const JudgmentRecord> records) {
  double present = 0.0;
  const double absent = require_mean(records, kEaAlternativeAbsent, kEaAlternativePresent, present);
  return absent - present;
}

double markov_violation(std::span<const JudgmentRecord> records) {
  double absent = 0.0;
  const double present = require_mean(records, kMvAlternativePresent, kMvAlternativeAbsent, absent);
  return std::abs(present - absent);
}

double bacs(const CbnParams &params) { return 0.5 * (params.m1 + params.m2) - params.b; }

double bacs(const FitResult &fit) { return bacs(fit.params); }

BiasReport bias_report(std::span<const JudgmentRecord> records, const FitResult *fit) {
  BiasReport r;
  r.ea = explaining_away(records);
  r.mv = markov_violation(records);
  if (fit) r.bacs = bacs(*fit);
  r.source = BiasSource::RawJudgments;
  return r;
}

BiasReport model_bias(const CbnParams &params) {
  BiasReport r;
  r.ea = eval_query(params, task_query(kEaAlternativeAbsent)) -
         eval_query(params, task_query(kEaAlternativePresent));
  r.mv = std::abs(eval_query(params, task_query(kMvAlternativePresent)) -
                  eval_query(params, task_query(kMvAlternativeAbsent)));
  r.bacs = bacs(params);
  r.source = BiasSource::FittedModel;
  return r;
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman_rho(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman_rho: length mismatch");
  if (x.size() < 3) throw UndefinedCorrelation("spearman_rho needs at least 3 pairs");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

AlignmentReport bootstrap_spearman(std::span<const double> x, std::span<const double> y,
                                   int n_boot, std::uint64_t seed, Execution exec) {
  if (n_boot < 1) throw std::invalid_argument("n_boot must be >= 1");
  AlignmentReport r;
  r.rho = spearman_rho(x, y);
  r.n_boot = n_boot;
  r.n_pairs = static_cast<int>(x.size());

  std::vector<double> rhos(static_cast<std::size_t>(n_boot));
  if (exec == Execution::Serial) {
    for (int b = 0; b < n_boot; ++b) rhos[b] = resample_rho(x, y, seed, b);
  } else {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < n_boot; ++b) rhos[b] = resample_rho(x, y, seed, b);
  }
  std::erase_if(rhos, [](double v) { return std::isnan(v); });
  r.n_valid_boot = static_cast<int>(rhos.size());
  if (rhos.empty()) {
    r.ci_low = r.ci_high = r.rho;
    return r;
  }
  std::sort(rhos.begin(), rhos.end());
  // Percentile bounds can exclude the point estimate on skewed resampling
  // distributions; the reported interval always covers rho.
  r.ci_low = std::min(quantile(rhos, 0.025), r.rho);
  r.ci_high = std::max(quantile(rhos, 0.975), r.rho);
  return r;
}

PairedCells pair_cells(std::span<const JudgmentRecord> a, std::span<const JudgmentRecord> b) {
  using Key = std::pair<int, std::string>;
  auto means = [](std::span<const JudgmentRecord> rs) {
    std::map<Key, std::pair<double, int>> m;
    for (const auto &r : rs) {
      auto &[sum, n] = m[{task_index(r.task), r.domain}];
      sum += r.normalized;
      ++n;
    }
    return m;
  };
  const auto ma = means(a);
  const auto mb = means(b);
  PairedCells out;
  for (const auto &[key, acc] : ma) {
    const auto it = mb.find(key);
    if (it == mb.end()) continue;
    out.a.push_back(acc.first / acc.second);
    out.b.push_back(it->second.first / it->second.second);
    out.cells.emplace_back(task_from_index(key.first), key.second);
  }
  return out;
}

AlignmentReport spearman_alignment(std::span<const JudgmentRecord> a,
                                   std::span<const JudgmentRecord> b, int n_boot,
                                   std::uint64_t seed, Execution exec) {
  const PairedCells cells = pair_cells(a, b);
  return bootstrap_spearman(cells.a, cells.b, n_boot, seed, exec);
}

KruskalWallisResult kruskal_wallis(std::span<const std::vector<double>> groups) {
  std::vector<double> pooled;
  for (const auto &g : groups) {
    if (g.empty()) throw std::invalid_argument("kruskal_wallis: empty group");
    pooled.insert(pooled.end(), g.begin(), g.end());
  }
  if (groups.size() < 2) throw std::invalid_argument("kruskal_wallis needs >= 2 groups");

  KruskalWallisResult r;
  r.df = static_cast<int>(groups.size()) - 1;
  const auto ranks = average_ranks(pooled);
  const double n = static_cast<double>(pooled.size());

  double h = 0.0;
  std::size_t offset = 0;
  for (const auto &g : groups) {
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) rank_sum += ranks[offset + i];
    offset += g.size();
    h += rank_sum * rank_sum / static_cast<double>(g.size());
  }
  h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);

  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double ties = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    ties += t * t * t - t;
    i = j;
  }
  const double correction = 1.0 - ties / (n * n * n - n);
  if (!(correction > 0.0)) {
    r.h = 0.0;
    r.p = 1.0;
    return r;
  }
  r.h = std::max(0.0, h / correction);
  r.p = boost::math::gamma_q(0.5 * r.df, 0.5 * r.h);
  return r;
}

std::vector<double> bh_fdr(std::span<const double> pvals) {
  const std::size_t m = pvals.size();
  for (double p : pvals) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("bh_fdr: p outside [0,1]");
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pvals[a] < pvals[b]; });
  std::vector<double> adjusted(m);
  double running = 1.0;
  for (std::size_t k = m; k-- > 0;) {
    const double rank = static_cast<double>(k + 1);
    running = std::min(running, pvals[order[k]] * static_cast<double>(m) / rank);
    adjusted[order[k]] = std::max(running, pvals[order[k]]);
  }
  return adjusted;
}

std::array<double, 5> SignaturePoint::axes() const {
  return {bacs, std::clamp(loocv_r2, -1.0, 1.0), ea, mv, mae};
}

SignatureScaler::SignatureScaler(std::span<const SignaturePoint> population) {
  lo_.fill(0.0);
  hi_.fill(0.0);
  bool first = true;
  for (const auto &p : population) {
    const auto a = p.axes();
    for (std::size_t k = 0; k < a.size(); ++k) {
      lo_[k] = first ? a[k] : std::min(lo_[k], a[k]);
      hi_[k] = first ? a[k] : std::max(hi_[k], a[k]);
    }
    first = false;
  }
}

std::array<double, 5> SignatureScaler::scale(const SignaturePoint &p) const {
  auto a = p.axes();
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double range = hi_[k] - lo_[k];
    a[k] = range > 0.0 ? (a[k] - lo_[k]) / range : 0.0;
  }
  return a;
}

double robustness_dispersion(std::span<const std::array<double, 5>> points) {
  if (points.size() < 2) {
    throw InsufficientPoints("robustness dispersion needs at least two condition points");
  }
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < 5; ++k) {
        const double d = points[i][k] - points[j][k];
        d2 += d * d;
      }
      total += std::sqrt(d2);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

}  // namespace colliderlab
