#include "colliderlab/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <utility>

#include "colliderlab/simplex.hpp"

namespace colliderlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kStartMargin = 0.01;

double radical_inverse(std::uint64_t index, unsigned base) {
  double inv = 1.0 / base;
  double f = inv;
  double r = 0.0;
  while (index > 0) {
    r += f * static_cast<double>(index % base);
    index /= base;
    f *= inv;
  }
  return r;
}

CbnParams corner(double b, double m, double prior, const FitConfig &c) {
  CbnParams p{b, m, m, prior, prior, c.tie_strengths, c.tie_priors};
  return p;
}

CbnParams contract(CbnParams p) {
  auto in = [](double v) { return kStartMargin + (1.0 - 2.0 * kStartMargin) * v; };
  p.b = in(p.b);
  p.m1 = in(p.m1);
  p.m2 = in(p.m2);
  p.p1 = in(p.p1);
  p.p2 = in(p.p2);
  return p;
}

/// Moves a parameter point towards the centre of the box by `eps`.
CbnParams interior(CbnParams p, double eps) {
  auto in = [eps](double v) { return std::clamp(v, eps, 1.0 - eps); };
  p.b = in(p.b);
  p.m1 = in(p.m1);
  p.m2 = in(p.m2);
  p.p1 = in(p.p1);
  p.p2 = in(p.p2);
  return p;
}

struct GridBest {
  double loss = kInf;
  std::uint64_t index = std::numeric_limits<std::uint64_t>::max();

  void offer(double l, std::uint64_t i) {
    if (l < loss || (l == loss && i < index)) {
      loss = l;
      index = i;
    }
  }
};

std::vector<double> decode_lattice(std::uint64_t index, const std::vector<double> &axis,
                                   int dim) {
  std::vector<double> x(dim);
  const auto n = static_cast<std::uint64_t>(axis.size());
  for (int k = dim - 1; k >= 0; --k) {
    x[k] = axis[index % n];
    index /= n;
  }
  return x;
}

FitResult finish(const CbnParams &params, double sse, std::span<const JudgmentRecord> data) {
  FitResult r;
  r.params = params;
  r.sse = sse;
  r.mae = mean_absolute_error(params, data);
  return r;
}

}  // namespace

void FitConfig::validate() const {
  if (n_starts < 1) throw std::invalid_argument("n_starts must be >= 1");
  if (!(convergence_tol > 0.0)) throw std::invalid_argument("convergence_tol must be > 0");
  if (max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
}

TaskSummary::TaskSummary(std::span<const JudgmentRecord> data) : n_(data.size()) {
  std::array<double, kTaskCount> sum{};
  for (const auto &r : data) {
    ++count_[task_index(r.task)];
    sum[task_index(r.task)] += r.normalized;
  }
  for (int t = 0; t < kTaskCount; ++t) {
    if (count_[t] > 0) mean_[t] = sum[t] / count_[t];
  }
  for (const auto &r : data) {
    const double d = r.normalized - mean_[task_index(r.task)];
    css_[task_index(r.task)] += d * d;
  }
}

double TaskSummary::sse(const CbnParams &params) const {
  const auto pred = eval_task_set(params);
  double total = 0.0;
  for (int t = 0; t < kTaskCount; ++t) {
    if (count_[t] == 0) continue;
    if (!pred[t]) return kInf;
    const double d = *pred[t] - mean_[t];
    total += count_[t] * d * d + css_[t];
  }
  return total;
}

int TaskSummary::distinct_tasks() const {
  return static_cast<int>(std::count_if(count_.begin(), count_.end(),
                                        [](int c) { return c > 0; }));
}

double sse_loss(const CbnParams &params, std::span<const JudgmentRecord> data) {
  if (data.empty()) throw std::invalid_argument("sse_loss on empty data");
  double total = 0.0;
  for (const auto &r : data) {
    const auto pred = try_eval_query(params, task_query(r.task));
    if (!pred) return kInf;
    const double d = *pred - r.normalized;
    total += d * d;
  }
  return total;
}

double mean_absolute_error(const CbnParams &params, std::span<const JudgmentRecord> data) {
  if (data.empty()) return 0.0;
  const auto pred = eval_task_set(params);
  double total = 0.0;
  for (const auto &r : data) {
    const auto &p = pred[task_index(r.task)];
    if (!p) return kInf;
    total += std::abs(*p - r.normalized);
  }
  return total / static_cast<double>(data.size());
}

int free_dimension(bool tie_strengths, bool tie_priors) {
  return 1 + (tie_strengths ? 1 : 2) + (tie_priors ? 1 : 2);
}

CbnParams params_from_vector(std::span<const double> x, bool tie_strengths, bool tie_priors) {
  if (static_cast<int>(x.size()) != free_dimension(tie_strengths, tie_priors)) {
    throw std::invalid_argument("parameter vector has wrong dimension");
  }
  CbnParams p;
  p.tie_strengths = tie_strengths;
  p.tie_priors = tie_priors;
  std::size_t i = 0;
  p.b = x[i++];
  p.m1 = x[i++];
  p.m2 = tie_strengths ? p.m1 : x[i++];
  p.p1 = x[i++];
  p.p2 = tie_priors ? p.p1 : x[i++];
  return p;
}

std::vector<double> vector_from_params(const CbnParams &p) {
  std::vector<double> x{p.b, p.m1};
  if (!p.tie_strengths) x.push_back(p.m2);
  x.push_back(p.p1);
  if (!p.tie_priors) x.push_back(p.p2);
  return x;
}

std::vector<CbnParams> start_points(const FitConfig &config) {
  config.validate();
  std::vector<CbnParams> starts;
  starts.push_back(contract(corner(0.0, 1.0, 0.5, config)));
  if (config.n_starts >= 2) starts.push_back(contract(corner(0.5, 0.5, 0.5, config)));

  const int dim = free_dimension(config.tie_strengths, config.tie_priors);
  constexpr std::array<unsigned, 5> kBases = {2, 3, 5, 7, 11};
  std::mt19937_64 rng(config.start_seed);
  std::array<double, 5> shift{};
  for (double &s : shift) s = static_cast<double>(rng() >> 11) * 0x1.0p-53;

  for (int i = 1; static_cast<int>(starts.size()) < config.n_starts; ++i) {
    std::vector<double> x(dim);
    for (int k = 0; k < dim; ++k) {
      const double u = radical_inverse(static_cast<std::uint64_t>(i), kBases[k]) + shift[k];
      x[k] = u - std::floor(u);
    }
    starts.push_back(contract(params_from_vector(x, config.tie_strengths, config.tie_priors)));
  }
  return starts;
}

std::vector<JudgmentRecord> aggregate_cells(std::span<const JudgmentRecord> data) {
  std::map<std::pair<int, std::string>, std::pair<double, int>> cells;
  for (const auto &r : data) {
    auto &[sum, n] = cells[{task_index(r.task), r.domain}];
    sum += r.raw_value;
    ++n;
  }
  std::vector<JudgmentRecord> out;
  out.reserve(cells.size());
  const JudgmentRecord *proto = data.empty() ? nullptr : &data.front();
  for (const auto &[key, acc] : cells) {
    out.push_back(JudgmentRecord::make(proto ? proto->agent_id : "", proto ? proto->condition
                                                                           : Condition{},
                                       key.second, task_from_index(key.first),
                                       acc.first / acc.second));
  }
  return out;
}

FitResult fit(std::span<const JudgmentRecord> data, const FitConfig &config) {
  config.validate();
  if (data.empty()) throw InsufficientData("fit requires at least one judgment");

  std::vector<JudgmentRecord> aggregated;
  std::span<const JudgmentRecord> working = data;
  if (config.aggregate_cells) {
    aggregated = aggregate_cells(data);
    working = aggregated;
  }
  const TaskSummary summary(working);

  const bool ts = config.tie_strengths;
  const bool tp = config.tie_priors;
  const Objective objective = [&](std::span<const double> x) {
    return summary.sse(params_from_vector(x, ts, tp));
  };
  SimplexOptions options;
  options.ftol = config.convergence_tol;
  options.max_iterations = config.max_iterations;

  FitResult best;
  best.sse = kInf;
  bool best_converged = false;
  int total_iterations = 0;
  const auto starts = start_points(config);
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const double start_loss = summary.sse(starts[i]);
    best.start_losses.push_back(start_loss);
    if (!std::isfinite(start_loss)) continue;
    const SimplexResult run = minimize_simplex(objective, vector_from_params(starts[i]), options);
    total_iterations += run.iterations;
    if (run.value < best.sse) {
      best.sse = run.value;
      best.params = params_from_vector(run.x, ts, tp);
      best.best_start_index = static_cast<int>(i);
      best_converged = run.converged;
    }
  }

  best.n_starts_used = static_cast<int>(starts.size());
  best.iterations = total_iterations;
  best.converged = best_converged;
  if (summary.distinct_tasks() < 5) {
    best.warnings.push_back("only " + std::to_string(summary.distinct_tasks()) +
                            " distinct tasks; parameters may be unidentifiable");
  }
  if (best.best_start_index < 0) {
    throw NonConvergence("every start is undefined under the data", best);
  }
  best.mae = mean_absolute_error(best.params, data);
  if (!best.converged) {
    throw NonConvergence("best start did not converge within " +
                             std::to_string(config.max_iterations) + " iterations",
                         best);
  }
  return best;
}

std::vector<CellFit> fit_many(std::span<const std::vector<JudgmentRecord>> datasets,
                              const FitConfig &config, Execution exec) {
  std::vector<CellFit> out(datasets.size());
  auto one = [&](std::size_t i) {
    try {
      out[i].result = fit(datasets[i], config);
      out[i].ok = true;
    } catch (const NonConvergence &e) {
      out[i].result = e.best();
      out[i].error = e.what();
    } catch (const std::exception &e) {
      out[i].error = e.what();
    }
  };
  const auto n = static_cast<std::ptrdiff_t>(datasets.size());
  if (exec == Execution::Serial) {
    for (std::ptrdiff_t i = 0; i < n; ++i) one(static_cast<std::size_t>(i));
  } else {
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i) one(static_cast<std::size_t>(i));
  }
  return out;
}

std::vector<double> lattice_axis(double grid_step) {
  if (!(grid_step > 0.0 && grid_step <= 0.5)) {
    throw std::invalid_argument("grid_step must lie in (0, 0.5]");
  }
  std::vector<double> axis;
  for (int k = 0;; ++k) {
    double v = k * grid_step;
    if (v > 1.0 + 1e-9) break;
    if (std::abs(v - 1.0) < 1e-9) v = 1.0;
    axis.push_back(v);
  }
  if (axis.back() < 1.0) axis.push_back(1.0);
  return axis;
}

FitResult grid_oracle_fit(std::span<const JudgmentRecord> data, double grid_step,
                          bool tie_strengths, bool tie_priors, Execution exec) {
  if (data.empty()) throw InsufficientData("grid oracle requires at least one judgment");
  const auto axis = lattice_axis(grid_step);
  const int dim = free_dimension(tie_strengths, tie_priors);
  std::uint64_t total = 1;
  for (int k = 0; k < dim; ++k) total *= axis.size();
  const TaskSummary summary(data);

  auto loss_at = [&](std::uint64_t i) {
    return summary.sse(params_from_vector(decode_lattice(i, axis, dim), tie_strengths,
                                          tie_priors));
  };

  GridBest best;
  if (exec == Execution::Serial) {
    for (std::uint64_t i = 0; i < total; ++i) best.offer(loss_at(i), i);
  } else {
#pragma omp parallel
    {
      GridBest local;
#pragma omp for schedule(static) nowait
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(total); ++i) {
        local.offer(loss_at(static_cast<std::uint64_t>(i)), static_cast<std::uint64_t>(i));
      }
#pragma omp critical(colliderlab_grid)
      best.offer(local.loss, local.index);
    }
  }

  if (best.index == std::numeric_limits<std::uint64_t>::max()) best.index = 0;
  const CbnParams params =
      params_from_vector(decode_lattice(best.index, axis, dim), tie_strengths, tie_priors);
  FitResult r = finish(params, best.loss, data);
  r.converged = std::isfinite(best.loss);
  r.n_starts_used = static_cast<int>(total);
  r.best_start_index = static_cast<int>(best.index);
  return r;
}

double r_squared(std::span<const HeldOutPrediction> predictions) {
  if (predictions.empty()) throw UndefinedR2("no held-out predictions");
  double mean = 0.0;
  for (const auto &p : predictions) mean += p.judgment;
  mean /= static_cast<double>(predictions.size());
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (const auto &p : predictions) {
    ss_res += (p.judgment - p.prediction) * (p.judgment - p.prediction);
    ss_tot += (p.judgment - mean) * (p.judgment - mean);
  }
  if (!(ss_tot > 0.0)) throw UndefinedR2("held-out judgments have zero variance");
  return 1.0 - ss_res / ss_tot;
}

LoocvResult loocv_r2(std::span<const JudgmentRecord> data, const FitConfig &config,
                     Execution exec) {
  std::vector<JudgmentRecord> aggregated;
  std::span<const JudgmentRecord> working = data;
  if (config.aggregate_cells) {
    aggregated = aggregate_cells(data);
    working = aggregated;
  }
  FitConfig fold_config = config;
  fold_config.aggregate_cells = false;

  const TaskSummary summary(working);
  if (summary.distinct_tasks() != kTaskCount) {
    throw InsufficientData("LOOCV requires judgments for all 11 tasks, got " +
                           std::to_string(summary.distinct_tasks()));
  }

  LoocvResult result;
  std::array<std::string, kTaskCount> errors;
  auto fold = [&](int t) {
    std::vector<JudgmentRecord> train;
    for (const auto &r : working) {
      if (task_index(r.task) != t) train.push_back(r);
    }
    try {
      result.fold_params[t] = fit(train, fold_config).params;
    } catch (const NonConvergence &e) {
      // The best-so-far point still yields a prediction for the held-out task.
      result.fold_params[t] = e.best().params;
      if (e.best().best_start_index < 0) errors[t] = e.what();
    } catch (const std::exception &e) {
      errors[t] = e.what();
    }
  };
  if (exec == Execution::Serial) {
    for (int t = 0; t < kTaskCount; ++t) fold(t);
  } else {
#pragma omp parallel for schedule(dynamic)
    for (int t = 0; t < kTaskCount; ++t) fold(t);
  }
  for (int t = 0; t < kTaskCount; ++t) {
    if (!errors[t].empty()) {
      throw InsufficientData("fold " + std::string(to_roman(task_from_index(t))) +
                             " failed: " + errors[t]);
    }
  }

  std::array<double, kTaskCount> held_out{};
  for (int t = 0; t < kTaskCount; ++t) {
    const TaskQuery &q = rw17_task_set()[t];
    auto p = try_eval_query(result.fold_params[t], q);
    // A fold fitted without this task may sit exactly where its conditioning
    // event has probability zero; take the limit from the interior.
    if (!p) p = try_eval_query(interior(result.fold_params[t], 1e-9), q);
    if (!p) throw InsufficientData("held-out task is undefined under its fold's fit");
    held_out[t] = *p;
  }
  result.predictions.reserve(working.size());
  for (const auto &r : working) {
    result.predictions.push_back({r.task, r.domain, held_out[task_index(r.task)], r.normalized});
  }
  result.r2 = r_squared(result.predictions);
  return result;
}

}  // namespace colliderlab
