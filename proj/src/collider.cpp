#include "colliderlab/collider.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace colliderlab {

namespace {

constexpr std::array<std::string_view, kTaskCount> kRoman = {
    "I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX", "X", "XI"};

constexpr Observation kOff = Observation::Off;
constexpr Observation kOn = Observation::On;
constexpr Observation kUnobs = Observation::Unobserved;

TaskQuery predictive(TaskId id, bool c1, bool c2) {
  return {id, Variable::E, true, {observe(c1), observe(c2), kUnobs}};
}

TaskQuery independence(TaskId id, bool c2) {
  return {id, Variable::C1, true, {kUnobs, observe(c2), kUnobs}};
}

TaskQuery diagnostic(TaskId id, bool e, Observation c2) {
  return {id, Variable::C1, true, {kUnobs, c2, observe(e)}};
}

const std::array<TaskQuery, kTaskCount> kTasks = {
    predictive(TaskId::I, true, true),
    predictive(TaskId::II, false, true),
    predictive(TaskId::III, false, false),
    independence(TaskId::IV, true),
    independence(TaskId::V, false),
    diagnostic(TaskId::VI, false, kOn),
    diagnostic(TaskId::VII, false, kUnobs),
    diagnostic(TaskId::VIII, false, kOff),
    diagnostic(TaskId::IX, true, kOff),
    diagnostic(TaskId::X, true, kUnobs),
    diagnostic(TaskId::XI, true, kOn),
};

bool matches(Observation obs, int value) {
  return obs == kUnobs || (obs == kOn) == (value == 1);
}

void check_unit(double v, const char *name) {
  if (!(v >= 0.0 && v <= 1.0)) {
    std::ostringstream os;
    os << "parameter " << name << " = " << v << " outside [0,1]";
    throw DomainError(os.str());
  }
}

int value_of(Variable v, int c1, int c2, int e) {
  switch (v) {
    case Variable::C1: return c1;
    case Variable::C2: return c2;
    case Variable::E: return e;
  }
  return 0;
}

double prior(double p, int value) { return value ? p : 1.0 - p; }

double cpt_value(const CbnParams &params, int c1, int c2, int e) {
  double off = 1.0 - params.b;
  if (c1) off *= 1.0 - params.m1;
  if (c2) off *= 1.0 - params.m2;
  return e ? 1.0 - off : off;
}

/// Numerator and denominator of a conditional by enumeration over the eight
/// joint states. Prior factors of observed causes are common to numerator and
/// denominator and cancel; an unobserved, untargeted E is barren and sums to
/// one. Both reductions are exact, which keeps P(C1 | C2) == p1 bitwise.
/// A zero denominator (or a zero-probability observed cause) yields den == 0.
std::pair<double, double> conditional_parts(const CbnParams &params, const TaskQuery &task) {
  const Evidence &g = task.given;
  for (auto [obs, p] : {std::pair{g.c1, params.p1}, std::pair{g.c2, params.p2}}) {
    if (obs != kUnobs && prior(p, obs == kOn) == 0.0) return {0.0, 0.0};
  }
  const bool e_barren = g.e == kUnobs && task.target != Variable::E;
  double num = 0.0;
  double den = 0.0;
  for (int c1 = 0; c1 < 2; ++c1) {
    if (!matches(g.c1, c1)) continue;
    const double w1 = g.c1 == kUnobs ? prior(params.p1, c1) : 1.0;
    for (int c2 = 0; c2 < 2; ++c2) {
      if (!matches(g.c2, c2)) continue;
      const double w2 = g.c2 == kUnobs ? prior(params.p2, c2) : 1.0;
      for (int e = 0; e < 2; ++e) {
        if (!matches(g.e, e)) continue;
        if (e_barren && e == 0) continue;
        const double w = w1 * w2 * (e_barren ? 1.0 : cpt_value(params, c1, c2, e));
        den += w;
        if ((value_of(task.target, c1, c2, e) == 1) == task.target_value) num += w;
      }
    }
  }
  return {num, den};
}

}  // namespace

std::string_view to_string(Variable v) {
  switch (v) {
    case Variable::C1: return "C1";
    case Variable::C2: return "C2";
    case Variable::E: return "E";
  }
  return "?";
}

std::string_view to_roman(TaskId id) { return kRoman.at(task_index(id)); }

std::optional<TaskId> parse_task_id(std::string_view roman) {
  for (int i = 0; i < kTaskCount; ++i) {
    if (kRoman[i] == roman) return task_from_index(i);
  }
  return std::nullopt;
}

Observation Evidence::of(Variable v) const {
  switch (v) {
    case Variable::C1: return c1;
    case Variable::C2: return c2;
    case Variable::E: return e;
  }
  return kUnobs;
}

int Evidence::observed_count() const {
  return (c1 != kUnobs) + (c2 != kUnobs) + (e != kUnobs);
}

TaskKind TaskQuery::kind() const {
  if (target == Variable::E) return TaskKind::Predictive;
  return given.e == kUnobs ? TaskKind::Independence : TaskKind::Diagnostic;
}

void TaskQuery::validate() const {
  if (given.of(target) != kUnobs) {
    throw std::invalid_argument("task target " + std::string(to_string(target)) +
                                " appears in its own conditioning set");
  }
}

TaskQuery mirror(const TaskQuery &task) {
  TaskQuery out = task;
  std::swap(out.given.c1, out.given.c2);
  if (task.target == Variable::C1) out.target = Variable::C2;
  else if (task.target == Variable::C2) out.target = Variable::C1;
  return out;
}

std::string describe(const TaskQuery &task) {
  std::ostringstream os;
  os << "P(" << to_string(task.target) << "=" << (task.target_value ? 1 : 0);
  const char *sep = " | ";
  for (Variable v : {Variable::C1, Variable::C2, Variable::E}) {
    const Observation o = task.given.of(v);
    if (o == kUnobs) continue;
    os << sep << to_string(v) << "=" << (o == kOn ? 1 : 0);
    sep = ", ";
  }
  os << ")";
  return os.str();
}

CbnParams CbnParams::tied(double b, double m, double prior) {
  return CbnParams{b, m, m, prior, prior, true, true};
}

void CbnParams::validate() const {
  check_unit(b, "b");
  check_unit(m1, "m1");
  check_unit(m2, "m2");
  check_unit(p1, "p1");
  check_unit(p2, "p2");
  if (tie_strengths && m1 != m2) throw DomainError("tied strengths require m1 == m2");
  if (tie_priors && p1 != p2) throw DomainError("tied priors require p1 == p2");
}

double JointDistribution::total() const {
  return std::accumulate(p_.begin(), p_.end(), 0.0);
}

double noisy_or_cpt(const CbnParams &params, bool c1, bool c2) {
  params.validate();
  double off = 1.0 - params.b;
  if (c1) off *= 1.0 - params.m1;
  if (c2) off *= 1.0 - params.m2;
  return 1.0 - off;
}

JointDistribution joint(const CbnParams &params) {
  params.validate();
  std::array<double, 8> p{};
  for (int c1 = 0; c1 < 2; ++c1) {
    const double w1 = c1 ? params.p1 : 1.0 - params.p1;
    for (int c2 = 0; c2 < 2; ++c2) {
      const double w2 = c2 ? params.p2 : 1.0 - params.p2;
      for (int e = 0; e < 2; ++e) {
        p[JointDistribution::index(c1, c2, e)] = w1 * w2 * cpt_value(params, c1, c2, e);
      }
    }
  }
  return JointDistribution(p);
}

std::optional<double> try_eval_query(const CbnParams &params, const TaskQuery &task) {
  params.validate();
  const auto [num, den] = conditional_parts(params, task);
  if (!(den > 0.0)) return std::nullopt;
  return std::min(1.0, num / den);
}

double eval_query(const CbnParams &params, const TaskQuery &task) {
  task.validate();
  if (auto v = try_eval_query(params, task)) return *v;
  throw UndefinedConditional("conditioning event of " + describe(task) +
                             " has probability zero");
}

std::array<std::optional<double>, kTaskCount> eval_task_set(const CbnParams &params) {
  params.validate();
  std::array<std::optional<double>, kTaskCount> out{};
  for (int i = 0; i < kTaskCount; ++i) {
    const auto [num, den] = conditional_parts(params, kTasks[i]);
    if (den > 0.0) out[i] = std::min(1.0, num / den);
  }
  return out;
}

const std::array<TaskQuery, kTaskCount> &rw17_task_set() { return kTasks; }

const TaskQuery &task_query(TaskId id) { return kTasks.at(task_index(id)); }

}  // namespace colliderlab
