#pragma once

// Exact inference on the three-node collider C1 -> E <- C2 with a leaky
// noisy-OR conditional probability table and independent cause priors.

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace colliderlab {

enum class Variable : std::uint8_t { C1, C2, E };

std::string_view to_string(Variable v);

/// State of a variable in a query's conditioning set.
enum class Observation : std::uint8_t { Unobserved, Off, On };

inline constexpr Observation observe(bool value) {
  return value ? Observation::On : Observation::Off;
}

/// Benchmark inference tasks I..XI.
enum class TaskId : std::uint8_t { I = 1, II, III, IV, V, VI, VII, VIII, IX, X, XI };

inline constexpr int kTaskCount = 11;

std::string_view to_roman(TaskId id);
std::optional<TaskId> parse_task_id(std::string_view roman);
inline constexpr int task_index(TaskId id) { return static_cast<int>(id) - 1; }
inline constexpr TaskId task_from_index(int index) {
  return static_cast<TaskId>(index + 1);
}

enum class TaskKind : std::uint8_t { Predictive, Independence, Diagnostic };

struct Evidence {
  Observation c1 = Observation::Unobserved;
  Observation c2 = Observation::Unobserved;
  Observation e = Observation::Unobserved;

  Observation of(Variable v) const;
  int observed_count() const;
  friend bool operator==(const Evidence &, const Evidence &) = default;
};

/// P(target = target_value | given).
struct TaskQuery {
  TaskId id = TaskId::I;
  Variable target = Variable::E;
  bool target_value = true;
  Evidence given;

  TaskKind kind() const;
  /// Throws std::invalid_argument when the target is also conditioned on.
  void validate() const;
  friend bool operator==(const TaskQuery &, const TaskQuery &) = default;
};

/// Swaps the roles of C1 and C2; the task id is unchanged because the cover
/// stories are symmetric in the two causes.
TaskQuery mirror(const TaskQuery &task);

std::string describe(const TaskQuery &task);

class DomainError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

class UndefinedConditional : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct CbnParams {
  double b = 0.0;   ///< leak
  double m1 = 0.0;  ///< causal strength of C1
  double m2 = 0.0;  ///< causal strength of C2
  double p1 = 0.5;  ///< P(C1 = 1)
  double p2 = 0.5;  ///< P(C2 = 1)
  bool tie_strengths = false;
  bool tie_priors = true;

  static CbnParams tied(double b, double m, double prior);

  /// Throws DomainError if any value is outside [0,1] or a tie is violated.
  void validate() const;
  friend bool operator==(const CbnParams &, const CbnParams &) = default;
};

/// P(c1, c2, e) for (c1, c2, e) in {0,1}^3.
class JointDistribution {
public:
  JointDistribution() = default;
  explicit JointDistribution(const std::array<double, 8> &p) : p_(p) {}

  static constexpr int index(int c1, int c2, int e) { return (c1 << 2) | (c2 << 1) | e; }

  double operator()(int c1, int c2, int e) const { return p_[index(c1, c2, e)]; }
  const std::array<double, 8> &values() const { return p_; }
  double total() const;

private:
  std::array<double, 8> p_{};
};

double noisy_or_cpt(const CbnParams &params, bool c1, bool c2);

JointDistribution joint(const CbnParams &params);

/// Conditional probability by summation over the joint. Throws
/// UndefinedConditional when the conditioning event has probability zero.
double eval_query(const CbnParams &params, const TaskQuery &task);

/// As eval_query, but returns nullopt for a zero-probability conditioning
/// event. Parameter validation still throws.
std::optional<double> try_eval_query(const CbnParams &params, const TaskQuery &task);

/// Every benchmark query against one joint table, indexed by task_index().
/// Undefined conditionals are nullopt.
std::array<std::optional<double>, kTaskCount> eval_task_set(const CbnParams &params);

const std::array<TaskQuery, kTaskCount> &rw17_task_set();

const TaskQuery &task_query(TaskId id);

}  // namespace colliderlab
