#pragma once

// Stage orchestration over one output directory:
//
//   gen     manifest.json, prompts.jsonl
//   run     run.json, responses.jsonl, judgments.csv, parse_failures.csv, run_quality.json
//   fit     fits.csv
//   metrics metrics.csv
//   report  report/ (tables, figures/*.vl.json + *.svg, data_quality.json)
//
// Each stage reads only files written by earlier stages. Nothing under
// report/ carries a timestamp, so equal inputs give byte-identical bundles.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "colliderlab/agents.hpp"
#include "colliderlab/fitting.hpp"
#include "colliderlab/judgment.hpp"
#include "colliderlab/metrics.hpp"
#include "colliderlab/promptgen.hpp"

namespace colliderlab::pipeline {

enum class ExitCode : int { Success = 0, Usage = 1, Data = 2, Upstream = 3 };

/// Bad flags, filters or configuration.
class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Unreadable or inconsistent stage files.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A stage input is absent because the producing stage has not run.
class MissingStageOutput : public DataError {
public:
  MissingStageOutput(std::string stage, const std::filesystem::path &path)
      : DataError("missing " + path.string() + "; run the '" + stage + "' stage first"),
        stage_(std::move(stage)),
        path_(path) {}
  const std::string &stage() const { return stage_; }
  const std::filesystem::path &path() const { return path_; }

private:
  std::string stage_;
  std::filesystem::path path_;
};

/// Maps the error classes of every module onto the CLI exit codes.
ExitCode exit_code_for(std::exception_ptr error);

/// Shortest text that parses back to the same double.
std::string format_double(double v);
/// Throws DataError naming `what` unless the whole field is a finite number.
double parse_double(std::string_view text, std::string_view what);

/// Conjunction over keys, disjunction within a key. Expressions are
/// key=value with keys condition, agent, task and domain; conditions accept
/// "rw17-base-direct" or "rw17/base/direct".
struct Filter {
  std::vector<Condition> conditions;
  std::vector<std::string> agents;
  std::vector<TaskId> tasks;
  std::vector<std::string> domains;

  static Filter parse(std::span<const std::string> expressions);

  bool accepts_condition(const Condition &c) const;
  bool accepts_agent(std::string_view id) const;
  bool accepts_task(TaskId t) const;
  bool accepts_domain(std::string_view d) const;
  bool accepts(const PromptInstance &p) const;
  bool accepts(const JudgmentRecord &r) const;
};

struct ReportConfig {
  int n_boot = 2000;
  std::uint64_t boot_seed = 0;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::vector<std::string> domains{kStoryDomains.begin(), kStoryDomains.end()};
  std::vector<Condition> conditions{Condition::all().begin(), Condition::all().end()};
  RenderOptions render;
  std::vector<AgentConfig> agents = default_agents();
  FitConfig fit;
  ReportConfig report;
  std::string data_dir;   ///< empty: PromptLibrary::load_default()
  std::string cache_dir;  ///< empty: <out>/cache

  /// Normative and biased-human synthetic reasoners over one parameter point.
  static std::vector<AgentConfig> default_agents();

  /// Keys absent from the document keep their defaults; unknown keys and
  /// invalid values raise UsageError.
  static PipelineConfig from_json_text(std::string_view text, std::string_view source);
  static PipelineConfig load(const std::filesystem::path &path);
  std::string to_json_text() const;
};

/// The parameter point behind the default synthetic agents.
CbnParams default_synthetic_params();

inline constexpr std::string_view kVersion = "colliderlab 0.1.0";

// ---- gen

struct GenSummary {
  std::size_t prompts = 0;
  std::string prompts_sha256;
};

GenSummary cmd_gen(const PipelineConfig &config, const std::filesystem::path &out,
                   const Filter &filter = {});

std::vector<PromptInstance> read_prompts(const std::filesystem::path &path);
/// The config stored by gen.
PipelineConfig read_manifest_config(const std::filesystem::path &out);

// ---- run

struct RunOptions {
  /// Query at most this many prompts per agent, then stop without writing
  /// stage outputs. Responses obtained so far stay in the cache.
  std::optional<std::size_t> stop_after;
  Filter filter;
  AgentClient::Hooks hooks;
};

struct AgentRunSummary {
  std::string agent_id;
  std::size_t responses = 0;
  std::size_t judgments = 0;
  std::size_t parse_failures = 0;
  std::size_t clamped = 0;
  int network_calls = 0;
};

struct RunSummary {
  bool complete = true;
  std::vector<AgentRunSummary> agents;
};

/// Uses the agents of `agents_override` when given, else the manifest's.
/// Any prompt still failing after retries raises ProviderError once every
/// prompt has been attempted; successful responses remain cached.
RunSummary cmd_run(const std::filesystem::path &out,
                   const std::optional<std::vector<AgentConfig>> &agents_override = std::nullopt,
                   const RunOptions &options = {});

std::vector<JudgmentRecord> read_judgments(const std::filesystem::path &path);
void write_judgments(const std::filesystem::path &path, std::span<const JudgmentRecord> records);

// ---- fit

enum class CellStatus : std::uint8_t { Ok, Skipped, Failed };
std::string_view to_string(CellStatus s);

struct CellFitRecord {
  std::string agent_id;
  Condition condition;
  CellStatus status = CellStatus::Skipped;
  std::size_t n_judgments = 0;
  bool aggregated = false;   ///< fitted on per-(task, domain) means
  FitResult result;          ///< meaningful when status is Ok
  std::optional<double> loocv_r2;
  std::string note;
};

/// One record per (agent, condition) in canonical order: agents sorted,
/// conditions in `conditions` order. Cells with repeated (task, domain)
/// entries are fitted on cell means.
std::vector<CellFitRecord> fit_cells(std::span<const JudgmentRecord> records,
                                     std::span<const std::string> agents,
                                     std::span<const Condition> conditions,
                                     const FitConfig &config,
                                     Execution exec = Execution::Parallel);

struct FitSummary {
  std::size_t cells = 0;
  std::size_t ok = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
};

FitSummary cmd_fit(const std::filesystem::path &out, const Filter &filter = {});

std::vector<CellFitRecord> read_fits(const std::filesystem::path &path);
void write_fits(const std::filesystem::path &path, std::span<const CellFitRecord> fits);

// ---- metrics and report

struct SignatureRow {
  std::string agent_id;
  Condition condition;
  CellStatus status = CellStatus::Skipped;
  std::size_t n_judgments = 0;
  std::optional<double> ea;   ///< from raw judgments
  std::optional<double> mv;   ///< from raw judgments
  std::optional<double> bacs;
  std::optional<double> mae;
  std::optional<double> loocv_r2;
  std::optional<double> model_ea;
  std::optional<double> model_mv;

  /// Set when every axis of the robustness map is defined.
  std::optional<SignaturePoint> point() const;
};

std::vector<SignatureRow> signature_table(std::span<const JudgmentRecord> records,
                                          std::span<const CellFitRecord> fits);

/// Writes metrics.csv and returns its rows.
std::vector<SignatureRow> cmd_metrics(const std::filesystem::path &out);

struct AlignmentRow {
  std::string agent_id;
  Condition condition;
  std::optional<AlignmentReport> report;
  std::string note;
};

/// Spearman alignment of each non-reference agent's cell means with the
/// reference agent's, per condition. Empty when the reference is absent.
std::vector<AlignmentRow> alignment_table(std::span<const JudgmentRecord> records,
                                          std::string_view reference_agent, int n_boot,
                                          std::uint64_t seed);

struct DomainTestRow {
  std::string agent_id;
  std::size_t n = 0;
  std::optional<KruskalWallisResult> test;
  std::optional<double> p_bh;
  std::string note;
};

/// Kruskal-Wallis over each agent's judgments grouped by domain, with
/// Benjamini-Hochberg adjustment across the agents that have a test.
std::vector<DomainTestRow> domain_test_table(std::span<const JudgmentRecord> records);

struct RobustnessRow {
  std::string agent_id;
  std::string subset;  ///< "all", "direct" or "cot"
  std::size_t n_points = 0;
  std::optional<double> dispersion;
};

/// Points are min-max scaled over every defined row, then dispersed per agent.
std::vector<RobustnessRow> robustness_table(std::span<const SignatureRow> rows);

inline constexpr std::string_view kHumanAgent = "human";

struct ReportSummary {
  std::filesystem::path dir;
  std::vector<std::string> files;  ///< relative to dir, sorted
};

ReportSummary cmd_report(const std::filesystem::path &out);

}  // namespace colliderlab::pipeline
