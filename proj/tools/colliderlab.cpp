// colliderlab: gen | run | fit | metrics | report | validate

#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "colliderlab/pipeline.hpp"
#include "colliderlab/validation.hpp"

namespace fs = std::filesystem;
using namespace colliderlab;
using namespace colliderlab::pipeline;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out = "colliderlab-out";
  std::vector<std::string> filters;
};

PipelineConfig gen_config(const Globals &g) {
  PipelineConfig c = g.config.empty() ? PipelineConfig{} : PipelineConfig::load(g.config);
  if (g.seed) c.seed = *g.seed;
  return c;
}

int run_stage(const std::function<void()> &stage) {
  try {
    stage();
    return 0;
  } catch (const std::exception &e) {
    std::cerr << "colliderlab: " << e.what() << "\n";
    return static_cast<int>(exit_code_for(std::current_exception()));
  }
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Causal-reasoning signatures of judgment-producing agents on collider queries"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Master seed for prompt generation");
  app.add_option("--config", g.config, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--filter", g.filters,
                 "key=value restriction, keys condition/agent/task/domain (repeatable)");

  auto *gen = app.add_subcommand("gen", "Render the prompt suite and write the manifest");
  auto *run = app.add_subcommand("run", "Query every agent and parse judgments");
  std::optional<std::size_t> stop_after;
  run->add_option("--stop-after", stop_after,
                  "Query at most N prompts per agent, then stop (resume by rerunning)");
  auto *fit = app.add_subcommand("fit", "Fit one causal Bayes net per agent and condition");
  auto *metrics = app.add_subcommand("metrics", "Write the per-cell signature table");
  auto *report = app.add_subcommand("report", "Write tables, plot specs and data quality");
  auto *validate = app.add_subcommand("validate", "Run the offline acceptance checks");
  std::vector<int> criteria;
  validate->add_option("--criterion", criteria, "Run only these criteria (1-9)")
      ->check(CLI::Range(1, validation::kCriterionCount));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return app.exit(e) == 0 ? 0 : static_cast<int>(ExitCode::Usage);
  }

  const fs::path out = g.out;
  Filter filter;
  if (const int rc = run_stage([&] { filter = Filter::parse(g.filters); }); rc != 0) return rc;

  if (gen->parsed()) {
    return run_stage([&] {
      const auto s = cmd_gen(gen_config(g), out, filter);
      std::cout << "wrote " << s.prompts << " prompts to " << (out / "prompts.jsonl").string()
                << " (sha256 " << s.prompts_sha256 << ")\n";
    });
  }
  if (run->parsed()) {
    return run_stage([&] {
      std::optional<std::vector<AgentConfig>> agents;
      if (!g.config.empty()) agents = PipelineConfig::load(g.config).agents;
      RunOptions opts;
      opts.stop_after = stop_after;
      opts.filter = filter;
      const auto s = cmd_run(out, agents, opts);
      for (const auto &a : s.agents) {
        std::cout << a.agent_id << ": " << a.responses << " responses, " << a.judgments
                  << " judgments, " << a.parse_failures << " parse failures, " << a.clamped
                  << " clamped, " << a.network_calls << " network calls\n";
      }
      if (!s.complete) std::cout << "stopped early; rerun to resume from the cache\n";
    });
  }
  if (fit->parsed()) {
    return run_stage([&] {
      const auto s = cmd_fit(out, filter);
      std::cout << s.cells << " cells: " << s.ok << " fitted, " << s.skipped << " skipped, "
                << s.failed << " failed\n";
    });
  }
  if (metrics->parsed()) {
    return run_stage([&] {
      const auto rows = cmd_metrics(out);
      std::cout << "wrote " << rows.size() << " rows to " << (out / "metrics.csv").string()
                << "\n";
    });
  }
  if (report->parsed()) {
    return run_stage([&] {
      const auto s = cmd_report(out);
      std::cout << "wrote " << s.files.size() << " files to " << s.dir.string() << "\n";
    });
  }
  if (validate->parsed()) {
    validation::Options opts;
    if (g.seed) opts.seed = *g.seed;
    if (criteria.empty()) {
      for (int i = 1; i <= validation::kCriterionCount; ++i) criteria.push_back(i);
    }
    bool failed = false;
    for (int id : criteria) {
      const auto r = validation::run_criterion(id, opts);
      std::cout << validation::format_line(r) << std::endl;
      failed = failed || r.verdict == validation::Verdict::Fail;
    }
    return failed ? static_cast<int>(ExitCode::Data) : 0;
  }
  return 0;
}
