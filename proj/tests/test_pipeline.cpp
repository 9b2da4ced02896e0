#include "colliderlab/pipeline.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "colliderlab/csv.hpp"
#include "colliderlab/hash.hpp"
#include "colliderlab/rng.hpp"
#include "test_server.hpp"

using namespace colliderlab;
using namespace colliderlab::pipeline;
using json = nlohmann::json;
namespace fs = std::filesystem;
using testing_support::TestServer;

namespace {

fs::path temp_dir(const std::string &name) {
  auto p = fs::temp_directory_path() / ("colliderlab_pipe_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path &p) {
  const std::string s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

void full_run(const PipelineConfig &c, const fs::path &out) {
  cmd_gen(c, out);
  cmd_run(out);
  cmd_fit(out);
  cmd_report(out);
}

/// Rows of a CSV keyed by the first two columns (agent_id, condition_id).
std::map<std::pair<std::string, std::string>, std::map<std::string, std::string>> keyed_csv(
    const fs::path &p) {
  const auto t = csv::read_file(p.string());
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::string>> out;
  for (const auto &r : t.rows) {
    auto &m = out[{r.fields[0], r.fields[1]}];
    for (std::size_t k = 0; k < t.header.size(); ++k) m[t.header[k]] = r.fields[k];
  }
  return out;
}

double field(const std::map<std::string, std::string> &row, const std::string &name) {
  return parse_double(row.at(name), name);
}

/// Shared default run; the pipeline is deterministic so tests may read it.
const fs::path &default_run() {
  static const fs::path dir = [] {
    auto d = temp_dir("default");
    full_run(PipelineConfig{}, d);
    return d;
  }();
  return dir;
}

std::map<std::string, std::string> read_tree(const fs::path &dir) {
  std::map<std::string, std::string> out;
  for (const auto &e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return out;
}

/// Deterministic provider: answers with a number derived from the prompt.
std::string provider_answer(const std::string &prompt) {
  return std::to_string(fnv1a(prompt) % 101);
}

void answer_openai(const httplib::Request &req, httplib::Response &res) {
  const json body = json::parse(req.body);
  const std::string prompt = body["messages"][0]["content"].get<std::string>();
  res.set_content(
      json{{"choices", json::array({{{"message", {{"role", "assistant"},
                                                  {"content", provider_answer(prompt)}}}}})}}
          .dump(),
      "application/json");
}

AgentConfig http_agent(const std::string &endpoint) {
  AgentConfig a;
  a.id = "remote";
  a.backend = Backend::HttpProvider;
  a.model = "test-model";
  a.endpoint = endpoint;
  a.credentials_env = "COLLIDERLAB_PIPE_KEY";
  a.max_concurrency = 4;
  a.retry.initial_backoff = std::chrono::milliseconds(1);
  ::setenv("COLLIDERLAB_PIPE_KEY", "test-secret", 1);
  return a;
}

int cli(const std::string &args) {
  const std::string cmd = std::string(COLLIDERLAB_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

// ---- gen

TEST(Gen, DefaultConfigWrites264Records) {
  const auto dir = temp_dir("gen");
  const auto s = cmd_gen(PipelineConfig{}, dir);
  EXPECT_EQ(s.prompts, 264u);
  EXPECT_EQ(line_count(dir / "prompts.jsonl"), 264u);
  EXPECT_EQ(read_prompts(dir / "prompts.jsonl").size(), 264u);
  const json m = json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(m["prompt_count"], 264);
  EXPECT_EQ(m["prompts_sha256"], sha256_hex(slurp(dir / "prompts.jsonl")));
  EXPECT_EQ(m["template_hash"], PromptLibrary::load_default().content_hash());
  EXPECT_EQ(m["version"], std::string(kVersion));
  EXPECT_FALSE(m["created_at"].get<std::string>().empty());
}

TEST(Gen, RerunWithSameSeedIsByteIdentical) {
  const auto a = temp_dir("gen_a");
  const auto b = temp_dir("gen_b");
  PipelineConfig c;
  c.seed = 77;
  EXPECT_EQ(cmd_gen(c, a).prompts_sha256, cmd_gen(c, b).prompts_sha256);
  EXPECT_EQ(slurp(a / "prompts.jsonl"), slurp(b / "prompts.jsonl"));
  c.seed = 78;
  EXPECT_NE(cmd_gen(c, b).prompts_sha256, sha256_hex(slurp(a / "prompts.jsonl")));
}

TEST(Gen, ConditionFilterKeeps33Records) {
  const auto dir = temp_dir("gen_filter");
  const std::vector<std::string> expr{"condition=rw17/base/direct"};
  const auto s = cmd_gen(PipelineConfig{}, dir, Filter::parse(expr));
  EXPECT_EQ(s.prompts, 33u);
  for (const auto &p : read_prompts(dir / "prompts.jsonl")) {
    EXPECT_EQ(p.condition.id(), "rw17-base-direct");
  }
}

TEST(Gen, TemplateErrorNamesFileAndSlot) {
  const auto data = temp_dir("bad_data");
  fs::copy(COLLIDERLAB_DATA_DIR, data, fs::copy_options::recursive);
  {
    const fs::path weather = data / "domains" / "weather.txt";
    std::string text = slurp(weather);
    text.replace(text.find("{E}."), 4, "{Q9}.");
    std::ofstream(weather, std::ios::binary) << text;
  }
  PipelineConfig c;
  c.data_dir = data.string();
  try {
    cmd_gen(c, temp_dir("bad_out"));
    FAIL() << "expected TemplateError";
  } catch (const TemplateError &e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("weather"), std::string::npos) << what;
    EXPECT_NE(what.find("Q9"), std::string::npos) << what;
    EXPECT_EQ(exit_code_for(std::current_exception()), ExitCode::Data);
  }
}

TEST(Gen, TamperedPromptRecordIsRejected) {
  const auto dir = temp_dir("tamper");
  cmd_gen(PipelineConfig{}, dir);
  std::string text = slurp(dir / "prompts.jsonl");
  text.replace(text.find("Sociologists"), 1, "X");
  std::ofstream(dir / "prompts.jsonl", std::ios::binary) << text;
  EXPECT_THROW(read_prompts(dir / "prompts.jsonl"), DataError);
}

// ---- config and filters

TEST(Config, JsonRoundTripPreservesEverything) {
  PipelineConfig c;
  c.seed = 12345678901234ULL;
  c.conditions = {Condition::all()[2], Condition::all()[7]};
  c.render.noise_sentences = 3;
  c.fit.n_starts = 5;
  c.report.n_boot = 99;
  c.agents.push_back(http_agent("http://127.0.0.1:9"));
  const auto back = PipelineConfig::from_json_text(c.to_json_text(), "roundtrip");
  EXPECT_EQ(back.to_json_text(), c.to_json_text());
  EXPECT_EQ(back.seed, c.seed);
  ASSERT_EQ(back.agents.size(), 3u);
  EXPECT_EQ(back.agents[1].synthetic->ea_attenuation, c.agents[1].synthetic->ea_attenuation);
  EXPECT_EQ(back.agents[2].credentials_env, "COLLIDERLAB_PIPE_KEY");
}

TEST(Config, SecretsAreNeverSerialized) {
  PipelineConfig c;
  c.agents = {http_agent("http://127.0.0.1:9")};
  EXPECT_EQ(c.to_json_text().find("test-secret"), std::string::npos);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(PipelineConfig::from_json_text(R"({"sed": 1})", "t"), UsageError);
  EXPECT_THROW(PipelineConfig::from_json_text(R"({"conditions": ["rw17-base-diagonal"]})", "t"),
               UsageError);
  EXPECT_THROW(PipelineConfig::from_json_text(R"({"agents": [{"id": "a", "backend": "psychic"}]})", "t"),
               UsageError);
  EXPECT_THROW(PipelineConfig::from_json_text(R"({"agents": [{"id": "a/b"}]})", "t"), UsageError);
  EXPECT_THROW(PipelineConfig::from_json_text(
                   R"({"agents": [{"id": "a", "synthetic": {"kind": "normative"}},
                                  {"id": "a", "synthetic": {"kind": "normative"}}]})",
                   "t"),
               UsageError);
  EXPECT_THROW(PipelineConfig::from_json_text("{", "t"), UsageError);
  try {
    PipelineConfig::from_json_text(R"({"fit": {"n_starts": 0}})", "t");
    FAIL();
  } catch (const UsageError &) {
    EXPECT_EQ(exit_code_for(std::current_exception()), ExitCode::Usage);
  }
}

TEST(Config, BiasedTargetsResolveToAttenuation) {
  const auto c = PipelineConfig::from_json_text(
      R"({"agents": [{"id": "h", "synthetic": {"kind": "biased-human",
          "ea_target": 0.1, "mv_target": 0.15}}]})",
      "t");
  const auto expect = SyntheticAgentSpec::biased_human(default_synthetic_params(), 0.1, 0.15);
  EXPECT_EQ(c.agents.at(0).synthetic->ea_attenuation, expect.ea_attenuation);
  EXPECT_EQ(c.agents.at(0).synthetic->mv_injection, 0.15);
}

TEST(Filter, ParsesAndMatches) {
  const std::vector<std::string> e{"condition=abstract-over-cot", "condition=rw17/base/direct",
                                   "task=IX", "agent=x", "domain=weather"};
  const Filter f = Filter::parse(e);
  EXPECT_TRUE(f.accepts_condition(*Condition::parse("abstract-over-cot")));
  EXPECT_TRUE(f.accepts_condition(Condition{}));
  EXPECT_FALSE(f.accepts_condition(*Condition::parse("rw17-over-direct")));
  EXPECT_TRUE(f.accepts_task(TaskId::IX));
  EXPECT_FALSE(f.accepts_task(TaskId::X));
  EXPECT_FALSE(f.accepts_agent("y"));
  EXPECT_TRUE(Filter{}.accepts_agent("anything"));
  for (const std::string bad : {"condition", "condition=nope", "task=XII", "colour=red"}) {
    EXPECT_THROW(Filter::parse(std::vector<std::string>{bad}), UsageError) << bad;
  }
}

TEST(Format, DoublesRoundTripExactly) {
  for (double v : {0.1, 1.0 / 3.0, 0.09999999999999998, 1e-300, 123456.789, 0.0}) {
    EXPECT_EQ(parse_double(format_double(v), "v"), v);
  }
  EXPECT_THROW(parse_double("", "v"), DataError);
  EXPECT_THROW(parse_double("1.5x", "v"), DataError);
  EXPECT_THROW(parse_double("nan", "v"), DataError);
}

// ---- run

TEST(Run, SyntheticAgentsAnswerEveryPrompt) {
  const auto &dir = default_run();
  const json q = json::parse(slurp(dir / "run_quality.json"));
  for (const auto &a : PipelineConfig::default_agents()) {
    EXPECT_EQ(q[a.id]["judgments"], 264) << a.id;
    EXPECT_EQ(q[a.id]["parse_failures"], 0) << a.id;
  }
  const auto records = read_judgments(dir / "judgments.csv");
  EXPECT_EQ(records.size(), 528u);
  EXPECT_EQ(line_count(dir / "parse_failures.csv"), 1u);  // header only
  EXPECT_EQ(line_count(dir / "responses.jsonl"), 528u);
}

TEST(Run, EveryJudgmentTracesToPromptAndStoredResponse) {
  const auto &dir = default_run();
  std::set<std::string> prompt_hashes;
  for (const auto &p : read_prompts(dir / "prompts.jsonl")) prompt_hashes.insert(sha256_hex(p.text));
  std::map<std::string, std::string> responses;
  std::istringstream in(slurp(dir / "responses.jsonl"));
  for (std::string line; std::getline(in, line);) {
    const json j = json::parse(line);
    responses[j["response_ref"]] = j["text"];
  }
  for (const auto &r : read_judgments(dir / "judgments.csv")) {
    EXPECT_TRUE(prompt_hashes.count(r.prompt_hash)) << r.response_ref;
    ASSERT_TRUE(responses.count(r.response_ref)) << r.response_ref;
    EXPECT_EQ(parse_judgment(responses[r.response_ref], r.condition.style).value, r.raw_value);
  }
}

TEST(Run, ReplayOfStoredRunGivesIdenticalJudgments) {
  const auto &dir = default_run();
  const auto replay = temp_dir("replay");
  fs::copy_file(dir / "manifest.json", replay / "manifest.json");
  fs::copy_file(dir / "prompts.jsonl", replay / "prompts.jsonl");
  std::vector<AgentConfig> agents;
  for (const auto &a : PipelineConfig::default_agents()) {
    AgentConfig r;
    r.id = a.id;
    r.backend = Backend::Replay;
    r.model = a.model;
    r.replay_file = (dir / "responses.jsonl").string();
    agents.push_back(r);
  }
  const auto s = cmd_run(replay, agents);
  for (const auto &a : s.agents) EXPECT_EQ(a.network_calls, 0);
  EXPECT_EQ(slurp(replay / "judgments.csv"), slurp(dir / "judgments.csv"));
}

TEST(Run, InterruptedRunResumesToTheSameFile) {
  std::atomic<int> calls{0};
  TestServer server([&](const httplib::Request &req, httplib::Response &res) {
    ++calls;
    answer_openai(req, res);
  });
  PipelineConfig c;
  c.agents = {http_agent(server.endpoint())};
  const std::vector<std::string> expr{"condition=rw17-base-direct", "condition=abstract-over-cot"};
  const Filter f = Filter::parse(expr);

  const auto whole = temp_dir("whole");
  c.cache_dir = (whole / "cache").string();
  cmd_gen(c, whole, f);
  cmd_run(whole);
  EXPECT_EQ(calls.load(), 66);

  calls = 0;
  const auto parted = temp_dir("parted");
  c.cache_dir = (parted / "cache").string();
  cmd_gen(c, parted, f);
  RunOptions stop;
  stop.stop_after = 25;
  const auto first = cmd_run(parted, std::nullopt, stop);
  EXPECT_FALSE(first.complete);
  EXPECT_FALSE(fs::exists(parted / "judgments.csv"));
  EXPECT_EQ(calls.load(), 25);
  const auto second = cmd_run(parted);
  EXPECT_TRUE(second.complete);
  EXPECT_EQ(calls.load(), 66);  // the first 25 came from the cache
  EXPECT_EQ(second.agents.at(0).network_calls, 41);
  EXPECT_EQ(slurp(parted / "judgments.csv"), slurp(whole / "judgments.csv"));
}

TEST(Run, ProviderFailureIsUpstreamErrorAndSuccessesStayCached) {
  std::atomic<int> calls{0};
  TestServer server([&](const httplib::Request &req, httplib::Response &res) {
    const int n = ++calls;
    if (n % 5 == 0) {
      res.status = 500;
      return;
    }
    answer_openai(req, res);
  });
  PipelineConfig c;
  AgentConfig a = http_agent(server.endpoint());
  a.max_concurrency = 1;
  a.retry.max_attempts = 1;
  c.agents = {a};
  const auto dir = temp_dir("flaky");
  c.cache_dir = (dir / "cache").string();
  cmd_gen(c, dir, Filter::parse(std::vector<std::string>{"condition=rw17-base-direct"}));
  try {
    cmd_run(dir);
    FAIL() << "expected ProviderError";
  } catch (const ProviderError &e) {
    EXPECT_EQ(exit_code_for(std::current_exception()), ExitCode::Upstream);
    EXPECT_NE(std::string(e.what()).find("remote"), std::string::npos);
  }
  EXPECT_FALSE(fs::exists(dir / "judgments.csv"));
  EXPECT_EQ(ResponseCache(dir / "cache" / "remote").size(), 27u);  // 33 - floor(33/5)
}

TEST(Run, MissingCredentialIsUpstreamError) {
  PipelineConfig c;
  AgentConfig a = http_agent("http://127.0.0.1:9");
  a.credentials_env = "COLLIDERLAB_PIPE_UNSET_KEY";
  ::unsetenv("COLLIDERLAB_PIPE_UNSET_KEY");
  c.agents = {a};
  const auto dir = temp_dir("nokey");
  cmd_gen(c, dir, Filter::parse(std::vector<std::string>{"task=I", "condition=rw17-base-direct"}));
  try {
    cmd_run(dir);
    FAIL();
  } catch (const ProviderError &) {
    EXPECT_EQ(exit_code_for(std::current_exception()), ExitCode::Upstream);
  }
}

TEST(Run, ParseFailuresAreLoggedNotDropped) {
  TestServer server([&](const httplib::Request &req, httplib::Response &res) {
    const json body = json::parse(req.body);
    const std::string prompt = body["messages"][0]["content"];
    const bool garble = fnv1a(prompt) % 3 == 0;
    res.set_content(json{{"choices", json::array({{{"message", {{"role", "assistant"},
                                                               {"content", garble ? "no idea"
                                                                                  : "150"}}}}})}}
                        .dump(),
                    "application/json");
  });
  PipelineConfig c;
  c.agents = {http_agent(server.endpoint())};
  const auto dir = temp_dir("garble");
  c.cache_dir = (dir / "cache").string();
  cmd_gen(c, dir, Filter::parse(std::vector<std::string>{"condition=rw17-base-direct"}));
  const auto s = cmd_run(dir);
  const auto &a = s.agents.at(0);
  EXPECT_GT(a.parse_failures, 0u);
  EXPECT_EQ(a.parse_failures + a.judgments, 33u);
  EXPECT_EQ(a.clamped, a.judgments);
  EXPECT_EQ(line_count(dir / "parse_failures.csv"), 1 + a.parse_failures);
  const json q = json::parse(slurp(dir / "run_quality.json"));
  EXPECT_EQ(q["remote"]["parse_rules"]["parse-failure"], a.parse_failures);
  for (const auto &r : read_judgments(dir / "judgments.csv")) EXPECT_EQ(r.raw_value, 100.0);
}

// ---- fit

TEST(Fit, NormativeAgentFitsEveryCellWithinHalfAPercent) {
  const auto fits = read_fits(default_run() / "fits.csv");
  ASSERT_EQ(fits.size(), 16u);
  std::map<std::string, double> normative_mae;
  for (const auto &f : fits) {
    if (f.agent_id != "synthetic-normative") continue;
    ASSERT_EQ(f.status, CellStatus::Ok) << f.condition.id();
    EXPECT_LE(f.result.mae, 0.005) << f.condition.id();
    normative_mae[f.condition.id()] = f.result.mae;
  }
  EXPECT_EQ(normative_mae.size(), 8u);
  for (const auto &f : fits) {
    if (f.agent_id != "synthetic-biased") continue;
    ASSERT_EQ(f.status, CellStatus::Ok) << f.condition.id();
    EXPECT_TRUE(f.result.converged) << f.condition.id();
    EXPECT_GT(f.result.mae, normative_mae.at(f.condition.id())) << f.condition.id();
  }
}

TEST(Fit, EmptyCellGetsExplicitSkippedRecord) {
  const auto dir = temp_dir("skip");
  cmd_gen(PipelineConfig{}, dir, Filter::parse(std::vector<std::string>{"condition=rw17-base-cot"}));
  cmd_run(dir);
  const auto s = cmd_fit(dir);
  EXPECT_EQ(s.cells, 16u);
  EXPECT_EQ(s.ok, 2u);
  EXPECT_EQ(s.skipped, 14u);
  for (const auto &f : read_fits(dir / "fits.csv")) {
    if (f.condition.id() == "rw17-base-cot") {
      EXPECT_EQ(f.status, CellStatus::Ok);
    } else {
      EXPECT_EQ(f.status, CellStatus::Skipped);
      EXPECT_EQ(f.n_judgments, 0u);
      EXPECT_EQ(f.note, "no judgments");
    }
  }
}

TEST(Fit, FailingCellDoesNotDisturbOthers) {
  std::vector<JudgmentRecord> records;
  for (std::string_view d : kStoryDomains) {
    for (const auto &q : rw17_task_set()) {
      records.push_back(JudgmentRecord::make("good", Condition{}, std::string(d), q.id,
                                             100 * eval_query(default_synthetic_params(), q)));
    }
  }
  records.push_back(JudgmentRecord::make("thin", Condition{}, "weather", TaskId::I, 80));
  const std::vector<std::string> agents{"thin", "good"};
  const std::vector<Condition> conds{Condition{}};
  const auto fits = fit_cells(records, agents, conds, FitConfig{});
  ASSERT_EQ(fits.size(), 2u);
  EXPECT_EQ(fits[0].agent_id, "good");
  EXPECT_EQ(fits[0].status, CellStatus::Ok);
  ASSERT_TRUE(fits[0].loocv_r2);
  EXPECT_GE(*fits[0].loocv_r2, 1.0 - 1e-6);
  EXPECT_EQ(fits[1].agent_id, "thin");
  EXPECT_EQ(fits[1].status, CellStatus::Ok);
  EXPECT_FALSE(fits[1].loocv_r2);
  EXPECT_NE(fits[1].note.find("loocv"), std::string::npos);
}

TEST(Fit, FitsFileRoundTripsExactly) {
  const auto &dir = default_run();
  const auto fits = read_fits(dir / "fits.csv");
  const auto again = temp_dir("fits_rt") / "fits.csv";
  write_fits(again, fits);
  EXPECT_EQ(slurp(again), slurp(dir / "fits.csv"));
}

// ---- report

TEST(Report, BiasTableMatchesConstruction) {
  const auto bias = keyed_csv(default_run() / "report" / "bias.csv");
  for (const auto &c : Condition::all()) {
    const auto &n = bias.at({"synthetic-normative", c.id()});
    EXPECT_GT(field(n, "ea"), 0.0) << c.id();
    EXPECT_EQ(field(n, "mv"), 0.0) << c.id();
    const auto &b = bias.at({"synthetic-biased", c.id()});
    EXPECT_NEAR(field(b, "ea"), 0.1, 0.02) << c.id();
    EXPECT_NEAR(field(b, "mv"), 0.15, 0.02) << c.id();
  }
}

TEST(Report, DomainTestHasOneAdjustedPPerAgent) {
  const auto t = csv::read_file((default_run() / "report" / "domain_test.csv").string());
  ASSERT_EQ(t.rows.size(), 2u);
  const auto p_bh = *t.column({"p_bh"});
  std::set<std::string> agents;
  for (const auto &r : t.rows) {
    agents.insert(r.fields[0]);
    EXPECT_FALSE(r.fields[p_bh].empty());
  }
  EXPECT_EQ(agents.size(), 2u);
}

TEST(Report, BundlesAreByteIdenticalAcrossRuns) {
  const auto other = temp_dir("again");
  full_run(read_manifest_config(default_run()), other);
  const auto a = read_tree(default_run() / "report");
  const auto b = read_tree(other / "report");
  EXPECT_EQ(a.size(), 24u);
  EXPECT_EQ(a, b);
}

TEST(Report, GoldenValuesEqualDirectLibraryCalls) {
  const auto &dir = default_run();
  const auto config = read_manifest_config(dir);
  const auto records = read_judgments(dir / "judgments.csv");
  const auto bias = keyed_csv(dir / "report" / "bias.csv");
  const auto mae = keyed_csv(dir / "report" / "mae.csv");
  const auto loocv = keyed_csv(dir / "report" / "loocv.csv");
  const auto bacs_t = keyed_csv(dir / "report" / "bacs.csv");
  for (const auto &agent : {"synthetic-biased", "synthetic-normative"}) {
    for (const auto &c : Condition::all()) {
      const auto data = select(records, agent, c);
      const std::pair<std::string, std::string> key{agent, c.id()};
      EXPECT_EQ(field(bias.at(key), "ea"), explaining_away(data));
      EXPECT_EQ(field(bias.at(key), "mv"), markov_violation(data));
      const FitResult f = fit(data, config.fit);
      EXPECT_EQ(field(mae.at(key), "mae"), f.mae);
      EXPECT_EQ(field(bacs_t.at(key), "bacs"), bacs(f.params));
      EXPECT_EQ(field(bias.at(key), "model_ea"), model_bias(f.params).ea);
      EXPECT_EQ(field(loocv.at(key), "loocv_r2"), loocv_r2(data, config.fit, Execution::Serial).r2);
    }
  }
  const auto t = csv::read_file((dir / "report" / "domain_test.csv").string());
  std::vector<double> p;
  for (const auto &agent : {"synthetic-biased", "synthetic-normative"}) {
    std::vector<std::vector<double>> groups;
    for (const auto &d : {"economy", "sociology", "weather"}) {
      groups.emplace_back();
      for (const auto &r : records) {
        if (r.agent_id == agent && r.domain == d) groups.back().push_back(r.normalized);
      }
    }
    p.push_back(kruskal_wallis(groups).p);
  }
  const auto adj = bh_fdr(p);
  EXPECT_EQ(parse_double(t.rows[0].fields[5], "p_bh"), adj[0]);
  EXPECT_EQ(parse_double(t.rows[1].fields[5], "p_bh"), adj[1]);
}

TEST(Report, MissingUpstreamFileNamesTheStage) {
  auto expect_stage = [](const std::function<void()> &f, const std::string &stage) {
    try {
      f();
      FAIL() << "expected MissingStageOutput for " << stage;
    } catch (const MissingStageOutput &e) {
      EXPECT_EQ(e.stage(), stage);
      EXPECT_NE(std::string(e.what()).find("'" + stage + "'"), std::string::npos);
      EXPECT_EQ(exit_code_for(std::current_exception()), ExitCode::Data);
    }
  };
  const auto empty = temp_dir("empty");
  expect_stage([&] { cmd_run(empty); }, "gen");
  expect_stage([&] { cmd_report(empty); }, "gen");
  cmd_gen(PipelineConfig{}, empty);
  expect_stage([&] { cmd_fit(empty); }, "run");
  expect_stage([&] { cmd_report(empty); }, "run");
  cmd_run(empty);
  expect_stage([&] { cmd_report(empty); }, "fit");
  expect_stage([&] { cmd_metrics(empty); }, "fit");
}

TEST(Report, HumanBaselineIsOverlaidAndAligned) {
  const auto dir = temp_dir("human");
  // Five simulated participants answering the base cover-story cells.
  const auto spec = SyntheticAgentSpec::biased_human(default_synthetic_params(), 0.1, 0.15, 0.05, 3);
  const fs::path human_csv = dir / "human.csv";
  {
    std::ofstream f(human_csv);
    f << "subject,domain,task,rating\n";
    for (int s = 0; s < 5; ++s) {
      for (std::string_view d : kStoryDomains) {
        for (const auto &q : rw17_task_set()) {
          const double v = synthetic_judge(spec, q, stream_seed(fnv1a(d), s));
          f << "p" << s << "," << d << "," << task_index(q.id) + 1 << "," << std::lround(v) << "\n";
        }
      }
    }
  }
  PipelineConfig c;
  AgentConfig h;
  h.id = "human";
  h.backend = Backend::HumanFile;
  h.human_file = human_csv.string();
  c.agents.push_back(h);
  full_run(c, dir);

  const auto records = read_judgments(dir / "judgments.csv");
  const auto human = std::count_if(records.begin(), records.end(),
                                   [](const JudgmentRecord &r) { return r.agent_id == "human"; });
  EXPECT_EQ(human, 165);
  for (const auto &r : records) EXPECT_FALSE(r.prompt_hash.empty()) << r.response_ref;

  const auto fits = read_fits(dir / "fits.csv");
  for (const auto &f : fits) {
    if (f.agent_id != "human") continue;
    if (f.condition.id() == "rw17-base-direct") {
      EXPECT_EQ(f.status, CellStatus::Ok);
      EXPECT_TRUE(f.aggregated);
      EXPECT_EQ(f.n_judgments, 165u);
    } else {
      EXPECT_EQ(f.status, CellStatus::Skipped);
    }
  }

  const auto align = csv::read_file((dir / "report" / "alignment.csv").string());
  EXPECT_EQ(align.rows.size(), 16u);
  const auto direct = alignment_table(records, "human", c.report.n_boot, c.report.boot_seed);
  const auto rho_col = *align.column({"rho"});
  for (std::size_t k = 0; k < direct.size(); ++k) {
    ASSERT_TRUE(direct[k].report);
    EXPECT_EQ(parse_double(align.rows[k].fields[rho_col], "rho"), direct[k].report->rho);
  }
  const std::string mae_spec = slurp(dir / "report" / "figures" / "mae.vl.json");
  EXPECT_NE(mae_spec.find("strokeDash"), std::string::npos);
  const json dq = json::parse(slurp(dir / "report" / "data_quality.json"));
  EXPECT_EQ(dq["agents"]["human"]["backend"], "human-file");
  EXPECT_EQ(dq["cells"]["skipped"].size(), 7u);
}

TEST(Report, MetricsTableMatchesSignatureFile) {
  const auto &dir = default_run();
  const auto rows = cmd_metrics(dir);
  EXPECT_EQ(rows.size(), 16u);
  EXPECT_EQ(slurp(dir / "metrics.csv"), slurp(dir / "report" / "signatures.csv"));
}

TEST(Report, SvgFiguresAreWellFormedDocuments) {
  for (const auto &e : fs::directory_iterator(default_run() / "report" / "figures")) {
    const std::string s = slurp(e.path());
    if (e.path().extension() == ".svg") {
      EXPECT_EQ(s.rfind("<svg", 0), 0u) << e.path();
      EXPECT_NE(s.find("</svg>"), std::string::npos) << e.path();
    } else {
      const json j = json::parse(s);
      EXPECT_TRUE(j.contains("$schema")) << e.path();
    }
  }
}

// ---- CLI

TEST(Cli, ExitCodesFollowTheErrorClass) {
  const auto dir = temp_dir("cli");
  const std::string out = " --out " + dir.string();
  EXPECT_EQ(cli("--bogus-flag gen"), 1);
  EXPECT_EQ(cli(out + " --filter colour=red gen"), 1);
  EXPECT_EQ(cli(out + " fit"), 2);  // no manifest yet
  EXPECT_EQ(cli(out + " --filter condition=rw17-base-direct gen"), 0);
  EXPECT_EQ(line_count(dir / "prompts.jsonl"), 33u);
  EXPECT_EQ(cli(out + " run"), 0);
  EXPECT_EQ(cli(out + " fit"), 0);
  EXPECT_EQ(cli(out + " metrics"), 0);
  EXPECT_EQ(cli(out + " report"), 0);

  const auto cfg = dir / "http.json";
  std::ofstream(cfg) << R"({"agents": [{"id": "remote", "backend": "http-provider",
      "model": "m", "endpoint": "http://127.0.0.1:9", "credentials_env": "COLLIDERLAB_PIPE_NEVER_SET",
      "retry": {"max_attempts": 1}}]})";
  ::unsetenv("COLLIDERLAB_PIPE_NEVER_SET");
  EXPECT_EQ(cli(out + " --config " + cfg.string() + " run"), 3);
  EXPECT_EQ(cli(out + " validate --criterion 6"), 0);
}
