#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "colliderlab/csv.hpp"
#include "colliderlab/hash.hpp"
#include "colliderlab/pipeline.hpp"
#include "pipeline_io.hpp"

namespace colliderlab::pipeline {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace detail {

std::string read_text(const fs::path &path, std::string_view producing_stage) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingStageOutput(std::string(producing_stage), path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path &path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataError("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string table_text(const std::vector<std::string> &header,
                       const std::vector<std::vector<std::string>> &rows) {
  std::ostringstream out;
  csv::write_row(out, header);
  for (const auto &r : rows) csv::write_row(out, r);
  return out.str();
}

std::string opt_double(const std::optional<double> &v) {
  return v ? format_double(*v) : std::string();
}

}  // namespace detail

using detail::read_text;
using detail::write_text;

namespace {

const fs::path kManifest = "manifest.json";
const fs::path kPrompts = "prompts.jsonl";
const fs::path kRun = "run.json";
const fs::path kResponses = "responses.jsonl";
const fs::path kJudgments = "judgments.csv";
const fs::path kFailures = "parse_failures.csv";
const fs::path kRunQuality = "run_quality.json";
const fs::path kFits = "fits.csv";

PromptLibrary load_library(const PipelineConfig &config) {
  return config.data_dir.empty() ? PromptLibrary::load_default()
                                 : PromptLibrary::load(config.data_dir);
}

json prompt_json(const PromptInstance &p) {
  json ids = json::array();
  for (const auto &[from, to] : p.identifier_map) ids.push_back(json::array({from, to}));
  return json{{"prompt_hash", sha256_hex(p.text)},
              {"condition_id", p.condition.id()},
              {"domain", p.domain},
              {"task_id", std::string(to_roman(p.task.id))},
              {"seed", p.seed},
              {"identifier_map", ids},
              {"injected_noise_ids", p.injected_noise_ids},
              {"text", p.text}};
}

}  // namespace

// ---- gen

GenSummary cmd_gen(const PipelineConfig &config, const fs::path &out, const Filter &filter) {
  const PromptLibrary library = load_library(config);
  const std::vector<PromptInstance> suite =
      generate_suite(library, config.domains, config.conditions, config.seed, config.render);

  std::string lines;
  std::size_t n = 0;
  for (const PromptInstance &p : suite) {
    if (!filter.accepts(p)) continue;
    lines += prompt_json(p).dump();
    lines += '\n';
    ++n;
  }
  fs::create_directories(out);
  write_text(out / kPrompts, lines);

  GenSummary summary{n, sha256_hex(lines)};
  json conds = json::array();
  for (const auto &c : config.conditions) conds.push_back(c.id());
  json agents = json::array();
  for (const auto &a : config.agents) agents.push_back(a.id);
  json manifest{{"version", kVersion},
                {"created_at", detail::utc_timestamp()},
                {"seed", config.seed},
                {"agents", agents},
                {"conditions", conds},
                {"domains", config.domains},
                {"template_hashes", library.file_hashes()},
                {"template_hash", library.content_hash()},
                {"prompt_count", n},
                {"prompts_sha256", summary.prompts_sha256},
                {"filter", json{{"conditions", json::array()},
                                {"tasks", json::array()},
                                {"domains", filter.domains}}},
                {"config", json::parse(config.to_json_text())}};
  for (const auto &c : filter.conditions) manifest["filter"]["conditions"].push_back(c.id());
  for (const auto &t : filter.tasks) manifest["filter"]["tasks"].push_back(to_roman(t));
  write_text(out / kManifest, manifest.dump(2) + "\n");
  return summary;
}

PipelineConfig read_manifest_config(const fs::path &out) {
  const std::string text = read_text(out / kManifest, "gen");
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error &e) {
    throw DataError((out / kManifest).string() + ": " + e.what());
  }
  if (!j.contains("config")) throw DataError((out / kManifest).string() + ": no config");
  try {
    return PipelineConfig::from_json_text(j.at("config").dump(), (out / kManifest).string());
  } catch (const UsageError &e) {
    throw DataError(e.what());
  }
}

std::vector<PromptInstance> read_prompts(const fs::path &path) {
  const std::string text = read_text(path, "gen");
  std::vector<PromptInstance> out;
  std::istringstream in(text);
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    const std::string at = path.string() + ":" + std::to_string(n);
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw DataError(at + ": not a JSON record");
    try {
      PromptInstance p;
      p.text = j.at("text").get<std::string>();
      p.domain = j.at("domain").get<std::string>();
      const auto task = parse_task_id(j.at("task_id").get<std::string>());
      const auto cond = Condition::parse(j.at("condition_id").get<std::string>());
      if (!task || !cond) throw DataError(at + ": unknown task_id or condition_id");
      p.task = task_query(*task);
      p.condition = *cond;
      p.seed = j.at("seed").get<std::uint64_t>();
      for (const auto &pair : j.at("identifier_map")) {
        p.identifier_map.emplace_back(pair.at(0).get<std::string>(),
                                      pair.at(1).get<std::string>());
      }
      p.injected_noise_ids = j.at("injected_noise_ids").get<std::vector<std::string>>();
      if (sha256_hex(p.text) != j.at("prompt_hash").get<std::string>()) {
        throw DataError(at + ": prompt_hash does not match the text");
      }
      out.push_back(std::move(p));
    } catch (const json::exception &e) {
      throw DataError(at + ": " + e.what());
    }
  }
  return out;
}

// ---- judgments file

namespace {

const std::vector<std::string> kJudgmentHeader = {"agent_id", "condition_id", "domain", "task_id",
                                                  "raw_value", "prompt_hash", "response_ref"};

}  // namespace

void write_judgments(const fs::path &path, std::span<const JudgmentRecord> records) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(records.size());
  for (const auto &r : records) {
    rows.push_back({r.agent_id, r.condition.id(), r.domain, std::string(to_roman(r.task)),
                    format_double(r.raw_value), r.prompt_hash, r.response_ref});
  }
  write_text(path, detail::table_text(kJudgmentHeader, rows));
}

std::vector<JudgmentRecord> read_judgments(const fs::path &path) {
  const std::string text = read_text(path, "run");
  csv::Table t;
  try {
    t = csv::parse(text);
  } catch (const csv::ParseError &e) {
    throw DataError(path.string() + ": " + e.what());
  }
  std::array<std::size_t, 7> col{};
  for (std::size_t k = 0; k < kJudgmentHeader.size(); ++k) {
    const auto c = t.column({kJudgmentHeader[k]});
    if (!c) throw DataError(path.string() + ": missing column '" + kJudgmentHeader[k] + "'");
    col[k] = *c;
  }
  std::vector<JudgmentRecord> out;
  out.reserve(t.rows.size());
  for (const csv::Row &row : t.rows) {
    const std::string at = path.string() + ": line " + std::to_string(row.line);
    if (row.fields.size() != t.header.size()) throw DataError(at + ": wrong field count");
    const auto &f = row.fields;
    const auto cond = Condition::parse(f[col[1]]);
    if (!cond) throw DataError(at + ", column 'condition_id': unknown '" + f[col[1]] + "'");
    const auto task = parse_task_id(f[col[3]]);
    if (!task) throw DataError(at + ", column 'task_id': unknown '" + f[col[3]] + "'");
    const double raw = parse_double(f[col[4]], at + ", column 'raw_value'");
    if (raw < 0.0 || raw > 100.0) throw DataError(at + ", column 'raw_value': outside [0,100]");
    JudgmentRecord r = JudgmentRecord::make(f[col[0]], *cond, f[col[2]], *task, raw);
    r.prompt_hash = f[col[5]];
    r.response_ref = f[col[6]];
    out.push_back(std::move(r));
  }
  return out;
}

// ---- run

namespace {

struct AgentOutput {
  AgentRunSummary summary;
  std::map<std::string, std::size_t> rules;
  std::vector<JudgmentRecord> judgments;
  std::vector<std::vector<std::string>> failures;
  std::string responses;  ///< jsonl lines
};

std::string prompt_key(std::string_view domain, TaskId task, const Condition &c) {
  return std::string(domain) + "|" + std::string(to_roman(task)) + "|" + c.id();
}

}  // namespace

RunSummary cmd_run(const fs::path &out, const std::optional<std::vector<AgentConfig>> &override,
                   const RunOptions &options) {
  const PipelineConfig config = read_manifest_config(out);
  std::vector<PromptInstance> prompts;
  for (auto &p : read_prompts(out / kPrompts)) {
    if (options.filter.accepts(p)) prompts.push_back(std::move(p));
  }
  std::vector<AgentConfig> agents = override ? *override : config.agents;
  std::erase_if(agents, [&](const AgentConfig &a) { return !options.filter.accepts_agent(a.id); });
  for (const auto &a : agents) {
    try {
      a.validate();
    } catch (const std::invalid_argument &e) {
      throw UsageError(e.what());
    }
  }
  std::sort(agents.begin(), agents.end(),
            [](const AgentConfig &a, const AgentConfig &b) { return a.id < b.id; });

  std::map<std::string, std::string> hash_by_cell;
  std::vector<std::string> hashes;
  for (const auto &p : prompts) {
    hashes.push_back(sha256_hex(p.text));
    hash_by_cell.emplace(prompt_key(p.domain, p.task.id, p.condition), hashes.back());
  }

  const fs::path cache_root = config.cache_dir.empty() ? out / "cache" : fs::path(config.cache_dir);
  RunSummary summary;
  std::vector<AgentOutput> outputs;
  std::exception_ptr first_error;
  std::string error_text;

  for (const AgentConfig &agent : agents) {
    AgentOutput o;
    o.summary.agent_id = agent.id;

    if (agent.backend == Backend::HumanFile) {
      for (JudgmentRecord &r : ingest_human_baseline(agent.human_file)) {
        r.agent_id = agent.id;
        if (!options.filter.accepts(r)) continue;
        if (r.prompt_hash.empty()) {
          const auto it = hash_by_cell.find(prompt_key(r.domain, r.task, r.condition));
          if (it != hash_by_cell.end()) r.prompt_hash = it->second;
        }
        o.summary.clamped += r.clamped ? 1 : 0;
        o.judgments.push_back(std::move(r));
      }
      o.summary.judgments = o.judgments.size();
      outputs.push_back(std::move(o));
      continue;
    }

    for (int rep = 0; rep < agent.repeats; ++rep) {
      std::shared_ptr<ResponseCache> cache;
      if (agent.cache && agent.backend == Backend::HttpProvider) {
        fs::path dir = cache_root / agent.id;
        if (agent.repeats > 1) dir /= "r" + std::to_string(rep);
        cache = std::make_shared<ResponseCache>(dir);
      }
      AgentClient client(agent, cache, options.hooks);
      const auto outcomes = query_all(client, prompts, options.stop_after);
      o.summary.network_calls += client.network_calls();
      if (options.stop_after && *options.stop_after < prompts.size()) summary.complete = false;

      std::size_t failed = 0;
      for (std::size_t i = 0; i < outcomes.size(); ++i) {
        const QueryOutcome &q = outcomes[i];
        if (q.error) {
          if (!first_error) first_error = q.error;
          ++failed;
          continue;
        }
        if (!q.response) continue;
        const PromptInstance &p = prompts[i];
        std::string ref = agent.id + ":" + hashes[i];
        if (agent.repeats > 1) ref += ":" + std::to_string(rep);
        const RawResponse &r = *q.response;
        o.responses += json{{"agent_id", agent.id},
                            {"prompt_hash", hashes[i]},
                            {"response_ref", ref},
                            {"condition_id", p.condition.id()},
                            {"domain", p.domain},
                            {"task_id", std::string(to_roman(p.task.id))},
                            {"model", r.model},
                            {"text", r.text},
                            {"timestamp", r.timestamp},
                            {"latency_ms", r.latency_ms},
                            {"from_cache", r.from_cache}}
                           .dump();
        o.responses += '\n';
        ++o.summary.responses;

        const ParsedJudgment parsed = parse_judgment(r.text, p.condition.style, ref);
        ++o.rules[parsed.rule];
        if (!parsed.ok()) {
          ++o.summary.parse_failures;
          o.failures.push_back({agent.id, p.condition.id(), p.domain,
                                std::string(to_roman(p.task.id)), hashes[i], ref, parsed.rule});
          continue;
        }
        JudgmentRecord j =
            JudgmentRecord::make(agent.id, p.condition, p.domain, p.task.id, *parsed.value);
        j.clamped = parsed.clamped;
        j.prompt_hash = hashes[i];
        j.response_ref = ref;
        o.summary.clamped += parsed.clamped ? 1 : 0;
        o.judgments.push_back(std::move(j));
      }
      if (failed > 0) {
        error_text += "agent '" + agent.id + "': " + std::to_string(failed) + " of " +
                      std::to_string(outcomes.size()) + " queries failed; ";
      }
    }
    o.summary.judgments = o.judgments.size();
    outputs.push_back(std::move(o));
  }

  for (const auto &o : outputs) summary.agents.push_back(o.summary);
  if (first_error) {
    try {
      std::rethrow_exception(first_error);
    } catch (const std::exception &e) {
      throw ProviderError(error_text + "first error: " + e.what() +
                          " (successful responses are cached; rerun to resume)");
    }
  }
  if (!summary.complete) return summary;

  std::vector<JudgmentRecord> judgments;
  std::string responses;
  std::vector<std::vector<std::string>> failures;
  json quality = json::object();
  json agent_list = json::array();
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    auto &o = outputs[k];
    judgments.insert(judgments.end(), std::make_move_iterator(o.judgments.begin()),
                     std::make_move_iterator(o.judgments.end()));
    responses += o.responses;
    failures.insert(failures.end(), o.failures.begin(), o.failures.end());
    quality[o.summary.agent_id] = json{{"backend", std::string(to_string(agents[k].backend))},
                                       {"responses", o.summary.responses},
                                       {"judgments", o.summary.judgments},
                                       {"parse_failures", o.summary.parse_failures},
                                       {"clamped", o.summary.clamped},
                                       {"parse_rules", o.rules}};
    agent_list.push_back(agents[k].id);
  }

  write_text(out / kResponses, responses);
  write_judgments(out / kJudgments, judgments);
  write_text(out / kFailures,
             detail::table_text({"agent_id", "condition_id", "domain", "task_id", "prompt_hash",
                                 "response_ref", "rule"},
                                failures));
  write_text(out / kRunQuality, quality.dump(2) + "\n");
  PipelineConfig used = config;
  used.agents = agents;
  json run{{"version", kVersion},
           {"finished_at", detail::utc_timestamp()},
           {"agents", agent_list},
           {"config", json::parse(used.to_json_text())}};
  write_text(out / kRun, run.dump(2) + "\n");
  return summary;
}

// ---- fit

std::string_view to_string(CellStatus s) {
  switch (s) {
    case CellStatus::Ok:
      return "ok";
    case CellStatus::Skipped:
      return "skipped";
    case CellStatus::Failed:
      return "failed";
  }
  return "failed";
}

namespace {

bool has_repeated_cells(std::span<const JudgmentRecord> data) {
  std::set<std::pair<TaskId, std::string>> seen;
  for (const auto &r : data) {
    if (!seen.emplace(r.task, r.domain).second) return true;
  }
  return false;
}

}  // namespace

std::vector<CellFitRecord> fit_cells(std::span<const JudgmentRecord> records,
                                     std::span<const std::string> agents,
                                     std::span<const Condition> conditions,
                                     const FitConfig &config, Execution exec) {
  std::vector<std::string> ids(agents.begin(), agents.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  std::vector<CellFitRecord> out;
  std::vector<std::vector<JudgmentRecord>> datasets;
  std::vector<std::size_t> fitted;  // index into out per dataset
  const std::vector<JudgmentRecord> all(records.begin(), records.end());
  for (const auto &id : ids) {
    for (const auto &c : conditions) {
      CellFitRecord rec;
      rec.agent_id = id;
      rec.condition = c;
      std::vector<JudgmentRecord> data = select(all, id, c);
      rec.n_judgments = data.size();
      if (data.empty()) {
        rec.status = CellStatus::Skipped;
        rec.note = "no judgments";
      } else {
        rec.aggregated = has_repeated_cells(data);
        datasets.push_back(rec.aggregated ? aggregate_cells(data) : std::move(data));
        fitted.push_back(out.size());
      }
      out.push_back(std::move(rec));
    }
  }

  FitConfig cfg = config;
  cfg.aggregate_cells = false;  // datasets are aggregated above where needed
  const std::vector<CellFit> fits = fit_many(datasets, cfg, exec);
  for (std::size_t k = 0; k < fits.size(); ++k) {
    CellFitRecord &rec = out[fitted[k]];
    rec.result = fits[k].result;
    if (!fits[k].ok) {
      rec.status = CellStatus::Failed;
      rec.note = fits[k].error;
      continue;
    }
    rec.status = CellStatus::Ok;
    try {
      rec.loocv_r2 = loocv_r2(datasets[k], cfg, exec).r2;
    } catch (const std::exception &e) {
      rec.note = std::string("loocv: ") + e.what();
    }
  }
  return out;
}

namespace {

const std::vector<std::string> kFitHeader = {
    "agent_id",  "condition_id", "experiment",   "style",         "status",     "n_judgments",
    "aggregated", "b",           "m1",           "m2",            "p1",         "p2",
    "tie_strengths", "tie_priors", "sse",        "mae",           "loocv_r2",   "converged",
    "n_starts",  "best_start",   "iterations",   "warnings",      "note"};

std::string join(const std::vector<std::string> &v, char sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += sep;
    s += v[i];
  }
  return s;
}

std::vector<std::string> split(const std::string &s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

int parse_int(const std::string &s, const std::string &what) {
  const double v = parse_double(s, what);
  if (v != static_cast<int>(v)) throw DataError(what + ": not an integer '" + s + "'");
  return static_cast<int>(v);
}

bool parse_bool(const std::string &s, const std::string &what) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw DataError(what + ": expected true or false, got '" + s + "'");
}

}  // namespace

void write_fits(const fs::path &path, std::span<const CellFitRecord> fits) {
  std::vector<std::vector<std::string>> rows;
  for (const auto &f : fits) {
    const bool has_params = f.status != CellStatus::Skipped;
    auto num = [&](double v) { return has_params ? format_double(v) : std::string(); };
    const Style style = f.condition.style;
    rows.push_back({f.agent_id,
                    f.condition.id(),
                    f.condition.experiment(),
                    style == Style::Direct ? "direct" : "cot",
                    std::string(to_string(f.status)),
                    std::to_string(f.n_judgments),
                    f.aggregated ? "true" : "false",
                    num(f.result.params.b),
                    num(f.result.params.m1),
                    num(f.result.params.m2),
                    num(f.result.params.p1),
                    num(f.result.params.p2),
                    has_params ? (f.result.params.tie_strengths ? "true" : "false") : "",
                    has_params ? (f.result.params.tie_priors ? "true" : "false") : "",
                    num(f.result.sse),
                    num(f.result.mae),
                    detail::opt_double(f.loocv_r2),
                    has_params ? (f.result.converged ? "true" : "false") : "",
                    has_params ? std::to_string(f.result.n_starts_used) : "",
                    has_params ? std::to_string(f.result.best_start_index) : "",
                    has_params ? std::to_string(f.result.iterations) : "",
                    join(f.result.warnings, ';'),
                    f.note});
  }
  write_text(path, detail::table_text(kFitHeader, rows));
}

std::vector<CellFitRecord> read_fits(const fs::path &path) {
  const std::string text = read_text(path, "fit");
  csv::Table t;
  try {
    t = csv::parse(text);
  } catch (const csv::ParseError &e) {
    throw DataError(path.string() + ": " + e.what());
  }
  std::map<std::string, std::size_t> col;
  for (const auto &name : kFitHeader) {
    const auto c = t.column({name});
    if (!c) throw DataError(path.string() + ": missing column '" + name + "'");
    col[name] = *c;
  }
  std::vector<CellFitRecord> out;
  for (const csv::Row &row : t.rows) {
    const std::string at = path.string() + ": line " + std::to_string(row.line);
    if (row.fields.size() != t.header.size()) throw DataError(at + ": wrong field count");
    auto f = [&](const std::string &name) -> const std::string & { return row.fields[col[name]]; };
    auto what = [&](const std::string &name) { return at + ", column '" + name + "'"; };
    CellFitRecord r;
    r.agent_id = f("agent_id");
    const auto cond = Condition::parse(f("condition_id"));
    if (!cond) throw DataError(what("condition_id") + ": unknown '" + f("condition_id") + "'");
    r.condition = *cond;
    const std::string &status = f("status");
    if (status == "ok") {
      r.status = CellStatus::Ok;
    } else if (status == "skipped") {
      r.status = CellStatus::Skipped;
    } else if (status == "failed") {
      r.status = CellStatus::Failed;
    } else {
      throw DataError(what("status") + ": unknown '" + status + "'");
    }
    r.n_judgments = static_cast<std::size_t>(parse_int(f("n_judgments"), what("n_judgments")));
    r.aggregated = parse_bool(f("aggregated"), what("aggregated"));
    if (r.status != CellStatus::Skipped) {
      CbnParams &p = r.result.params;
      p.b = parse_double(f("b"), what("b"));
      p.m1 = parse_double(f("m1"), what("m1"));
      p.m2 = parse_double(f("m2"), what("m2"));
      p.p1 = parse_double(f("p1"), what("p1"));
      p.p2 = parse_double(f("p2"), what("p2"));
      p.tie_strengths = parse_bool(f("tie_strengths"), what("tie_strengths"));
      p.tie_priors = parse_bool(f("tie_priors"), what("tie_priors"));
      r.result.sse = parse_double(f("sse"), what("sse"));
      r.result.mae = parse_double(f("mae"), what("mae"));
      r.result.converged = parse_bool(f("converged"), what("converged"));
      r.result.n_starts_used = parse_int(f("n_starts"), what("n_starts"));
      r.result.best_start_index = parse_int(f("best_start"), what("best_start"));
      r.result.iterations = parse_int(f("iterations"), what("iterations"));
    }
    if (!f("loocv_r2").empty()) r.loocv_r2 = parse_double(f("loocv_r2"), what("loocv_r2"));
    r.result.warnings = split(f("warnings"), ';');
    r.note = f("note");
    out.push_back(std::move(r));
  }
  return out;
}

FitSummary cmd_fit(const fs::path &out, const Filter &filter) {
  const PipelineConfig config = read_manifest_config(out);
  std::vector<JudgmentRecord> records;
  for (auto &r : read_judgments(out / kJudgments)) {
    if (filter.accepts(r)) records.push_back(std::move(r));
  }

  std::vector<std::string> agents;
  for (const auto &r : records) agents.push_back(r.agent_id);
  // Agents that ran but produced nothing still get explicit skipped cells.
  const std::string run_text = read_text(out / kRun, "run");
  const json run = json::parse(run_text, nullptr, false);
  if (run.is_discarded()) throw DataError((out / kRun).string() + ": not JSON");
  for (const auto &id : run.value("agents", json::array())) {
    const auto s = id.get<std::string>();
    if (filter.accepts_agent(s)) agents.push_back(s);
  }
  std::vector<Condition> conditions;
  for (const auto &c : config.conditions) {
    if (filter.accepts_condition(c)) conditions.push_back(c);
  }

  const auto fits = fit_cells(records, agents, conditions, config.fit);
  write_fits(out / kFits, fits);
  FitSummary s;
  s.cells = fits.size();
  for (const auto &f : fits) {
    s.ok += f.status == CellStatus::Ok;
    s.skipped += f.status == CellStatus::Skipped;
    s.failed += f.status == CellStatus::Failed;
  }
  return s;
}

}  // namespace colliderlab::pipeline
