#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "colliderlab/csv.hpp"
#include "colliderlab/pipeline.hpp"

namespace colliderlab::pipeline {

using json = nlohmann::ordered_json;

ExitCode exit_code_for(std::exception_ptr error) {
  if (!error) return ExitCode::Success;
  try {
    std::rethrow_exception(error);
  } catch (const UsageError &) {
    return ExitCode::Usage;
  } catch (const std::invalid_argument &) {
    return ExitCode::Usage;
  } catch (const ProviderError &) {
    return ExitCode::Upstream;
  } catch (...) {
    return ExitCode::Data;
  }
}

std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(std::string_view text, std::string_view what) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || p != text.data() + text.size() || !std::isfinite(v)) {
    throw DataError(std::string(what) + ": not a number '" + std::string(text) + "'");
  }
  return v;
}

// ---- Filter

namespace {

std::optional<Condition> parse_condition_expr(std::string value) {
  std::replace(value.begin(), value.end(), '/', '-');
  return Condition::parse(value);
}

template <typename T>
bool accepts_in(const std::vector<T> &allowed, const auto &v) {
  return allowed.empty() || std::find(allowed.begin(), allowed.end(), v) != allowed.end();
}

}  // namespace

Filter Filter::parse(std::span<const std::string> expressions) {
  Filter f;
  for (const std::string &e : expressions) {
    const auto eq = e.find('=');
    if (eq == std::string::npos) {
      throw UsageError("filter '" + e + "' is not key=value");
    }
    const std::string key = e.substr(0, eq);
    const std::string value = e.substr(eq + 1);
    if (key == "condition") {
      const auto c = parse_condition_expr(value);
      if (!c) throw UsageError("filter: unknown condition '" + value + "'");
      f.conditions.push_back(*c);
    } else if (key == "agent") {
      f.agents.push_back(value);
    } else if (key == "task") {
      const auto t = parse_task_id(value);
      if (!t) throw UsageError("filter: unknown task '" + value + "'");
      f.tasks.push_back(*t);
    } else if (key == "domain") {
      f.domains.push_back(value);
    } else {
      throw UsageError("filter: unknown key '" + key + "' (condition, agent, task, domain)");
    }
  }
  return f;
}

bool Filter::accepts_condition(const Condition &c) const { return accepts_in(conditions, c); }
bool Filter::accepts_agent(std::string_view id) const { return accepts_in(agents, id); }
bool Filter::accepts_task(TaskId t) const { return accepts_in(tasks, t); }
bool Filter::accepts_domain(std::string_view d) const { return accepts_in(domains, d); }

bool Filter::accepts(const PromptInstance &p) const {
  return accepts_condition(p.condition) && accepts_task(p.task.id) && accepts_domain(p.domain);
}

bool Filter::accepts(const JudgmentRecord &r) const {
  return accepts_agent(r.agent_id) && accepts_condition(r.condition) && accepts_task(r.task) &&
         accepts_domain(r.domain);
}

// ---- config <-> json

namespace {

void check_keys(const json &j, std::initializer_list<std::string_view> allowed,
                const std::string &where) {
  if (!j.is_object()) throw UsageError(where + ": expected an object");
  for (const auto &[k, v] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
      throw UsageError(where + ": unknown key '" + k + "'");
    }
  }
}

template <typename T>
void read_opt(const json &j, const char *key, T &dst, const std::string &where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception &) {
    throw UsageError(where + "." + key + ": wrong type");
  }
}

std::string_view noise_name(NoiseSource s) {
  return s == NoiseSource::Lorem ? "lorem" : "cross-domain";
}

NoiseSource parse_noise(const std::string &s, const std::string &where) {
  if (s == "lorem") return NoiseSource::Lorem;
  if (s == "cross-domain") return NoiseSource::CrossDomain;
  throw UsageError(where + ": noise source must be 'lorem' or 'cross-domain'");
}

json params_json(const CbnParams &p) {
  return json{{"b", p.b},   {"m1", p.m1}, {"m2", p.m2}, {"p1", p.p1},
              {"p2", p.p2}, {"tie_strengths", p.tie_strengths}, {"tie_priors", p.tie_priors}};
}

CbnParams params_from(const json &j, const std::string &where) {
  check_keys(j, {"b", "m1", "m2", "p1", "p2", "tie_strengths", "tie_priors"}, where);
  CbnParams p;
  read_opt(j, "b", p.b, where);
  read_opt(j, "m1", p.m1, where);
  read_opt(j, "m2", p.m2, where);
  read_opt(j, "p1", p.p1, where);
  p.p2 = p.p1;
  read_opt(j, "p2", p.p2, where);
  read_opt(j, "tie_strengths", p.tie_strengths, where);
  read_opt(j, "tie_priors", p.tie_priors, where);
  try {
    p.validate();
  } catch (const std::exception &e) {
    throw UsageError(where + ": " + e.what());
  }
  return p;
}

json synthetic_json(const SyntheticAgentSpec &s) {
  return json{{"kind", s.kind == SyntheticKind::Normative ? "normative" : "biased-human"},
              {"params", params_json(s.params)},
              {"noise_sd", s.noise_sd},
              {"ea_attenuation", s.ea_attenuation},
              {"mv_injection", s.mv_injection},
              {"seed", s.seed}};
}

SyntheticAgentSpec synthetic_from(const json &j, const std::string &where) {
  check_keys(j,
             {"kind", "params", "noise_sd", "ea_attenuation", "mv_injection", "ea_target",
              "mv_target", "seed"},
             where);
  std::string kind = "normative";
  read_opt(j, "kind", kind, where);
  const CbnParams params =
      j.contains("params") ? params_from(j.at("params"), where + ".params") : default_synthetic_params();
  double noise = 0.0;
  std::uint64_t seed = 0;
  read_opt(j, "noise_sd", noise, where);
  read_opt(j, "seed", seed, where);
  try {
    if (kind == "normative") {
      if (j.contains("ea_target") || j.contains("mv_target")) {
        throw UsageError(where + ": targets apply only to kind 'biased-human'");
      }
      return SyntheticAgentSpec::normative(params, noise, seed);
    }
    if (kind != "biased-human") {
      throw UsageError(where + ".kind: expected 'normative' or 'biased-human'");
    }
    SyntheticAgentSpec s;
    if (j.contains("ea_target") || j.contains("mv_target")) {
      double ea = 0.0;
      double mv = 0.0;
      read_opt(j, "ea_target", ea, where);
      read_opt(j, "mv_target", mv, where);
      s = SyntheticAgentSpec::biased_human(params, ea, mv, noise, seed);
    } else {
      s.kind = SyntheticKind::BiasedHuman;
      s.params = params;
      s.noise_sd = noise;
      s.seed = seed;
      read_opt(j, "ea_attenuation", s.ea_attenuation, where);
      read_opt(j, "mv_injection", s.mv_injection, where);
    }
    s.validate();
    return s;
  } catch (const std::invalid_argument &e) {
    throw UsageError(where + ": " + e.what());
  }
}

json agent_json(const AgentConfig &a) {
  json j{{"id", a.id}, {"backend", std::string(to_string(a.backend))}};
  switch (a.backend) {
    case Backend::HttpProvider:
      j["provider"] = a.provider;
      j["model"] = a.model;
      j["endpoint"] = a.endpoint;
      j["credentials_env"] = a.credentials_env;
      j["temperature"] = a.temperature;
      if (a.reasoning_budget) j["reasoning_budget"] = *a.reasoning_budget;
      j["max_concurrency"] = a.max_concurrency;
      j["retry"] = json{{"max_attempts", a.retry.max_attempts},
                        {"initial_backoff_ms", a.retry.initial_backoff.count()},
                        {"multiplier", a.retry.multiplier},
                        {"max_backoff_ms", a.retry.max_backoff.count()}};
      j["cache"] = a.cache;
      j["repeats"] = a.repeats;
      break;
    case Backend::Replay:
      j["model"] = a.model;
      j["replay_file"] = a.replay_file;
      break;
    case Backend::Synthetic:
      j["model"] = a.model;
      if (a.synthetic) j["synthetic"] = synthetic_json(*a.synthetic);
      break;
    case Backend::HumanFile:
      j["human_file"] = a.human_file;
      break;
  }
  return j;
}

AgentConfig agent_from(const json &j, const std::string &where) {
  check_keys(j,
             {"id", "backend", "provider", "model", "endpoint", "credentials_env", "temperature",
              "reasoning_budget", "max_concurrency", "retry", "cache", "repeats", "replay_file",
              "human_file", "synthetic"},
             where);
  AgentConfig a;
  read_opt(j, "id", a.id, where);
  if (a.id.empty()) throw UsageError(where + ": agent id is required");
  for (char c : a.id) {
    const auto u = static_cast<unsigned char>(c);
    if (!(std::isalnum(u) || c == '-' || c == '_' || c == '.')) {
      throw UsageError(where + ": agent id '" + a.id + "' may hold only [A-Za-z0-9._-]");
    }
  }
  std::string backend = "synthetic";
  read_opt(j, "backend", backend, where);
  const auto b = parse_backend(backend);
  if (!b) throw UsageError(where + ".backend: unknown backend '" + backend + "'");
  a.backend = *b;
  read_opt(j, "provider", a.provider, where);
  read_opt(j, "model", a.model, where);
  read_opt(j, "endpoint", a.endpoint, where);
  read_opt(j, "credentials_env", a.credentials_env, where);
  read_opt(j, "temperature", a.temperature, where);
  if (j.contains("reasoning_budget")) {
    const json &rb = j.at("reasoning_budget");
    a.reasoning_budget = rb.is_string() ? rb.get<std::string>() : rb.dump();
  }
  read_opt(j, "max_concurrency", a.max_concurrency, where);
  read_opt(j, "cache", a.cache, where);
  read_opt(j, "repeats", a.repeats, where);
  read_opt(j, "replay_file", a.replay_file, where);
  read_opt(j, "human_file", a.human_file, where);
  if (j.contains("retry")) {
    const json &r = j.at("retry");
    const std::string rw = where + ".retry";
    check_keys(r, {"max_attempts", "initial_backoff_ms", "multiplier", "max_backoff_ms"}, rw);
    read_opt(r, "max_attempts", a.retry.max_attempts, rw);
    read_opt(r, "multiplier", a.retry.multiplier, rw);
    long long ms = a.retry.initial_backoff.count();
    read_opt(r, "initial_backoff_ms", ms, rw);
    a.retry.initial_backoff = std::chrono::milliseconds(ms);
    ms = a.retry.max_backoff.count();
    read_opt(r, "max_backoff_ms", ms, rw);
    a.retry.max_backoff = std::chrono::milliseconds(ms);
  }
  if (j.contains("synthetic")) a.synthetic = synthetic_from(j.at("synthetic"), where + ".synthetic");
  try {
    a.validate();
  } catch (const std::invalid_argument &e) {
    throw UsageError(where + ": " + e.what());
  }
  return a;
}

}  // namespace

CbnParams default_synthetic_params() {
  CbnParams p;
  p.b = 0.1;
  p.m1 = 0.7;
  p.m2 = 0.7;
  p.p1 = 0.5;
  p.p2 = 0.5;
  return p;
}

std::vector<AgentConfig> PipelineConfig::default_agents() {
  AgentConfig normative;
  normative.id = "synthetic-normative";
  normative.backend = Backend::Synthetic;
  normative.model = "normative";
  normative.synthetic = SyntheticAgentSpec::normative(default_synthetic_params());

  AgentConfig biased;
  biased.id = "synthetic-biased";
  biased.backend = Backend::Synthetic;
  biased.model = "biased-human";
  biased.synthetic = SyntheticAgentSpec::biased_human(default_synthetic_params(), 0.1, 0.15);
  return {normative, biased};
}

PipelineConfig PipelineConfig::from_json_text(std::string_view text, std::string_view source) {
  const std::string where(source);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error &e) {
    throw UsageError(where + ": " + e.what());
  }
  check_keys(j,
             {"seed", "domains", "conditions", "render", "agents", "fit", "report", "data_dir",
              "cache_dir"},
             where);
  PipelineConfig c;
  read_opt(j, "seed", c.seed, where);
  read_opt(j, "domains", c.domains, where);
  read_opt(j, "data_dir", c.data_dir, where);
  read_opt(j, "cache_dir", c.cache_dir, where);
  if (j.contains("conditions")) {
    std::vector<std::string> ids;
    read_opt(j, "conditions", ids, where);
    c.conditions.clear();
    for (const auto &id : ids) {
      const auto cond = parse_condition_expr(id);
      if (!cond) throw UsageError(where + ".conditions: unknown condition '" + id + "'");
      c.conditions.push_back(*cond);
    }
  }
  if (j.contains("render")) {
    const json &r = j.at("render");
    const std::string rw = where + ".render";
    check_keys(r, {"noise_sentences", "rw17_noise", "abstract_noise"}, rw);
    read_opt(r, "noise_sentences", c.render.noise_sentences, rw);
    if (c.render.noise_sentences < 0) throw UsageError(rw + ".noise_sentences must be >= 0");
    std::string s;
    if (r.contains("rw17_noise")) {
      read_opt(r, "rw17_noise", s, rw);
      c.render.rw17_noise = parse_noise(s, rw + ".rw17_noise");
    }
    if (r.contains("abstract_noise")) {
      read_opt(r, "abstract_noise", s, rw);
      c.render.abstract_noise = parse_noise(s, rw + ".abstract_noise");
    }
  }
  if (j.contains("agents")) {
    const json &agents = j.at("agents");
    if (!agents.is_array()) throw UsageError(where + ".agents: expected an array");
    c.agents.clear();
    std::set<std::string> seen;
    for (std::size_t i = 0; i < agents.size(); ++i) {
      c.agents.push_back(agent_from(agents[i], where + ".agents[" + std::to_string(i) + "]"));
      if (!seen.insert(c.agents.back().id).second) {
        throw UsageError(where + ": duplicate agent id '" + c.agents.back().id + "'");
      }
    }
  }
  if (j.contains("fit")) {
    const json &f = j.at("fit");
    const std::string fw = where + ".fit";
    check_keys(f,
               {"n_starts", "start_seed", "max_iterations", "convergence_tol", "tie_strengths",
                "tie_priors"},
               fw);
    read_opt(f, "n_starts", c.fit.n_starts, fw);
    read_opt(f, "start_seed", c.fit.start_seed, fw);
    read_opt(f, "max_iterations", c.fit.max_iterations, fw);
    read_opt(f, "convergence_tol", c.fit.convergence_tol, fw);
    read_opt(f, "tie_strengths", c.fit.tie_strengths, fw);
    read_opt(f, "tie_priors", c.fit.tie_priors, fw);
    try {
      c.fit.validate();
    } catch (const std::invalid_argument &e) {
      throw UsageError(fw + ": " + e.what());
    }
  }
  if (j.contains("report")) {
    const json &r = j.at("report");
    const std::string rw = where + ".report";
    check_keys(r, {"n_boot", "boot_seed"}, rw);
    read_opt(r, "n_boot", c.report.n_boot, rw);
    read_opt(r, "boot_seed", c.report.boot_seed, rw);
    if (c.report.n_boot < 1) throw UsageError(rw + ".n_boot must be >= 1");
  }
  for (const auto &d : c.domains) {
    if (std::find(kStoryDomains.begin(), kStoryDomains.end(), d) == kStoryDomains.end()) {
      throw UsageError(where + ".domains: unknown domain '" + d + "'");
    }
  }
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str(), path.string());
}

std::string PipelineConfig::to_json_text() const {
  json j;
  j["seed"] = seed;
  j["domains"] = domains;
  json conds = json::array();
  for (const auto &c : conditions) conds.push_back(c.id());
  j["conditions"] = conds;
  j["render"] = json{{"noise_sentences", render.noise_sentences},
                     {"rw17_noise", std::string(noise_name(render.rw17_noise))},
                     {"abstract_noise", std::string(noise_name(render.abstract_noise))}};
  json agent_list = json::array();
  for (const auto &a : agents) agent_list.push_back(agent_json(a));
  j["agents"] = agent_list;
  j["fit"] = json{{"n_starts", fit.n_starts},
                  {"start_seed", fit.start_seed},
                  {"max_iterations", fit.max_iterations},
                  {"convergence_tol", fit.convergence_tol},
                  {"tie_strengths", fit.tie_strengths},
                  {"tie_priors", fit.tie_priors}};
  j["report"] = json{{"n_boot", report.n_boot}, {"boot_seed", report.boot_seed}};
  if (!data_dir.empty()) j["data_dir"] = data_dir;
  if (!cache_dir.empty()) j["cache_dir"] = cache_dir;
  return j.dump(2);
}

}  // namespace colliderlab::pipeline
