#include "colliderlab/agents.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>
#include <thread>

#include "colliderlab/csv.hpp"
#include "colliderlab/hash.hpp"
#include "colliderlab/rng.hpp"

namespace colliderlab {

using json = nlohmann::json;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Standard normal from two uniform draws of a seeded stream.
double gaussian(std::uint64_t seed) {
  constexpr double kTwoPi = 6.283185307179586;
  const double u1 = 1.0 - static_cast<double>(splitmix64(seed) >> 11) * 0x1.0p-53;  // (0,1]
  const double u2 = static_cast<double>(splitmix64(seed ^ 0x5851f42d4c957f2dULL) >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

/// Normative judgment before any bias terms, 0..100.
double noisy_model_value(const SyntheticAgentSpec &spec, const TaskQuery &task,
                         std::uint64_t cell) {
  double y = eval_query(spec.params, task);
  if (spec.noise_sd > 0.0) {
    const std::uint64_t s =
        stream_seed(stream_seed(spec.seed, static_cast<std::uint64_t>(task_index(task.id))), cell);
    y += spec.noise_sd * gaussian(s);
  }
  return 100.0 * std::clamp(y, 0.0, 1.0);
}

/// The partner query with the same C1/C2 orientation as `task`.
TaskQuery partner(const TaskQuery &task, TaskId partner_id) {
  const TaskQuery &canonical = task_query(partner_id);
  return task == task_query(task.id) ? canonical : mirror(canonical);
}

bool is_letter_or_digit(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

bool in_range(double v) { return v >= 0.0 && v <= 100.0; }

}  // namespace

std::string_view to_string(Backend b) {
  switch (b) {
    case Backend::HttpProvider: return "http-provider";
    case Backend::Replay: return "replay";
    case Backend::Synthetic: return "synthetic";
    case Backend::HumanFile: return "human-file";
  }
  return "?";
}

std::optional<Backend> parse_backend(std::string_view s) {
  for (Backend b : {Backend::HttpProvider, Backend::Replay, Backend::Synthetic,
                    Backend::HumanFile}) {
    if (to_string(b) == s) return b;
  }
  return std::nullopt;
}

void SyntheticAgentSpec::validate() const {
  params.validate();
  auto unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  if (!std::isfinite(noise_sd) || noise_sd < 0.0) {
    throw std::invalid_argument("synthetic agent: noise_sd must be >= 0");
  }
  if (!unit(ea_attenuation) || !unit(mv_injection)) {
    throw std::invalid_argument("synthetic agent: ea_attenuation and mv_injection must be in [0,1]");
  }
  if (kind == SyntheticKind::Normative && (ea_attenuation != 0.0 || mv_injection != 0.0)) {
    throw std::invalid_argument("synthetic agent: a normative agent carries no bias terms");
  }
}

SyntheticAgentSpec SyntheticAgentSpec::normative(const CbnParams &params, double noise_sd,
                                                 std::uint64_t seed) {
  SyntheticAgentSpec s;
  s.params = params;
  s.noise_sd = noise_sd;
  s.seed = seed;
  s.validate();
  return s;
}

SyntheticAgentSpec SyntheticAgentSpec::biased_human(const CbnParams &params, double ea_target,
                                                    double mv_target, double noise_sd,
                                                    std::uint64_t seed) {
  const double model_ea = eval_query(params, task_query(TaskId::IX)) -
                          eval_query(params, task_query(TaskId::XI));
  if (ea_target < 0.0 || model_ea < ea_target) {
    throw std::invalid_argument("biased_human: model EA " + std::to_string(model_ea) +
                                " cannot be attenuated to " + std::to_string(ea_target));
  }
  SyntheticAgentSpec s;
  s.kind = SyntheticKind::BiasedHuman;
  s.params = params;
  s.noise_sd = noise_sd;
  s.ea_attenuation = model_ea > 0.0 ? 1.0 - ea_target / model_ea : 0.0;
  s.mv_injection = mv_target;
  s.seed = seed;
  s.validate();
  return s;
}

double synthetic_judge(const SyntheticAgentSpec &spec, const TaskQuery &task,
                       std::uint64_t cell) {
  double v = noisy_model_value(spec, task, cell);
  if (spec.kind == SyntheticKind::Normative) return v;

  if (task.id == TaskId::IX || task.id == TaskId::XI) {
    const TaskId other = task.id == TaskId::IX ? TaskId::XI : TaskId::IX;
    const double w = noisy_model_value(spec, partner(task, other), cell);
    v += spec.ea_attenuation * ((v + w) / 2.0 - v);
  } else if (task.id == TaskId::IV) {
    v += spec.mv_injection * 50.0;
  } else if (task.id == TaskId::V) {
    v -= spec.mv_injection * 50.0;
  }
  return std::clamp(v, 0.0, 100.0);
}

std::string synthetic_response_text(double value) {
  return std::to_string(std::lround(value));
}

std::chrono::milliseconds RetryPolicy::backoff(int attempt) const {
  const double ms = static_cast<double>(initial_backoff.count()) *
                    std::pow(multiplier, static_cast<double>(std::max(0, attempt - 1)));
  return std::chrono::milliseconds(
      static_cast<std::int64_t>(std::min(ms, static_cast<double>(max_backoff.count()))));
}

void AgentConfig::validate() const {
  const std::string who = "agent '" + id + "'";
  if (id.empty()) throw std::invalid_argument("agent config needs an id");
  if (max_concurrency < 1) throw std::invalid_argument(who + ": max_concurrency must be >= 1");
  if (repeats < 1) throw std::invalid_argument(who + ": repeats must be >= 1");
  if (!std::isfinite(temperature) || temperature < 0.0) {
    throw std::invalid_argument(who + ": temperature must be >= 0");
  }
  if (retry.max_attempts < 1) throw std::invalid_argument(who + ": retry needs >= 1 attempt");
  switch (backend) {
    case Backend::HttpProvider:
      if (model.empty() || endpoint.empty() || credentials_env.empty()) {
        throw std::invalid_argument(who + ": http-provider needs model, endpoint, credentials_env");
      }
      provider_adapter(provider);
      break;
    case Backend::Replay:
      if (replay_file.empty()) throw std::invalid_argument(who + ": replay needs replay_file");
      break;
    case Backend::Synthetic:
      if (!synthetic) throw std::invalid_argument(who + ": synthetic backend needs a spec");
      synthetic->validate();
      break;
    case Backend::HumanFile:
      if (human_file.empty()) throw std::invalid_argument(who + ": human-file needs human_file");
      break;
  }
}

std::string cache_key(std::string_view prompt, std::string_view model, double temperature) {
  char temp[32];
  const auto r = std::to_chars(temp, temp + sizeof temp, temperature);
  std::string framed;
  framed += std::to_string(prompt.size()) + ":" + std::string(prompt);
  framed += std::to_string(model.size()) + ":" + std::string(model);
  framed += std::string(temp, r.ptr);
  return sha256_hex(framed);
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path ResponseCache::path_for(const std::string &key) const {
  return dir_ / key.substr(0, 2) / (key + ".json");
}

std::optional<RawResponse> ResponseCache::get(const std::string &key) const {
  std::lock_guard lock(mutex_);
  std::ifstream in(path_for(key));
  if (!in) return std::nullopt;
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("text")) return std::nullopt;
  RawResponse r;
  r.text = j.at("text").get<std::string>();
  r.model = j.value("model", "");
  r.timestamp = j.value("timestamp", "");
  r.latency_ms = j.value("latency_ms", 0.0);
  r.from_cache = true;
  r.cache_key = key;
  return r;
}

void ResponseCache::put(const std::string &key, const RawResponse &response) {
  std::lock_guard lock(mutex_);
  const auto path = path_for(key);
  std::filesystem::create_directories(path.parent_path());
  const json j = {{"text", response.text},
                  {"model", response.model},
                  {"timestamp", response.timestamp},
                  {"latency_ms", response.latency_ms}};
  // Write-then-rename so an interrupted run never leaves a torn entry.
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << j.dump() << '\n';
    if (!out) throw std::runtime_error("cannot write cache entry " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::size_t ResponseCache::size() const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto &e : std::filesystem::recursive_directory_iterator(dir_)) {
    n += e.is_regular_file() && e.path().extension() == ".json";
  }
  return n;
}

const ProviderAdapter &provider_adapter(std::string_view provider) {
  static const ProviderAdapter openai{
      "/v1/chat/completions",
      [](const std::string &secret) {
        return HttpHeaders{{"Authorization", "Bearer " + secret}};
      },
      [](const AgentConfig &c, const std::string &prompt) {
        json j = {{"model", c.model},
                  {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                  {"temperature", c.temperature}};
        if (c.reasoning_budget) j["reasoning_effort"] = *c.reasoning_budget;
        return j.dump();
      },
      [](const std::string &reply) {
        const json j = json::parse(reply, nullptr, false);
        if (j.is_discarded()) throw ProviderError("openai: reply is not JSON");
        try {
          return j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception &) {
          throw ProviderError("openai: reply has no choices[0].message.content");
        }
      }};
  static const ProviderAdapter anthropic{
      "/v1/messages",
      [](const std::string &secret) {
        return HttpHeaders{{"x-api-key", secret}, {"anthropic-version", "2023-06-01"}};
      },
      [](const AgentConfig &c, const std::string &prompt) {
        json j = {{"model", c.model},
                  {"max_tokens", 4096},
                  {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                  {"temperature", c.temperature}};
        if (c.reasoning_budget) {
          int budget = 0;
          const auto &b = *c.reasoning_budget;
          const auto [p, ec] = std::from_chars(b.data(), b.data() + b.size(), budget);
          if (ec != std::errc{} || p != b.data() + b.size() || budget <= 0) {
            throw std::invalid_argument("anthropic: reasoning_budget must be a token count");
          }
          j["thinking"] = {{"type", "enabled"}, {"budget_tokens", budget}};
          j["max_tokens"] = budget + 4096;
        }
        return j.dump();
      },
      [](const std::string &reply) {
        const json j = json::parse(reply, nullptr, false);
        if (j.is_discarded()) throw ProviderError("anthropic: reply is not JSON");
        std::string text;
        if (j.contains("content") && j["content"].is_array()) {
          for (const auto &block : j["content"]) {
            if (block.value("type", "") == "text") text += block.value("text", "");
          }
        }
        if (text.empty()) throw ProviderError("anthropic: reply has no text content");
        return text;
      }};
  if (provider == "openai") return openai;
  if (provider == "anthropic") return anthropic;
  throw std::invalid_argument("unknown provider adapter '" + std::string(provider) + "'");
}

ReplayStore ReplayStore::load(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw ProviderError("cannot read replay store " + path);
  ReplayStore store;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("agent_id") || !j.contains("prompt_hash") ||
        !j.contains("text")) {
      throw ProviderError(path + ":" + std::to_string(n) +
                          ": expected agent_id, prompt_hash and text");
    }
    store.add(j["agent_id"].get<std::string>(), j["prompt_hash"].get<std::string>(),
              j["text"].get<std::string>());
  }
  return store;
}

void ReplayStore::add(const std::string &agent_id, const std::string &prompt_hash,
                      std::string text) {
  responses_[{agent_id, prompt_hash}] = std::move(text);
}

std::optional<std::string> ReplayStore::find(const std::string &agent_id,
                                             const std::string &prompt_hash) const {
  const auto it = responses_.find({agent_id, prompt_hash});
  if (it == responses_.end()) return std::nullopt;
  return it->second;
}

AgentClient::AgentClient(AgentConfig config, std::shared_ptr<ResponseCache> cache, Hooks hooks)
    : config_(std::move(config)), cache_(std::move(cache)), hooks_(std::move(hooks)) {
  config_.validate();
  if (!hooks_.post) hooks_.post = default_http_post();
  if (!hooks_.sleep) hooks_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  if (!hooks_.now) hooks_.now = utc_now;
  if (config_.backend == Backend::Replay) replay_ = ReplayStore::load(config_.replay_file);
}

RawResponse AgentClient::query(const PromptInstance &prompt) {
  const bool use_cache = config_.cache && cache_ != nullptr;
  const std::string key = cache_key(prompt.text, config_.model, config_.temperature);
  if (use_cache) {
    if (auto hit = cache_->get(key)) return *hit;
  }
  RawResponse r = query_backend(prompt);
  r.cache_key = key;
  if (use_cache) cache_->put(key, r);
  return r;
}

RawResponse AgentClient::query_backend(const PromptInstance &prompt) {
  switch (config_.backend) {
    case Backend::HttpProvider:
      return query_http(prompt.text);
    case Backend::Replay: {
      const std::string hash = sha256_hex(prompt.text);
      auto text = replay_->find(config_.id, hash);
      if (!text) {
        throw ReplayMiss("replay store has no response of '" + config_.id + "' to prompt " +
                         hash);
      }
      return RawResponse{std::move(*text), config_.model, hooks_.now(), 0.0, false, {}};
    }
    case Backend::Synthetic: {
      const std::uint64_t cell =
          stream_seed(fnv1a(prompt.domain), fnv1a(prompt.condition.id()));
      const double v = synthetic_judge(*config_.synthetic, prompt.task, cell);
      return RawResponse{synthetic_response_text(v), config_.model, hooks_.now(), 0.0, false, {}};
    }
    case Backend::HumanFile:
      break;
  }
  throw ProviderError("agent '" + config_.id + "' reads judgments from a file, not prompts");
}

RawResponse AgentClient::query_http(const std::string &text) {
  const ProviderAdapter &adapter = provider_adapter(config_.provider);
  const char *secret = std::getenv(config_.credentials_env.c_str());
  if (secret == nullptr || *secret == '\0') {
    throw AuthError("environment variable " + config_.credentials_env + " is not set");
  }
  const HttpHeaders headers = adapter.headers(secret);
  const std::string body = adapter.body(config_, text);

  int last_status = 0;
  std::string last_error;
  for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
    const auto start = std::chrono::steady_clock::now();
    {
      std::lock_guard lock(count_mutex_);
      ++network_calls_;
    }
    const HttpReply reply = hooks_.post(config_.endpoint, adapter.path, headers, body);
    const double latency =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    last_status = reply.status;
    if (reply.status >= 200 && reply.status < 300) {
      return RawResponse{adapter.extract(reply.body), config_.model, hooks_.now(), latency,
                         false, {}};
    }
    if (reply.status == 401 || reply.status == 403) {
      throw AuthError("agent '" + config_.id + "': HTTP " + std::to_string(reply.status) +
                      " from " + config_.endpoint);
    }
    const bool retryable = reply.status == 0 || reply.status == 429 || reply.status >= 500;
    if (!retryable) {
      throw ProviderError("agent '" + config_.id + "': HTTP " + std::to_string(reply.status) +
                          ": " + reply.body.substr(0, 200));
    }
    last_error = reply.status == 0 ? reply.error : "HTTP " + std::to_string(reply.status);
    if (attempt == config_.retry.max_attempts) break;
    auto wait = config_.retry.backoff(attempt);
    if (reply.retry_after_s) {
      wait = std::max(wait, std::chrono::milliseconds(
                                static_cast<std::int64_t>(*reply.retry_after_s * 1000.0)));
    }
    hooks_.sleep(wait);
  }
  throw TransportError("agent '" + config_.id + "': giving up after " +
                           std::to_string(config_.retry.max_attempts) +
                           " attempts (" + last_error + ")",
                       config_.retry.max_attempts, last_status);
}

std::vector<QueryOutcome> query_all(AgentClient &client, std::span<const PromptInstance> prompts,
                                    std::optional<std::size_t> limit) {
  const std::size_t n = std::min(prompts.size(), limit.value_or(prompts.size()));
  std::vector<QueryOutcome> out(prompts.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        out[i].response = client.query(prompts[i]);
      } catch (...) {
        out[i].error = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(client.config().max_concurrency,
                                                static_cast<int>(n)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return out;
}

std::vector<double> standalone_numbers(std::string_view text) {
  std::vector<double> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!std::isdigit(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t start = i;
    bool negative = false;
    if (start > 0 && text[start - 1] == '-') {
      negative = start < 2 || !is_letter_or_digit(text[start - 2]);
      if (negative) --start;
    }
    std::size_t end = i;
    while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
    if (end + 1 < text.size() && text[end] == '.' &&
        std::isdigit(static_cast<unsigned char>(text[end + 1]))) {
      ++end;
      while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
    }
    const std::size_t before = start;
    const bool glued_before =
        before > 0 && (is_letter_or_digit(text[before - 1]) || text[before - 1] == '.' ||
                       text[before - 1] == '/');
    const bool glued_after = end < text.size() && is_letter_or_digit(text[end]);
    if (!glued_before && !glued_after) {
      double v = 0.0;
      const char *first = text.data() + i;
      std::from_chars(first, text.data() + end, v);
      out.push_back(negative ? -v : v);
    }
    i = end;
  }
  return out;
}

ParsedJudgment parse_judgment(std::string_view text, Style style, std::string response_ref) {
  ParsedJudgment p;
  p.response_ref = std::move(response_ref);
  auto finish = [&](double v, std::string rule) {
    p.clamped = !in_range(v);
    p.value = std::clamp(v, 0.0, 100.0);
    p.rule = std::move(rule);
    return p;
  };

  if (style == Style::Direct) {
    const auto nums = standalone_numbers(text);
    for (double v : nums) {
      if (in_range(v)) return finish(v, "direct:first-in-range");
    }
    if (!nums.empty()) return finish(nums.front(), "direct:first-clamped");
  } else {
    std::optional<double> last;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t nl = std::min(text.find('\n', pos), text.size());
      const auto nums = standalone_numbers(text.substr(pos, nl - pos));
      if (!nums.empty()) last = nums.back();
      pos = nl + 1;
    }
    if (last) return finish(*last, "cot:last-number-last-line");
  }
  p.rule = "parse-failure";
  return p;
}

std::vector<JudgmentRecord> ingest_human_baseline_text(std::string_view text,
                                                       std::string_view source) {
  const std::string src(source);
  csv::Table t;
  try {
    t = csv::parse(text);
  } catch (const csv::ParseError &e) {
    throw IngestError(src + ": " + e.what(), 0, "");
  }
  const auto domain_col = t.column({"domain", "story", "cover_story"});
  const auto task_col = t.column({"task_id", "task", "inference_task"});
  const auto value_col =
      t.column({"raw_value", "value", "response", "rating", "judgment", "probability"});
  const auto cond_col = t.column({"condition_id", "condition"});
  const auto hash_col = t.column({"prompt_hash"});
  const auto ref_col = t.column({"response_ref", "subject", "participant", "subject_id"});
  for (auto [col, name] : {std::pair{domain_col, "domain"}, std::pair{task_col, "task_id"},
                           std::pair{value_col, "raw_value"}}) {
    if (!col) throw IngestError(src + ": line 1: missing column '" + name + "'", 1, name);
  }

  std::vector<JudgmentRecord> out;
  out.reserve(t.rows.size());
  for (const csv::Row &row : t.rows) {
    const std::string at = src + ": line " + std::to_string(row.line);
    if (row.fields.size() != t.header.size()) {
      throw IngestError(at + ": expected " + std::to_string(t.header.size()) + " fields, got " +
                            std::to_string(row.fields.size()),
                        row.line, "");
    }
    auto field = [&](std::size_t c) { return row.fields[c]; };

    std::string domain = field(*domain_col);
    std::transform(domain.begin(), domain.end(), domain.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (std::find(kStoryDomains.begin(), kStoryDomains.end(), domain) == kStoryDomains.end()) {
      throw IngestError(at + ", column 'domain': unknown domain '" + field(*domain_col) + "'",
                        row.line, "domain");
    }

    const std::string task_text = field(*task_col);
    std::optional<TaskId> task = parse_task_id(task_text);
    if (!task) {
      int k = 0;
      const auto [p, ec] = std::from_chars(task_text.data(), task_text.data() + task_text.size(), k);
      if (ec == std::errc{} && p == task_text.data() + task_text.size() && k >= 1 &&
          k <= kTaskCount) {
        task = task_from_index(k - 1);
      }
    }
    if (!task) {
      throw IngestError(at + ", column 'task_id': unknown task '" + task_text + "'", row.line,
                        "task_id");
    }

    const std::string value_text = field(*value_col);
    double value = 0.0;
    const auto [vp, vec] =
        std::from_chars(value_text.data(), value_text.data() + value_text.size(), value);
    if (vec != std::errc{} || vp != value_text.data() + value_text.size() ||
        !std::isfinite(value)) {
      throw IngestError(at + ", column 'raw_value': not a number '" + value_text + "'", row.line,
                        "raw_value");
    }
    if (!in_range(value)) {
      throw IngestError(at + ", column 'raw_value': " + value_text + " outside [0,100]",
                        row.line, "raw_value");
    }

    Condition condition;
    if (cond_col && !field(*cond_col).empty()) {
      const auto c = Condition::parse(field(*cond_col));
      if (!c) {
        throw IngestError(at + ", column 'condition_id': unknown condition '" +
                              field(*cond_col) + "'",
                          row.line, "condition_id");
      }
      condition = *c;
    }
    JudgmentRecord r = JudgmentRecord::make("human", condition, domain, *task, value);
    if (hash_col) r.prompt_hash = field(*hash_col);
    r.response_ref = ref_col ? field(*ref_col) : src + ":" + std::to_string(row.line);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<JudgmentRecord> ingest_human_baseline(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot read " + path, 0, "");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ingest_human_baseline_text(ss.str(), path);
}

}  // namespace colliderlab
