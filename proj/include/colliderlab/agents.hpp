#pragma once

// Judgment sources: remote chat providers, replayed responses, synthetic
// reasoners with known parameters, and human-baseline files. Every backend
// answers a PromptInstance with raw text; parse_judgment turns text into a
// value on the 0..100 scale.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "colliderlab/collider.hpp"
#include "colliderlab/judgment.hpp"
#include "colliderlab/promptgen.hpp"

namespace colliderlab {

/// Any failure attributable to a judgment source.
class ProviderError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Rejected credentials or a missing credential variable. Never retried.
class AuthError : public ProviderError {
public:
  using ProviderError::ProviderError;
};

/// Transport failures or server errors that outlived the retry policy.
class TransportError : public ProviderError {
public:
  TransportError(const std::string &what, int attempts, int last_status)
      : ProviderError(what), attempts_(attempts), last_status_(last_status) {}
  int attempts() const { return attempts_; }
  int last_status() const { return last_status_; }  ///< 0 without an HTTP reply

private:
  int attempts_;
  int last_status_;
};

/// Replay store holds no response for a prompt.
class ReplayMiss : public ProviderError {
public:
  using ProviderError::ProviderError;
};

/// Malformed human-baseline file. The message carries the line and column.
class IngestError : public std::runtime_error {
public:
  IngestError(const std::string &what, std::size_t line, std::string column)
      : std::runtime_error(what), line_(line), column_(std::move(column)) {}
  std::size_t line() const { return line_; }
  const std::string &column() const { return column_; }

private:
  std::size_t line_;
  std::string column_;
};

enum class Backend : std::uint8_t { HttpProvider, Replay, Synthetic, HumanFile };
std::string_view to_string(Backend b);
std::optional<Backend> parse_backend(std::string_view s);

enum class SyntheticKind : std::uint8_t { Normative, BiasedHuman };

struct SyntheticAgentSpec {
  SyntheticKind kind = SyntheticKind::Normative;
  CbnParams params;
  double noise_sd = 0.0;        ///< on the 0..1 scale
  double ea_attenuation = 0.0;  ///< 1 collapses explaining away
  double mv_injection = 0.0;    ///< separation of the independence tasks, 0..1 scale
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on out-of-range fields or a normative
  /// spec with nonzero bias terms.
  void validate() const;

  static SyntheticAgentSpec normative(const CbnParams &params, double noise_sd = 0.0,
                                      std::uint64_t seed = 0);
  /// Chooses ea_attenuation so the noiseless agent shows `ea_target` and sets
  /// mv_injection to `mv_target`. Throws if the model's own EA is below the
  /// target, since attenuation cannot raise it.
  static SyntheticAgentSpec biased_human(const CbnParams &params, double ea_target,
                                         double mv_target, double noise_sd = 0.0,
                                         std::uint64_t seed = 0);
};

/// Judgment of one query on the 0..100 scale. `cell` separates the noise
/// draws of otherwise identical queries (different domains or conditions).
double synthetic_judge(const SyntheticAgentSpec &spec, const TaskQuery &task,
                       std::uint64_t cell = 0);

/// Nearest integer with ties away from zero, as text.
std::string synthetic_response_text(double value);

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{8000};

  std::chrono::milliseconds backoff(int attempt) const;  ///< attempt is 1-based
};

struct AgentConfig {
  std::string id;  ///< agent_id written to judgment records
  Backend backend = Backend::Synthetic;
  std::string provider = "openai";  ///< adapter: "openai" or "anthropic"
  std::string model;
  std::string endpoint;         ///< scheme://host[:port]
  std::string credentials_env;  ///< name of the variable holding the key
  double temperature = 0.0;
  std::optional<std::string> reasoning_budget;
  int max_concurrency = 1;
  RetryPolicy retry;
  bool cache = true;
  int repeats = 1;
  std::string replay_file;  ///< responses store for Backend::Replay
  std::string human_file;   ///< CSV for Backend::HumanFile
  std::optional<SyntheticAgentSpec> synthetic;

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

struct RawResponse {
  std::string text;
  std::string model;
  std::string timestamp;  ///< UTC, ISO 8601
  double latency_ms = 0.0;
  bool from_cache = false;
  std::string cache_key;
};

/// SHA-256 over prompt text, model and temperature, unambiguously framed.
std::string cache_key(std::string_view prompt, std::string_view model, double temperature);

/// On-disk response cache, one JSON file per key. Writes are serialized.
class ResponseCache {
public:
  explicit ResponseCache(std::filesystem::path dir);
  std::optional<RawResponse> get(const std::string &key) const;
  void put(const std::string &key, const RawResponse &response);
  std::size_t size() const;

private:
  std::filesystem::path path_for(const std::string &key) const;
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
};

struct HttpReply {
  int status = 0;  ///< 0 when no reply arrived
  std::string body;
  std::string error;  ///< transport error text when status is 0
  std::optional<double> retry_after_s;
};

using HttpHeaders = std::multimap<std::string, std::string>;
using HttpPost = std::function<HttpReply(const std::string &endpoint, const std::string &path,
                                         const HttpHeaders &headers, const std::string &body)>;

/// POST through cpp-httplib; https endpoints use OpenSSL.
HttpPost default_http_post(std::chrono::seconds timeout = std::chrono::seconds(120));

/// Request shape and reply extraction for one provider family.
struct ProviderAdapter {
  std::string path;
  std::function<HttpHeaders(const std::string &secret)> headers;
  std::function<std::string(const AgentConfig &, const std::string &prompt)> body;
  /// Throws ProviderError if the reply lacks text.
  std::function<std::string(const std::string &reply)> extract;
};

const ProviderAdapter &provider_adapter(std::string_view provider);

/// Responses keyed by (agent id, prompt hash), as written by the run stage.
class ReplayStore {
public:
  static ReplayStore load(const std::string &path);
  void add(const std::string &agent_id, const std::string &prompt_hash, std::string text);
  std::optional<std::string> find(const std::string &agent_id,
                                  const std::string &prompt_hash) const;
  std::size_t size() const { return responses_.size(); }

private:
  std::map<std::pair<std::string, std::string>, std::string> responses_;
};

class AgentClient {
public:
  struct Hooks {
    HttpPost post;
    std::function<void(std::chrono::milliseconds)> sleep;
    std::function<std::string()> now;  ///< timestamp source
  };

  AgentClient(AgentConfig config, std::shared_ptr<ResponseCache> cache = nullptr,
              Hooks hooks = {});

  const AgentConfig &config() const { return config_; }

  /// One response for `prompt`. The cache is consulted first when enabled.
  RawResponse query(const PromptInstance &prompt);

  int network_calls() const { return network_calls_; }

private:
  RawResponse query_http(const std::string &text);
  RawResponse query_backend(const PromptInstance &prompt);

  AgentConfig config_;
  std::shared_ptr<ResponseCache> cache_;
  Hooks hooks_;
  std::optional<ReplayStore> replay_;
  std::mutex count_mutex_;
  int network_calls_ = 0;
};

struct QueryOutcome {
  std::optional<RawResponse> response;
  std::exception_ptr error;
};

/// Queries every prompt with at most config().max_concurrency requests in
/// flight. Outcomes are returned in prompt order regardless of completion
/// order. `limit` stops after that many prompts (the rest stay empty).
std::vector<QueryOutcome> query_all(AgentClient &client, std::span<const PromptInstance> prompts,
                                    std::optional<std::size_t> limit = std::nullopt);

struct ParsedJudgment {
  std::optional<double> value;  ///< in [0,100]; empty on parse failure
  bool clamped = false;
  std::string rule;
  std::string response_ref;

  bool ok() const { return value.has_value(); }
};

/// Direct: the first standalone number inside [0,100], else the first
/// number clamped. CoT: the last standalone number on the last line that
/// has one, clamped. Percent signs are ignored and decimals accepted.
ParsedJudgment parse_judgment(std::string_view text, Style style,
                              std::string response_ref = {});

/// Numbers not glued to letters, digits or other number characters.
std::vector<double> standalone_numbers(std::string_view text);

/// Reads a human-baseline CSV. Columns (case-insensitive, with aliases):
/// domain; task_id (roman I..XI or 1..11); raw_value (0..100); optional
/// condition_id (default rw17-base-direct), prompt_hash, response_ref.
/// Records are tagged agent_id "human". Out-of-range or non-numeric values
/// raise IngestError naming line and column.
std::vector<JudgmentRecord> ingest_human_baseline(const std::string &path);
std::vector<JudgmentRecord> ingest_human_baseline_text(std::string_view text,
                                                       std::string_view source = "<memory>");

}  // namespace colliderlab
