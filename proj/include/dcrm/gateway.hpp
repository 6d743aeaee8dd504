#pragma once

// Fills missing logprob / reward fields from external scoring services.
//
// Built-in request templates (POST, JSON body):
//
//   completion_logprobs
//     request:  {"model": M, "prompt": PROMPT + RESPONSE, "max_tokens": 0,
//                "echo": true, "logprobs": 0}
//     response: field `choices.0.logprobs` holding
//               {"tokens": [...], "token_logprobs": [...], "text_offset": [...]}
//     Entries whose text_offset falls inside PROMPT are dropped, the rest are
//     summed. Without text_offset every entry counts as a response token.
//
//   scalar_reward
//     request:  {"model": M, "prompt": PROMPT, "response": RESPONSE}
//     response: {"score": float}
//
//   judge_completion
//     request:  {"model": M, "prompt": TEXT, "temperature": 0}
//     response: field `choices.0.text` holding the judge's reply
//
// `response_field` overrides the template's selector. Selectors are
// dot-separated object keys and array indices, e.g. `data.0.score`.
//
// Fixture file (replaces the network entirely):
//   {"logprobs": {KEY: float | [float, ...]}, "rewards": {KEY: float}}
// KEY is either cache_key(prompt, text, model) or the raw response text.
//
// Cache: <cache_dir>/<kind>/<key[0:2]>/<key>.json, written via rename.

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <initializer_list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dcrm/types.hpp"

namespace dcrm {

using LogSink = std::function<void(std::string_view)>;

enum class RequestTemplate { completion_logprobs, scalar_reward, judge_completion };

std::string_view default_selector(RequestTemplate t) noexcept;

struct RetryPolicy {
  std::size_t max_attempts = 3;
  // Wait before retry i (0-based); the last entry repeats.
  std::vector<std::chrono::milliseconds> backoff{std::chrono::milliseconds(200),
                                                 std::chrono::milliseconds(800)};
};

struct EndpointConfig {
  std::string base_url;
  std::optional<std::string> auth_token;
  std::string model_name;
  RequestTemplate request_template = RequestTemplate::scalar_reward;
  std::size_t max_concurrency = 4;
  std::chrono::milliseconds timeout{30000};
  RetryPolicy retry;
  std::string response_field;  // empty: template default
  std::optional<std::filesystem::path> cache_dir;
  std::optional<std::filesystem::path> fixture;
  // Divide the summed logprob by the response token count. Off by default.
  bool length_normalize = false;
};

void check_endpoint(const EndpointConfig& config);

// SHA-256 (lowercase hex) over a domain tag and length-prefixed fields.
std::string content_digest(std::string_view domain, std::initializer_list<std::string_view> fields);

// content_digest over (prompt, response_text, model_name).
std::string cache_key(std::string_view prompt, std::string_view response_text,
                      std::string_view model_name);

const nlohmann::json* select_field(const nlohmann::json& doc, std::string_view selector);

// POST with bounded retries. Transport failures and 5xx replies are retried;
// other non-2xx replies fail immediately.
class HttpTransport {
 public:
  HttpTransport(const EndpointConfig& config, LogSink log = {});
  ~HttpTransport();
  HttpTransport(const HttpTransport&) = delete;
  HttpTransport& operator=(const HttpTransport&) = delete;

  // `context` names the item being scored in errors and log lines.
  nlohmann::json post(const nlohmann::json& body, std::string_view context);

  std::size_t requests() const noexcept;
  std::size_t retries() const noexcept;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Content-addressed on-disk store. Concurrent get() is safe; put() calls
// are serialized and land atomically.
class DiskCache {
 public:
  explicit DiskCache(std::filesystem::path root);

  std::optional<nlohmann::json> get(std::string_view kind, std::string_view key) const;
  void put(std::string_view kind, std::string_view key, const nlohmann::json& value);

 private:
  std::filesystem::path entry_path(std::string_view kind, std::string_view key) const;

  std::filesystem::path root_;
  std::mutex write_mutex_;
};

enum class ScoreKind { logprob, reward };

struct EnrichStats {
  std::size_t requests = 0;    // HTTP requests issued, retries included
  std::size_t retries = 0;
  std::size_t cache_hits = 0;
  std::size_t filled = 0;      // fields newly set
  std::vector<std::string> warnings;
};

// Fills every missing `kind` field across `pools`, keeping present values.
// At most max_concurrency requests are in flight; results land by index so
// the output never depends on scheduling.
EnrichStats enrich_pools(std::vector<ResponsePool>& pools, const EndpointConfig& config,
                         ScoreKind kind, const LogSink& log = {});

ResponsePool fetch_logprobs(const ResponsePool& pool, const EndpointConfig& config,
                            EnrichStats* stats = nullptr);
ResponsePool fetch_rewards(const ResponsePool& pool, const EndpointConfig& config,
                           EnrichStats* stats = nullptr);

}  // namespace dcrm
