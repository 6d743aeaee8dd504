#include <httplib.h>

#include "dcrm/gateway.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "dcrm/error.hpp"

namespace dcrm {

using json = nlohmann::json;

std::string_view default_selector(RequestTemplate t) noexcept {
  switch (t) {
    case RequestTemplate::completion_logprobs: return "choices.0.logprobs";
    case RequestTemplate::scalar_reward: return "score";
    case RequestTemplate::judge_completion: return "choices.0.text";
  }
  return "";
}

void check_endpoint(const EndpointConfig& config) {
  if (config.max_concurrency < 1) {
    throw Error(ErrorKind::invalid_argument, "max_concurrency must be >= 1");
  }
  if (config.retry.max_attempts < 1) {
    throw Error(ErrorKind::invalid_argument, "retry max_attempts must be >= 1");
  }
  if (!config.fixture && config.base_url.empty()) {
    throw Error(ErrorKind::invalid_argument, "either an endpoint URL or a fixture is required");
  }
}

namespace {

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::domain, "SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

}  // namespace

std::string content_digest(std::string_view domain,
                           std::initializer_list<std::string_view> fields) {
  // Length-prefixing keeps ("ab", "c") and ("a", "bc") apart.
  std::string buf(domain);
  buf += '|';
  for (std::string_view f : fields) {
    buf += std::to_string(f.size());
    buf += ':';
    buf.append(f);
  }
  return sha256_hex(buf);
}

std::string cache_key(std::string_view prompt, std::string_view response_text,
                      std::string_view model_name) {
  return content_digest("dcrm-score-v1", {prompt, response_text, model_name});
}

const json* select_field(const json& doc, std::string_view selector) {
  const json* cur = &doc;
  while (!selector.empty()) {
    const auto dot = selector.find('.');
    const std::string_view part = selector.substr(0, dot);
    selector = dot == std::string_view::npos ? std::string_view{} : selector.substr(dot + 1);
    if (cur->is_object()) {
      auto it = cur->find(std::string(part));
      if (it == cur->end()) return nullptr;
      cur = &*it;
    } else if (cur->is_array()) {
      std::size_t idx = 0;
      for (char c : part) {
        if (c < '0' || c > '9') return nullptr;
        idx = idx * 10 + static_cast<std::size_t>(c - '0');
      }
      if (part.empty() || idx >= cur->size()) return nullptr;
      cur = &(*cur)[idx];
    } else {
      return nullptr;
    }
  }
  return cur;
}

struct HttpTransport::Impl {
  EndpointConfig config;
  LogSink log;
  std::string origin;
  std::string path;
  std::atomic<std::size_t> requests{0};
  std::atomic<std::size_t> retries{0};

  void split_url() {
    const std::string& url = config.base_url;
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) {
      throw Error(ErrorKind::invalid_argument, "endpoint URL needs a scheme: " + url);
    }
    const auto slash = url.find('/', scheme + 3);
    origin = url.substr(0, slash);
    path = slash == std::string::npos ? "/" : url.substr(slash);
  }

  void note(const std::string& msg) const {
    if (log) log(msg);
  }
};

HttpTransport::HttpTransport(const EndpointConfig& config, LogSink log)
    : impl_(std::make_unique<Impl>()) {
  impl_->config = config;
  impl_->log = std::move(log);
  impl_->split_url();
}

HttpTransport::~HttpTransport() = default;

std::size_t HttpTransport::requests() const noexcept { return impl_->requests.load(); }
std::size_t HttpTransport::retries() const noexcept { return impl_->retries.load(); }

json HttpTransport::post(const json& body, std::string_view context) {
  const auto& cfg = impl_->config;
  const std::string payload = body.dump();
  std::string last_error;
  for (std::size_t attempt = 0; attempt < cfg.retry.max_attempts; ++attempt) {
    if (attempt > 0) {
      impl_->retries++;
      const auto& schedule = cfg.retry.backoff;
      const auto wait = schedule.empty()
                            ? std::chrono::milliseconds(0)
                            : schedule[std::min(attempt - 1, schedule.size() - 1)];
      impl_->note("retry " + std::to_string(attempt) + "/" +
                  std::to_string(cfg.retry.max_attempts - 1) + " for " + std::string(context) +
                  " after: " + last_error);
      std::this_thread::sleep_for(wait);
    }

    httplib::Client client(impl_->origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    httplib::Headers headers;
    if (cfg.auth_token) headers.emplace("Authorization", "Bearer " + *cfg.auth_token);

    impl_->requests++;
    auto res = client.Post(impl_->path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw Error(ErrorKind::transport, std::string(context) + ": HTTP " +
                                            std::to_string(res->status) + " from " +
                                            cfg.base_url);
    }
    try {
      return json::parse(res->body);
    } catch (const json::parse_error&) {
      std::string snippet = res->body.substr(0, 200);
      throw Error(ErrorKind::protocol,
                  std::string(context) + ": malformed JSON from endpoint: " + snippet);
    }
  }
  throw Error(ErrorKind::transport, std::string(context) + ": giving up after " +
                                        std::to_string(cfg.retry.max_attempts) +
                                        " attempt(s): " + last_error);
}

DiskCache::DiskCache(std::filesystem::path root) : root_(std::move(root)) {
  std::error_code ec;
  std::filesystem::create_directories(root_, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create cache directory " + root_.string());
}

std::filesystem::path DiskCache::entry_path(std::string_view kind, std::string_view key) const {
  return root_ / std::string(kind) / std::string(key.substr(0, 2)) / (std::string(key) + ".json");
}

std::optional<json> DiskCache::get(std::string_view kind, std::string_view key) const {
  std::ifstream in(entry_path(kind, key));
  if (!in) return std::nullopt;
  try {
    return json::parse(in);
  } catch (const json::parse_error&) {
    return std::nullopt;
  }
}

void DiskCache::put(std::string_view kind, std::string_view key, const json& value) {
  std::lock_guard lock(write_mutex_);
  const auto path = entry_path(kind, key);
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw Error(ErrorKind::io, "cannot create " + path.parent_path().string());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << value.dump();
    if (!out) throw Error(ErrorKind::io, "cannot write cache entry " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::io, "cannot commit cache entry " + path.string());
}

namespace {

struct Measured {
  double value = 0.0;
  std::optional<std::size_t> n_tokens;
};

std::string kind_name(ScoreKind kind) { return kind == ScoreKind::logprob ? "logprob" : "reward"; }

Measured logprob_from_reply(const json& field, std::string_view prompt, std::string_view context) {
  auto bad = [&](const std::string& what) -> Error {
    return Error(ErrorKind::protocol, std::string(context) + ": " + what);
  };
  if (field.is_number()) return {field.get<double>(), std::nullopt};
  const json* values = &field;
  const json* offsets = nullptr;
  if (field.is_object()) {
    auto it = field.find("token_logprobs");
    if (it == field.end()) throw bad("endpoint reply has no token_logprobs");
    values = &*it;
    auto off = field.find("text_offset");
    if (off != field.end() && off->is_array()) offsets = &*off;
  }
  if (!values->is_array()) throw bad("token_logprobs is not an array");
  if (offsets && offsets->size() != values->size()) {
    throw bad("text_offset and token_logprobs differ in length");
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < values->size(); ++i) {
    if (offsets) {
      const auto& o = (*offsets)[i];
      if (!o.is_number_integer()) throw bad("text_offset entries must be integers");
      if (o.get<std::int64_t>() < static_cast<std::int64_t>(prompt.size())) continue;
    }
    const auto& v = (*values)[i];
    if (!v.is_number()) throw bad("response token " + std::to_string(i) + " has no logprob");
    sum += v.get<double>();
    ++n;
  }
  return {sum, n};
}

class Backend {
 public:
  virtual ~Backend() = default;
  virtual Measured measure(const ResponsePool& pool, const Response& r, ScoreKind kind) = 0;
  virtual std::size_t requests() const = 0;
  virtual std::size_t retries() const = 0;
};

class FixtureBackend final : public Backend {
 public:
  FixtureBackend(const std::filesystem::path& path, std::string model)
      : model_(std::move(model)) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open fixture " + path.string());
    try {
      doc_ = json::parse(in);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::parse, "fixture " + path.string() + ": " + e.what());
    }
  }

  Measured measure(const ResponsePool& pool, const Response& r, ScoreKind kind) override {
    const char* section = kind == ScoreKind::logprob ? "logprobs" : "rewards";
    const std::string context = "response `" + r.id + "` of pool `" + pool.prompt_id + "`";
    const json* table = select_field(doc_, section);
    const json* entry = nullptr;
    if (table && table->is_object()) {
      auto it = table->find(cache_key(pool.prompt, r.text, model_));
      if (it == table->end()) it = table->find(r.text);
      if (it != table->end()) entry = &*it;
    }
    if (!entry) {
      throw Error(ErrorKind::protocol, context + ": fixture has no " + kind_name(kind));
    }
    if (kind == ScoreKind::reward) {
      if (!entry->is_number()) throw Error(ErrorKind::protocol, context + ": reward not a number");
      return {entry->get<double>(), std::nullopt};
    }
    return logprob_from_reply(*entry, "", context);
  }

  std::size_t requests() const override { return 0; }
  std::size_t retries() const override { return 0; }

 private:
  json doc_;
  std::string model_;
};

class HttpBackend final : public Backend {
 public:
  HttpBackend(const EndpointConfig& config, LogSink log)
      : config_(config), transport_(config, std::move(log)) {}

  Measured measure(const ResponsePool& pool, const Response& r, ScoreKind kind) override {
    const std::string context = "response `" + r.id + "` of pool `" + pool.prompt_id + "`";
    const std::string_view selector = config_.response_field.empty()
                                          ? default_selector(config_.request_template)
                                          : std::string_view(config_.response_field);
    json body;
    if (config_.request_template == RequestTemplate::completion_logprobs) {
      body = {{"model", config_.model_name}, {"prompt", pool.prompt + r.text},
              {"max_tokens", 0}, {"echo", true}, {"logprobs", 0}};
    } else {
      body = {{"model", config_.model_name}, {"prompt", pool.prompt}, {"response", r.text}};
    }
    const json reply = transport_.post(body, context);
    const json* field = select_field(reply, selector);
    if (!field) {
      throw Error(ErrorKind::protocol,
                  context + ": endpoint reply lacks field `" + std::string(selector) + "`");
    }
    if (kind == ScoreKind::reward) {
      if (!field->is_number()) {
        throw Error(ErrorKind::protocol, context + ": field `" + std::string(selector) +
                                             "` is not a number");
      }
      return {field->get<double>(), std::nullopt};
    }
    const std::string_view prompt =
        config_.request_template == RequestTemplate::completion_logprobs ? pool.prompt : "";
    return logprob_from_reply(*field, prompt, context);
  }

  std::size_t requests() const override { return transport_.requests(); }
  std::size_t retries() const override { return transport_.retries(); }

 private:
  EndpointConfig config_;
  HttpTransport transport_;
};

}  // namespace

EnrichStats enrich_pools(std::vector<ResponsePool>& pools, const EndpointConfig& config,
                         ScoreKind kind, const LogSink& log) {
  check_endpoint(config);
  std::unique_ptr<Backend> backend;
  if (config.fixture) {
    backend = std::make_unique<FixtureBackend>(*config.fixture, config.model_name);
  } else {
    backend = std::make_unique<HttpBackend>(config, log);
  }
  std::optional<DiskCache> cache;
  if (config.cache_dir) cache.emplace(*config.cache_dir);

  struct Job {
    std::size_t pool;
    std::size_t response;
  };
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < pools.size(); ++p) {
    for (std::size_t r = 0; r < pools[p].responses.size(); ++r) {
      const auto& resp = pools[p].responses[r];
      const bool missing = kind == ScoreKind::logprob ? !resp.logprob : !resp.reward;
      if (missing) jobs.push_back({p, r});
    }
  }

  std::vector<Measured> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> hits{0};
  const std::string kind_dir = kind_name(kind);

  auto work = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const ResponsePool& pool = pools[jobs[i].pool];
      const Response& resp = pool.responses[jobs[i].response];
      try {
        const std::string key = cache_key(pool.prompt, resp.text, config.model_name);
        if (cache) {
          if (auto hit = cache->get(kind_dir, key); hit && hit->contains("value")) {
            Measured m{(*hit)["value"].get<double>(), std::nullopt};
            if (auto n = hit->find("n_tokens"); n != hit->end() && n->is_number_integer()) {
              m.n_tokens = n->get<std::size_t>();
            }
            results[i] = m;
            hits++;
            continue;
          }
        }
        results[i] = backend->measure(pool, resp, kind);
        if (cache) {
          json entry = {{"value", results[i].value}};
          if (results[i].n_tokens) entry["n_tokens"] = *results[i].n_tokens;
          cache->put(kind_dir, key, entry);
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  const std::size_t threads = std::min(config.max_concurrency, jobs.size());
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool_threads;
    for (std::size_t t = 0; t < threads; ++t) pool_threads.emplace_back(work);
  }

  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  EnrichStats stats;
  stats.cache_hits = hits.load();
  stats.requests = backend->requests();
  stats.retries = backend->retries();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    Response& resp = pools[jobs[i].pool].responses[jobs[i].response];
    const Measured& m = results[i];
    if (!std::isfinite(m.value)) {
      throw Error(ErrorKind::protocol, "response `" + resp.id + "`: non-finite " + kind_dir);
    }
    if (kind == ScoreKind::logprob) {
      if (m.n_tokens && *m.n_tokens != resp.tokens.size()) {
        stats.warnings.push_back("response `" + resp.id + "` of pool `" +
                                 pools[jobs[i].pool].prompt_id + "`: endpoint scored " +
                                 std::to_string(*m.n_tokens) + " tokens, local tokens " +
                                 std::to_string(resp.tokens.size()));
      }
      double value = m.value;
      if (config.length_normalize) {
        const std::size_t n = m.n_tokens.value_or(resp.tokens.size());
        if (n > 0) value /= static_cast<double>(n);
      }
      resp.logprob = value;
    } else {
      resp.reward = m.value;
    }
    stats.filled++;
  }
  if (log) {
    for (const auto& w : stats.warnings) log("warning: " + w);
  }
  return stats;
}

namespace {

ResponsePool fetch_one(const ResponsePool& pool, const EndpointConfig& config, ScoreKind kind,
                       EnrichStats* stats) {
  std::vector<ResponsePool> pools{pool};
  auto s = enrich_pools(pools, config, kind);
  if (stats) *stats = std::move(s);
  return std::move(pools.front());
}

}  // namespace

ResponsePool fetch_logprobs(const ResponsePool& pool, const EndpointConfig& config,
                            EnrichStats* stats) {
  return fetch_one(pool, config, ScoreKind::logprob, stats);
}

ResponsePool fetch_rewards(const ResponsePool& pool, const EndpointConfig& config,
                           EnrichStats* stats) {
  return fetch_one(pool, config, ScoreKind::reward, stats);
}

}  // namespace dcrm
