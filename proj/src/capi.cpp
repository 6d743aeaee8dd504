#include "dcrm/dcrm.h"

#include <cstdlib>
#include <cstring>
#include <mutex>
#include <new>
#include <string>
#include <unordered_map>

#include "dcrm/corpus_stats.hpp"
#include "dcrm/data_model.hpp"
#include "dcrm/edit_distance.hpp"
#include "dcrm/error.hpp"
#include "dcrm/gateway.hpp"
#include "dcrm/judge.hpp"
#include "dcrm/metrics.hpp"
#include "dcrm/pairing.hpp"

struct dcrm_pools {
  std::vector<dcrm::ResponsePool> pools;
};

struct dcrm_pairs {
  std::vector<dcrm::PreferencePair> pairs;
  std::vector<dcrm::SkipRecord> skips;
};

namespace {

thread_local std::string g_last_error;

std::mutex g_log_mutex;
dcrm_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

dcrm_status status_of(dcrm::ErrorKind kind) {
  using dcrm::ErrorKind;
  switch (kind) {
    case ErrorKind::invalid_argument: return DCRM_ERR_INVALID_ARGUMENT;
    case ErrorKind::io: return DCRM_ERR_IO;
    case ErrorKind::parse: return DCRM_ERR_PARSE;
    case ErrorKind::validation: return DCRM_ERR_VALIDATION;
    case ErrorKind::domain: return DCRM_ERR_DOMAIN;
    case ErrorKind::transport: return DCRM_ERR_TRANSPORT;
    case ErrorKind::protocol: return DCRM_ERR_PROTOCOL;
  }
  return DCRM_ERR_INTERNAL;
}

template <typename F>
dcrm_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return DCRM_OK;
  } catch (const dcrm::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return DCRM_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DCRM_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return DCRM_ERR_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw dcrm::Error(dcrm::ErrorKind::invalid_argument, what);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

void log_message(std::string_view msg) {
  std::lock_guard lock(g_log_mutex);
  if (g_log_fn) g_log_fn(std::string(msg).c_str(), g_log_user);
}

dcrm::OutputFormat to_format(int format) {
  switch (format) {
    case DCRM_FORMAT_TEXT: return dcrm::OutputFormat::text;
    case DCRM_FORMAT_CSV: return dcrm::OutputFormat::csv;
    case DCRM_FORMAT_JSON: return dcrm::OutputFormat::json;
    default: break;
  }
  throw dcrm::Error(dcrm::ErrorKind::invalid_argument, "unknown output format");
}

dcrm::DcrmVariant to_variant(unsigned flags) {
  dcrm::DcrmVariant v;
  v.use_e = (flags & DCRM_USE_E) != 0;
  v.use_p = (flags & DCRM_USE_P) != 0;
  v.use_r = (flags & DCRM_USE_R) != 0;
  return v;
}

dcrm::PairSide to_side(int side) {
  switch (side) {
    case DCRM_SIDE_BOTH: return dcrm::PairSide::both;
    case DCRM_SIDE_CHOSEN: return dcrm::PairSide::chosen;
    case DCRM_SIDE_REJECTED: return dcrm::PairSide::rejected;
    default: break;
  }
  throw dcrm::Error(dcrm::ErrorKind::invalid_argument, "unknown pair side");
}

dcrm::EndpointConfig to_endpoint(const dcrm_endpoint_config& c) {
  dcrm::EndpointConfig out;
  if (c.base_url) out.base_url = c.base_url;
  if (c.auth_token && *c.auth_token) out.auth_token = c.auth_token;
  if (c.model_name) out.model_name = c.model_name;
  switch (c.request_template) {
    case DCRM_TEMPLATE_COMPLETION_LOGPROBS:
      out.request_template = dcrm::RequestTemplate::completion_logprobs;
      break;
    case DCRM_TEMPLATE_SCALAR_REWARD:
      out.request_template = dcrm::RequestTemplate::scalar_reward;
      break;
    case DCRM_TEMPLATE_JUDGE_COMPLETION:
      out.request_template = dcrm::RequestTemplate::judge_completion;
      break;
    default:
      throw dcrm::Error(dcrm::ErrorKind::invalid_argument, "unknown request template");
  }
  out.max_concurrency = c.max_concurrency;
  out.timeout = std::chrono::milliseconds(c.timeout_ms);
  out.retry.max_attempts = c.max_attempts;
  out.retry.backoff.clear();
  for (unsigned i = 0, wait = c.backoff_ms; i + 1 < std::max(c.max_attempts, 2u); ++i, wait *= 2) {
    out.retry.backoff.emplace_back(wait);
  }
  if (c.response_field) out.response_field = c.response_field;
  if (c.cache_dir && *c.cache_dir) out.cache_dir = c.cache_dir;
  if (c.fixture_path && *c.fixture_path) out.fixture = c.fixture_path;
  out.length_normalize = c.length_normalize != 0;
  return out;
}

}  // namespace

extern "C" {

const char* dcrm_version(void) { return "0.1.0"; }

const char* dcrm_last_error(void) { return g_last_error.c_str(); }

void dcrm_string_free(char* s) { std::free(s); }

void dcrm_set_log_callback(dcrm_log_fn fn, void* user_data) {
  std::lock_guard lock(g_log_mutex);
  g_log_fn = fn;
  g_log_user = user_data;
}

double dcrm_sigmoid(double x) { return dcrm::sigmoid(x); }

dcrm_status dcrm_edit_distance(const uint32_t* a, size_t a_len, const uint32_t* b, size_t b_len,
                               size_t* out) {
  return guarded([&] {
    require(out != nullptr, "out must not be NULL");
    require(a != nullptr || a_len == 0, "a must not be NULL");
    require(b != nullptr || b_len == 0, "b must not be NULL");
    *out = dcrm::edit_distance(std::span<const dcrm::TokenId>(a, a_len),
                               std::span<const dcrm::TokenId>(b, b_len));
  });
}

dcrm_status dcrm_metric(double r_delta, uint64_t e_delta, double p_delta, double epsilon,
                        unsigned variant_flags, double* out) {
  return guarded([&] {
    require(out != nullptr, "out must not be NULL");
    *out = dcrm::dcrm(r_delta, e_delta, p_delta, epsilon, to_variant(variant_flags));
  });
}

dcrm_status dcrm_pearson(const double* xs, const double* ys, size_t n, double* out) {
  return guarded([&] {
    require(out != nullptr && xs != nullptr && ys != nullptr, "arguments must not be NULL");
    *out = dcrm::pearson(std::span<const double>(xs, n), std::span<const double>(ys, n));
  });
}

dcrm_status dcrm_kl_divergence(const double* p, const double* q, size_t n, double* out) {
  return guarded([&] {
    require(out != nullptr && p != nullptr && q != nullptr, "arguments must not be NULL");
    *out = dcrm::kl_divergence(std::span<const double>(p, n), std::span<const double>(q, n));
  });
}

dcrm_status dcrm_pools_load(const char* path, int strict, dcrm_pools** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "arguments must not be NULL");
    auto handle = std::make_unique<dcrm_pools>();
    handle->pools = dcrm::parse_pool_file(path, dcrm::ParseOptions{strict != 0});
    *out = handle.release();
  });
}

void dcrm_pools_free(dcrm_pools* pools) { delete pools; }

size_t dcrm_pools_count(const dcrm_pools* pools) { return pools ? pools->pools.size() : 0; }

dcrm_status dcrm_pools_validate(const dcrm_pools* pools, int require_scores, size_t* n_violations,
                                char** report) {
  return guarded([&] {
    require(pools != nullptr && n_violations != nullptr, "arguments must not be NULL");
    std::string text;
    std::size_t count = 0;
    for (const auto& pool : pools->pools) {
      for (const auto& v : dcrm::validate_pool(pool, require_scores != 0)) {
        text += pool.prompt_id + "\t" + v.message + "\n";
        ++count;
      }
    }
    *n_violations = count;
    if (report) *report = dup_string(text);
  });
}

dcrm_status dcrm_pools_serialize(const dcrm_pools* pools, char** out) {
  return guarded([&] {
    require(pools != nullptr && out != nullptr, "arguments must not be NULL");
    std::string text;
    for (const auto& p : pools->pools) text += dcrm::serialize_pool(p) + "\n";
    *out = dup_string(text);
  });
}

dcrm_status dcrm_pools_write(const dcrm_pools* pools, const char* path) {
  return guarded([&] {
    require(pools != nullptr && path != nullptr, "arguments must not be NULL");
    dcrm::write_pools(pools->pools, path);
  });
}

void dcrm_endpoint_config_init(dcrm_endpoint_config* config) {
  if (!config) return;
  *config = dcrm_endpoint_config{};
  config->request_template = DCRM_TEMPLATE_SCALAR_REWARD;
  config->max_concurrency = 4;
  config->timeout_ms = 30000;
  config->max_attempts = 3;
  config->backoff_ms = 200;
}

dcrm_status dcrm_pools_enrich(dcrm_pools* pools, const dcrm_endpoint_config* config, int kind,
                              dcrm_enrich_stats* stats) {
  return guarded([&] {
    require(pools != nullptr && config != nullptr, "arguments must not be NULL");
    require(kind == DCRM_SCORE_LOGPROB || kind == DCRM_SCORE_REWARD, "unknown score kind");
    const auto endpoint = to_endpoint(*config);
    const auto score_kind = kind == DCRM_SCORE_LOGPROB ? dcrm::ScoreKind::logprob
                                                       : dcrm::ScoreKind::reward;
    // Enrich a copy so a failure leaves the handle untouched.
    auto enriched = pools->pools;
    const auto s = dcrm::enrich_pools(enriched, endpoint, score_kind, log_message);
    pools->pools = std::move(enriched);
    if (stats) {
      stats->requests = s.requests;
      stats->retries = s.retries;
      stats->cache_hits = s.cache_hits;
      stats->filled = s.filled;
      stats->warnings = s.warnings.size();
    }
  });
}

dcrm_status dcrm_cache_key(const char* prompt, const char* response_text, const char* model_name,
                           char** out_hex) {
  return guarded([&] {
    require(prompt && response_text && model_name && out_hex, "arguments must not be NULL");
    *out_hex = dup_string(dcrm::cache_key(prompt, response_text, model_name));
  });
}

void dcrm_pairing_config_init(dcrm_pairing_config* config) {
  if (!config) return;
  *config = dcrm_pairing_config{};
  config->strategy = DCRM_STRATEGY_DCRM;
  config->variant_flags = DCRM_VARIANT_FULL;
  config->epsilon = dcrm::kDefaultEpsilon;
}

dcrm_status dcrm_select_pairs(const dcrm_pools* pools, const dcrm_pairing_config* config,
                              size_t workers, dcrm_pairs** out) {
  return guarded([&] {
    require(pools != nullptr && config != nullptr && out != nullptr, "arguments must not be NULL");
    dcrm::PairingConfig cfg;
    switch (config->strategy) {
      case DCRM_STRATEGY_DCRM: cfg.strategy = dcrm::Strategy::dcrm_bon2; break;
      case DCRM_STRATEGY_MAX_MARGIN: cfg.strategy = dcrm::Strategy::max_margin; break;
      case DCRM_STRATEGY_R_ONLY: cfg.strategy = dcrm::Strategy::r_only_bon2; break;
      case DCRM_STRATEGY_DISTANCE_ONLY: cfg.strategy = dcrm::Strategy::distance_only; break;
      default: throw dcrm::Error(dcrm::ErrorKind::invalid_argument, "unknown strategy");
    }
    cfg.variant = to_variant(config->variant_flags);
    cfg.cross_source = config->cross_source != 0;
    cfg.epsilon = config->epsilon;
    if (config->has_min_margin) cfg.min_margin = config->min_margin;
    auto report = dcrm::select_all(pools->pools, cfg, workers == 0 ? 1 : workers);
    auto handle = std::make_unique<dcrm_pairs>();
    handle->pairs = std::move(report.pairs);
    handle->skips = std::move(report.skips);
    *out = handle.release();
  });
}

dcrm_status dcrm_pairs_load(const char* path, dcrm_pairs** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "arguments must not be NULL");
    auto handle = std::make_unique<dcrm_pairs>();
    handle->pairs = dcrm::read_pairs(path);
    *out = handle.release();
  });
}

void dcrm_pairs_free(dcrm_pairs* pairs) { delete pairs; }

size_t dcrm_pairs_count(const dcrm_pairs* pairs) { return pairs ? pairs->pairs.size() : 0; }

size_t dcrm_pairs_skip_count(const dcrm_pairs* pairs) { return pairs ? pairs->skips.size() : 0; }

dcrm_status dcrm_pairs_skip_report(const dcrm_pairs* pairs, char** out) {
  return guarded([&] {
    require(pairs != nullptr && out != nullptr, "arguments must not be NULL");
    std::string text;
    for (const auto& s : pairs->skips) {
      text += std::to_string(s.pool_index) + "\t" + s.prompt_id + "\t" + s.reason + "\n";
    }
    *out = dup_string(text);
  });
}

dcrm_status dcrm_pairs_metrics(const dcrm_pairs* pairs, size_t index, dcrm_pair_metrics* out) {
  return guarded([&] {
    require(pairs != nullptr && out != nullptr, "arguments must not be NULL");
    require(index < pairs->pairs.size(), "pair index out of range");
    const auto& m = pairs->pairs[index].metrics;
    *out = dcrm_pair_metrics{m.e_delta, m.p_delta, m.r_delta, m.dcrm};
  });
}

dcrm_status dcrm_pairs_ids(const dcrm_pairs* pairs, size_t index, char** prompt_id,
                           char** chosen_id, char** rejected_id) {
  return guarded([&] {
    require(pairs != nullptr, "pairs must not be NULL");
    require(index < pairs->pairs.size(), "pair index out of range");
    const auto& p = pairs->pairs[index];
    if (prompt_id) *prompt_id = dup_string(p.prompt_id);
    if (chosen_id) *chosen_id = dup_string(p.chosen.id);
    if (rejected_id) *rejected_id = dup_string(p.rejected.id);
  });
}

dcrm_status dcrm_pairs_serialize(const dcrm_pairs* pairs, char** out) {
  return guarded([&] {
    require(pairs != nullptr && out != nullptr, "arguments must not be NULL");
    std::string text;
    for (const auto& p : pairs->pairs) text += dcrm::serialize_pair(p) + "\n";
    *out = dup_string(text);
  });
}

dcrm_status dcrm_pairs_write(const dcrm_pairs* pairs, const char* path) {
  return guarded([&] {
    require(pairs != nullptr && path != nullptr, "arguments must not be NULL");
    dcrm::write_pairs(pairs->pairs, path);
  });
}

dcrm_status dcrm_pairs_stats(const dcrm_pairs* pairs, dcrm_dataset_stats* out) {
  return guarded([&] {
    require(pairs != nullptr && out != nullptr, "arguments must not be NULL");
    const auto s = dcrm::dataset_statistics(pairs->pairs);
    *out = dcrm_dataset_stats{s.n_pairs, s.mean_e_delta, s.mean_p_delta, s.mean_r_delta,
                              s.mean_dcrm};
  });
}

dcrm_status dcrm_stats_render(const dcrm_dataset_stats* rows, const char* const* labels,
                              size_t n_rows, double display_scale_r, double display_scale_dcrm,
                              int format, char** out) {
  return guarded([&] {
    require(out != nullptr && (rows != nullptr || n_rows == 0), "arguments must not be NULL");
    require(display_scale_r > 0.0 && display_scale_dcrm > 0.0, "display scales must be > 0");
    std::vector<dcrm::LabeledStats> table;
    for (size_t i = 0; i < n_rows; ++i) {
      dcrm::LabeledStats row;
      row.label = labels && labels[i] ? labels[i] : std::to_string(i);
      row.stats.n_pairs = rows[i].n_pairs;
      row.stats.mean_e_delta = rows[i].mean_e_delta;
      row.stats.mean_p_delta = rows[i].mean_p_delta;
      row.stats.mean_r_delta = rows[i].mean_r_delta;
      row.stats.mean_dcrm = rows[i].mean_dcrm;
      row.stats.display_scale_r = display_scale_r;
      row.stats.display_scale_dcrm = display_scale_dcrm;
      table.push_back(std::move(row));
    }
    *out = dup_string(dcrm::render_stats(table, to_format(format)));
  });
}

dcrm_status dcrm_correlate_csv(const char* path, const char* x_col, const char* y_col,
                               double* out) {
  return guarded([&] {
    require(path && x_col && y_col && out, "arguments must not be NULL");
    *out = dcrm::correlate_columns(dcrm::read_csv(path), x_col, y_col);
  });
}

dcrm_status dcrm_tokendiff_files(const char* path_a, int side_a, const char* path_b, int side_b,
                                 size_t k, int format, char** out) {
  return guarded([&] {
    require(path_a && path_b && out, "arguments must not be NULL");
    const auto a = dcrm::read_token_corpus(path_a, to_side(side_a));
    const auto b = dcrm::read_token_corpus(path_b, to_side(side_b));
    const auto report = dcrm::token_frequency_diff(a, b, k);
    *out = dup_string(dcrm::render_token_report(report, to_format(format)));
  });
}

dcrm_status dcrm_judge_prompt(const char* x, const char* y1, const char* y2, char** out) {
  return guarded([&] {
    require(x && y1 && y2 && out, "arguments must not be NULL");
    *out = dup_string(dcrm::render_judge_prompt(x, y1, y2));
  });
}

dcrm_status dcrm_featurediff(const dcrm_pairs* pairs, const dcrm_pools* prompts,
                             const dcrm_endpoint_config* judge, size_t sample_size,
                             uint64_t seed, size_t workers, int format,
                             dcrm_feature_score* score, char** report) {
  return guarded([&] {
    require(pairs != nullptr && judge != nullptr, "arguments must not be NULL");
    auto endpoint = to_endpoint(*judge);
    endpoint.request_template = dcrm::RequestTemplate::judge_completion;
    const auto fmt = to_format(format);

    std::unordered_map<std::string, const std::string*> prompt_text;
    if (prompts) {
      for (const auto& p : prompts->pools) prompt_text.emplace(p.prompt_id, &p.prompt);
    }
    std::vector<dcrm::JudgedPair> judged;
    judged.reserve(pairs->pairs.size());
    std::size_t missing = 0;
    for (const auto& p : pairs->pairs) {
      auto it = prompt_text.find(p.prompt_id);
      if (it == prompt_text.end()) ++missing;
      judged.push_back({p.prompt_id, it != prompt_text.end() ? *it->second : p.prompt_id,
                        p.chosen.text, p.rejected.text});
    }
    if (missing > 0) {
      log_message("warning: " + std::to_string(missing) +
                  " pair(s) have no prompt text; using prompt_id as the query");
    }
    auto j = dcrm::make_judge(endpoint, log_message);
    const auto r = dcrm::score_corpus(judged, *j, sample_size, seed,
                                      std::min<std::size_t>(std::max<std::size_t>(workers, 1),
                                                            endpoint.max_concurrency));
    if (score) *score = dcrm_feature_score{r.score.f_rel, r.score.f_des, r.score.n_pairs,
                                           r.failures.size()};
    if (report) *report = dup_string(dcrm::render_feature_report(r, fmt));
  });
}

}  // extern "C"
