/*
 * C interface to the dcrm preference-curation library.
 *
 * Conventions:
 *   - Functions returning dcrm_status report failures through the code; the
 *     message of the most recent failure on the calling thread is available
 *     from dcrm_last_error().
 *   - Handles are opaque and owned by the caller; release them with the
 *     matching *_free function. Strings returned through `char**` are
 *     allocated by the library and released with dcrm_string_free.
 *   - All strings are UTF-8 and NUL-terminated.
 */
#ifndef DCRM_DCRM_H
#define DCRM_DCRM_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(DCRM_BUILDING_LIBRARY)
#    define DCRM_API __declspec(dllexport)
#  else
#    define DCRM_API __declspec(dllimport)
#  endif
#else
#  define DCRM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dcrm_status {
  DCRM_OK = 0,
  DCRM_ERR_INVALID_ARGUMENT = 1,
  DCRM_ERR_IO = 2,
  DCRM_ERR_PARSE = 3,
  DCRM_ERR_VALIDATION = 4, /* data breaks a domain invariant */
  DCRM_ERR_DOMAIN = 5,     /* numeric or aggregate precondition failed */
  DCRM_ERR_TRANSPORT = 6,
  DCRM_ERR_PROTOCOL = 7,   /* endpoint or fixture reply unusable */
  DCRM_ERR_INTERNAL = 8
} dcrm_status;

typedef enum dcrm_format {
  DCRM_FORMAT_TEXT = 0,
  DCRM_FORMAT_CSV = 1,
  DCRM_FORMAT_JSON = 2
} dcrm_format;

/* Metric term flags. DCRM_VARIANT_FULL is the standard metric. */
enum {
  DCRM_USE_E = 1u,
  DCRM_USE_P = 2u,
  DCRM_USE_R = 4u,
  DCRM_VARIANT_FULL = 7u
};

typedef enum dcrm_strategy {
  DCRM_STRATEGY_DCRM = 0,
  DCRM_STRATEGY_MAX_MARGIN = 1,
  DCRM_STRATEGY_R_ONLY = 2,
  DCRM_STRATEGY_DISTANCE_ONLY = 3
} dcrm_strategy;

typedef enum dcrm_score_kind {
  DCRM_SCORE_LOGPROB = 0,
  DCRM_SCORE_REWARD = 1
} dcrm_score_kind;

typedef enum dcrm_request_template {
  DCRM_TEMPLATE_COMPLETION_LOGPROBS = 0,
  DCRM_TEMPLATE_SCALAR_REWARD = 1,
  DCRM_TEMPLATE_JUDGE_COMPLETION = 2
} dcrm_request_template;

typedef enum dcrm_pair_side {
  DCRM_SIDE_BOTH = 0,
  DCRM_SIDE_CHOSEN = 1,
  DCRM_SIDE_REJECTED = 2
} dcrm_pair_side;

typedef struct dcrm_pools dcrm_pools;
typedef struct dcrm_pairs dcrm_pairs;

typedef struct dcrm_pair_metrics {
  uint64_t e_delta;
  double p_delta;
  double r_delta;
  double dcrm;
} dcrm_pair_metrics;

typedef struct dcrm_pairing_config {
  int strategy;           /* dcrm_strategy */
  unsigned variant_flags; /* DCRM_USE_* */
  int cross_source;
  double epsilon;
  int has_min_margin;
  double min_margin;
} dcrm_pairing_config;

typedef struct dcrm_dataset_stats {
  size_t n_pairs;
  double mean_e_delta;
  double mean_p_delta;
  double mean_r_delta;
  double mean_dcrm;
} dcrm_dataset_stats;

typedef struct dcrm_endpoint_config {
  const char* base_url;       /* NULL when fixture_path is set */
  const char* auth_token;     /* optional */
  const char* model_name;
  int request_template;       /* dcrm_request_template */
  size_t max_concurrency;
  unsigned timeout_ms;
  unsigned max_attempts;
  unsigned backoff_ms;        /* base wait; doubles per retry */
  const char* response_field; /* optional selector override */
  const char* cache_dir;      /* optional */
  const char* fixture_path;   /* optional */
  int length_normalize;
} dcrm_endpoint_config;

typedef struct dcrm_enrich_stats {
  size_t requests;
  size_t retries;
  size_t cache_hits;
  size_t filled;
  size_t warnings;
} dcrm_enrich_stats;

typedef struct dcrm_feature_score {
  double f_rel;
  double f_des;
  size_t n_pairs;
  size_t n_failures;
} dcrm_feature_score;

typedef void (*dcrm_log_fn)(const char* message, void* user_data);

DCRM_API const char* dcrm_version(void);
DCRM_API const char* dcrm_last_error(void);
DCRM_API void dcrm_string_free(char* s);

/* Receives retry notices and warnings. NULL disables logging. */
DCRM_API void dcrm_set_log_callback(dcrm_log_fn fn, void* user_data);

/* ---- metric kernels ---- */

DCRM_API double dcrm_sigmoid(double x);
DCRM_API dcrm_status dcrm_edit_distance(const uint32_t* a, size_t a_len, const uint32_t* b,
                                        size_t b_len, size_t* out);
DCRM_API dcrm_status dcrm_metric(double r_delta, uint64_t e_delta, double p_delta,
                                 double epsilon, unsigned variant_flags, double* out);
DCRM_API dcrm_status dcrm_pearson(const double* xs, const double* ys, size_t n, double* out);
DCRM_API dcrm_status dcrm_kl_divergence(const double* p, const double* q, size_t n,
                                        double* out);

/* ---- response pools ---- */

/* strict != 0 rejects pools with < 2 responses or duplicate ids. */
DCRM_API dcrm_status dcrm_pools_load(const char* path, int strict, dcrm_pools** out);
DCRM_API void dcrm_pools_free(dcrm_pools* pools);
DCRM_API size_t dcrm_pools_count(const dcrm_pools* pools);
/* One violation per line in *report ("<prompt_id>\t<message>"). */
DCRM_API dcrm_status dcrm_pools_validate(const dcrm_pools* pools, int require_scores,
                                         size_t* n_violations, char** report);
DCRM_API dcrm_status dcrm_pools_serialize(const dcrm_pools* pools, char** out);
DCRM_API dcrm_status dcrm_pools_write(const dcrm_pools* pools, const char* path);

/* Fills missing logprobs or rewards in place. Warnings go to the log
 * callback. */
DCRM_API void dcrm_endpoint_config_init(dcrm_endpoint_config* config);
DCRM_API dcrm_status dcrm_pools_enrich(dcrm_pools* pools, const dcrm_endpoint_config* config,
                                       int kind, dcrm_enrich_stats* stats);
DCRM_API dcrm_status dcrm_cache_key(const char* prompt, const char* response_text,
                                    const char* model_name, char** out_hex);

/* ---- pairing ---- */

DCRM_API void dcrm_pairing_config_init(dcrm_pairing_config* config);
DCRM_API dcrm_status dcrm_select_pairs(const dcrm_pools* pools,
                                       const dcrm_pairing_config* config, size_t workers,
                                       dcrm_pairs** out);
DCRM_API dcrm_status dcrm_pairs_load(const char* path, dcrm_pairs** out);
DCRM_API void dcrm_pairs_free(dcrm_pairs* pairs);
DCRM_API size_t dcrm_pairs_count(const dcrm_pairs* pairs);
DCRM_API size_t dcrm_pairs_skip_count(const dcrm_pairs* pairs);
/* One skipped pool per line: "<pool index>\t<prompt_id>\t<reason>". */
DCRM_API dcrm_status dcrm_pairs_skip_report(const dcrm_pairs* pairs, char** out);
DCRM_API dcrm_status dcrm_pairs_metrics(const dcrm_pairs* pairs, size_t index,
                                        dcrm_pair_metrics* out);
DCRM_API dcrm_status dcrm_pairs_ids(const dcrm_pairs* pairs, size_t index, char** prompt_id,
                                    char** chosen_id, char** rejected_id);
DCRM_API dcrm_status dcrm_pairs_serialize(const dcrm_pairs* pairs, char** out);
DCRM_API dcrm_status dcrm_pairs_write(const dcrm_pairs* pairs, const char* path);

/* ---- corpus statistics ---- */

DCRM_API dcrm_status dcrm_pairs_stats(const dcrm_pairs* pairs, dcrm_dataset_stats* out);
DCRM_API dcrm_status dcrm_stats_render(const dcrm_dataset_stats* rows, const char* const* labels,
                                       size_t n_rows, double display_scale_r,
                                       double display_scale_dcrm, int format, char** out);
DCRM_API dcrm_status dcrm_correlate_csv(const char* path, const char* x_col, const char* y_col,
                                        double* out);
/* Token frequency difference between two JSONL corpora. `side` selects which
 * members of pair records contribute. */
DCRM_API dcrm_status dcrm_tokendiff_files(const char* path_a, int side_a, const char* path_b,
                                          int side_b, size_t k, int format, char** out);

/* ---- feature judging ---- */

DCRM_API dcrm_status dcrm_judge_prompt(const char* x, const char* y1, const char* y2,
                                       char** out);
/* Samples pairs, judges both orders, renders the report in `format`. Pair
 * records carry no prompt text; `prompts` (optional) supplies it by
 * prompt_id, otherwise the prompt_id itself is shown to the judge. A failure
 * rate above 10% returns DCRM_ERR_DOMAIN. */
DCRM_API dcrm_status dcrm_featurediff(const dcrm_pairs* pairs, const dcrm_pools* prompts,
                                      const dcrm_endpoint_config* judge, size_t sample_size,
                                      uint64_t seed, size_t workers, int format,
                                      dcrm_feature_score* score, char** report);

#ifdef __cplusplus
}
#endif

#endif /* DCRM_DCRM_H */
