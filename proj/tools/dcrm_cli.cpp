// dcrm: command-line front end over the C API.
//
// Exit codes: 0 success, 1 domain violation, 2 usage / I/O / parse /
// endpoint failure.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dcrm/dcrm.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;
constexpr int kExitEnv = 2;
constexpr const char* kAuthEnv = "DCRM_AUTH_TOKEN";

struct Failure {
  int code;
};

int exit_code_for(dcrm_status s) {
  switch (s) {
    case DCRM_OK: return kExitOk;
    case DCRM_ERR_VALIDATION:
    case DCRM_ERR_DOMAIN: return kExitDomain;
    default: return kExitEnv;
  }
}

void check(dcrm_status s, const std::string& what) {
  if (s == DCRM_OK) return;
  std::cerr << "dcrm: " << what << ": " << dcrm_last_error() << "\n";
  throw Failure{exit_code_for(s)};
}

struct StringDeleter {
  void operator()(char* s) const { dcrm_string_free(s); }
};
using OwnedString = std::unique_ptr<char, StringDeleter>;

struct PoolsDeleter {
  void operator()(dcrm_pools* p) const { dcrm_pools_free(p); }
};
using Pools = std::unique_ptr<dcrm_pools, PoolsDeleter>;

struct PairsDeleter {
  void operator()(dcrm_pairs* p) const { dcrm_pairs_free(p); }
};
using Pairs = std::unique_ptr<dcrm_pairs, PairsDeleter>;

Pools load_pools(const std::string& path, bool strict) {
  dcrm_pools* raw = nullptr;
  check(dcrm_pools_load(path.c_str(), strict ? 1 : 0, &raw), "reading " + path);
  return Pools(raw);
}

Pairs load_pairs(const std::string& path) {
  dcrm_pairs* raw = nullptr;
  check(dcrm_pairs_load(path.c_str(), &raw), "reading " + path);
  return Pairs(raw);
}

// Writes to `out` if set, standard output otherwise.
void emit(const std::string& text, const std::string& out) {
  if (out.empty()) {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  f << text;
  if (!f) {
    std::cerr << "dcrm: cannot write " << out << "\n";
    throw Failure{kExitEnv};
  }
}

void log_to_stderr(const char* message, void*) { std::cerr << message << "\n"; }

const std::map<std::string, int> kFormats{
    {"text", DCRM_FORMAT_TEXT}, {"csv", DCRM_FORMAT_CSV}, {"json", DCRM_FORMAT_JSON}};

const std::map<std::string, int> kStrategies{{"dcrm", DCRM_STRATEGY_DCRM},
                                             {"max-margin", DCRM_STRATEGY_MAX_MARGIN},
                                             {"r-only", DCRM_STRATEGY_R_ONLY},
                                             {"distance-only", DCRM_STRATEGY_DISTANCE_ONLY}};

const std::map<std::string, int> kSides{
    {"both", DCRM_SIDE_BOTH}, {"chosen", DCRM_SIDE_CHOSEN}, {"rejected", DCRM_SIDE_REJECTED}};

const std::map<std::string, int> kTemplates{
    {"completion-logprobs", DCRM_TEMPLATE_COMPLETION_LOGPROBS},
    {"scalar-reward", DCRM_TEMPLATE_SCALAR_REWARD},
    {"judge-completion", DCRM_TEMPLATE_JUDGE_COMPLETION}};

std::size_t default_workers() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

// Options shared by the commands that talk to an endpoint or fixture.
struct EndpointOptions {
  std::string endpoint;
  std::string fixture;
  std::string model = "default";
  std::string request_template;
  std::string response_field;
  std::string cache_dir;
  std::size_t max_concurrency = 4;
  unsigned timeout_ms = 30000;
  unsigned max_attempts = 3;
  unsigned backoff_ms = 200;

  void add_to(CLI::App* cmd, bool with_cache) {
    auto* ep = cmd->add_option("--endpoint", endpoint, "Base URL of the scoring endpoint");
    auto* fx = cmd->add_option("--fixture", fixture, "Fixture JSON file used instead of the network")
                   ->check(CLI::ExistingFile);
    ep->excludes(fx);
    cmd->add_option("--model", model, "Model name sent to the endpoint")->capture_default_str();
    cmd->add_option("--response-field", response_field,
                    "Dot-path selector overriding the template's reply field");
    if (with_cache) {
      cmd->add_option("--cache-dir", cache_dir, "Content-addressed response cache directory");
    }
    cmd->add_option("--max-concurrency", max_concurrency, "Requests in flight at once")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--timeout-ms", timeout_ms, "Per-request timeout in milliseconds")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--max-attempts", max_attempts, "Attempts per request, first one included")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--backoff-ms", backoff_ms, "Wait before the first retry; doubles each retry")
        ->capture_default_str();
  }

  // Strings referenced by the returned struct live in *this.
  dcrm_endpoint_config build(int request_template_default, const char* auth) const {
    if (endpoint.empty() && fixture.empty()) {
      std::cerr << "dcrm: one of --endpoint or --fixture is required\n";
      throw Failure{kExitEnv};
    }
    dcrm_endpoint_config cfg;
    dcrm_endpoint_config_init(&cfg);
    cfg.base_url = endpoint.empty() ? nullptr : endpoint.c_str();
    cfg.auth_token = auth;
    cfg.model_name = model.c_str();
    cfg.request_template = request_template.empty() ? request_template_default
                                                    : kTemplates.at(request_template);
    cfg.max_concurrency = max_concurrency;
    cfg.timeout_ms = timeout_ms;
    cfg.max_attempts = max_attempts;
    cfg.backoff_ms = backoff_ms;
    cfg.response_field = response_field.empty() ? nullptr : response_field.c_str();
    cfg.cache_dir = cache_dir.empty() ? nullptr : cache_dir.c_str();
    cfg.fixture_path = fixture.empty() ? nullptr : fixture.c_str();
    return cfg;
  }
};

int run_validate(const std::string& input, bool require_scores) {
  auto pools = load_pools(input, false);
  std::size_t n = 0;
  char* report = nullptr;
  check(dcrm_pools_validate(pools.get(), require_scores ? 1 : 0, &n, &report), "validating");
  OwnedString owned(report);
  std::cerr << report;
  std::cerr << dcrm_pools_count(pools.get()) << " pools, " << n << " violation(s)\n";
  return n == 0 ? kExitOk : kExitDomain;
}

int run_score(const std::string& input, const std::string& kind, EndpointOptions& ep,
              bool length_normalize, const std::string& out) {
  auto pools = load_pools(input, true);
  const int score_kind = kind == "logprob" ? DCRM_SCORE_LOGPROB : DCRM_SCORE_REWARD;
  const int tmpl = score_kind == DCRM_SCORE_LOGPROB ? DCRM_TEMPLATE_COMPLETION_LOGPROBS
                                                    : DCRM_TEMPLATE_SCALAR_REWARD;
  auto cfg = ep.build(tmpl, std::getenv(kAuthEnv));
  cfg.length_normalize = length_normalize ? 1 : 0;
  dcrm_enrich_stats stats{};
  check(dcrm_pools_enrich(pools.get(), &cfg, score_kind, &stats), "scoring");
  char* text = nullptr;
  check(dcrm_pools_serialize(pools.get(), &text), "serializing");
  OwnedString owned(text);
  emit(text, out);
  std::cerr << "filled " << stats.filled << ", requests " << stats.requests << ", retries "
            << stats.retries << ", cache hits " << stats.cache_hits << ", warnings "
            << stats.warnings << "\n";
  return kExitOk;
}

struct PairOptions {
  std::string strategy = "dcrm";
  bool no_e = false;
  bool no_p = false;
  bool cross_source = false;
  double epsilon = 1.0;
  std::optional<double> min_margin;
  std::size_t workers = default_workers();
  std::string skips_out;
};

int run_pair(const std::string& input, const PairOptions& o, const std::string& out) {
  auto pools = load_pools(input, true);

  std::size_t n_violations = 0;
  char* report = nullptr;
  check(dcrm_pools_validate(pools.get(), 1, &n_violations, &report), "validating");
  OwnedString owned_report(report);
  if (n_violations > 0) {
    std::string text = report;
    std::size_t pos = 0;
    for (int shown = 0; shown < 5 && pos < text.size(); ++shown) {
      const auto nl = text.find('\n', pos);
      std::cerr << "dcrm: " << text.substr(pos, nl - pos) << "\n";
      pos = nl == std::string::npos ? text.size() : nl + 1;
    }
    std::cerr << "dcrm: " << n_violations << " violation(s); run `dcrm score` first\n";
    return kExitDomain;
  }

  dcrm_pairing_config cfg;
  dcrm_pairing_config_init(&cfg);
  cfg.strategy = kStrategies.at(o.strategy);
  unsigned flags = DCRM_VARIANT_FULL;
  if (o.no_e) flags &= ~static_cast<unsigned>(DCRM_USE_E);
  if (o.no_p) flags &= ~static_cast<unsigned>(DCRM_USE_P);
  if (cfg.strategy == DCRM_STRATEGY_DISTANCE_ONLY) flags &= ~static_cast<unsigned>(DCRM_USE_R);
  cfg.variant_flags = flags;
  cfg.cross_source = o.cross_source ? 1 : 0;
  cfg.epsilon = o.epsilon;
  if (o.min_margin) {
    cfg.has_min_margin = 1;
    cfg.min_margin = *o.min_margin;
  }

  dcrm_pairs* raw = nullptr;
  check(dcrm_select_pairs(pools.get(), &cfg, o.workers, &raw), "pairing");
  Pairs pairs(raw);

  char* text = nullptr;
  check(dcrm_pairs_serialize(pairs.get(), &text), "serializing");
  OwnedString owned_text(text);
  emit(text, out);

  char* skips = nullptr;
  check(dcrm_pairs_skip_report(pairs.get(), &skips), "skip report");
  OwnedString owned_skips(skips);
  if (!o.skips_out.empty()) {
    std::ofstream f(o.skips_out, std::ios::binary | std::ios::trunc);
    f << skips;
    if (!f) {
      std::cerr << "dcrm: cannot write " << o.skips_out << "\n";
      return kExitEnv;
    }
  }
  std::cerr << "pools " << dcrm_pools_count(pools.get()) << ", pairs "
            << dcrm_pairs_count(pairs.get()) << ", skipped " << dcrm_pairs_skip_count(pairs.get())
            << " (" << o.strategy << ", epsilon " << o.epsilon << ")\n";
  return kExitOk;
}

int run_stats(const std::vector<std::string>& inputs, std::vector<std::string> labels,
              double scale_r, double scale_dcrm, const std::string& format,
              const std::string& out) {
  if (!labels.empty() && labels.size() != inputs.size()) {
    std::cerr << "dcrm: --label count must match the number of inputs\n";
    return kExitEnv;
  }
  if (labels.empty()) labels = inputs;
  std::vector<dcrm_dataset_stats> rows(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto pairs = load_pairs(inputs[i]);
    check(dcrm_pairs_stats(pairs.get(), &rows[i]), inputs[i]);
  }
  std::vector<const char*> label_ptrs;
  for (const auto& l : labels) label_ptrs.push_back(l.c_str());
  char* text = nullptr;
  check(dcrm_stats_render(rows.data(), label_ptrs.data(), rows.size(), scale_r, scale_dcrm,
                          kFormats.at(format), &text),
        "rendering");
  OwnedString owned(text);
  emit(text, out);
  return kExitOk;
}

int run_correlate(const std::string& csv, const std::string& x, const std::string& y) {
  double r = 0.0;
  check(dcrm_correlate_csv(csv.c_str(), x.c_str(), y.c_str(), &r), "correlating");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f\n", r);
  std::cout << buf;
  return kExitOk;
}

int run_tokendiff(const std::string& a, std::string b, std::string side_a, std::string side_b,
                  std::size_t k, const std::string& format, const std::string& out) {
  // A single pairs file compares its chosen responses against its rejected ones.
  if (b.empty()) {
    b = a;
    side_a = "chosen";
    side_b = "rejected";
  }
  char* text = nullptr;
  check(dcrm_tokendiff_files(a.c_str(), kSides.at(side_a), b.c_str(), kSides.at(side_b), k,
                             kFormats.at(format), &text),
        "token analysis");
  OwnedString owned(text);
  emit(text, out);
  return kExitOk;
}

int run_featurediff(const std::string& input, const std::string& prompts_path, EndpointOptions& ep,
                    std::size_t sample_size, std::uint64_t seed, std::size_t workers,
                    const std::string& format, const std::string& out) {
  auto pairs = load_pairs(input);
  Pools prompts;
  if (!prompts_path.empty()) prompts = load_pools(prompts_path, false);
  const auto cfg = ep.build(DCRM_TEMPLATE_JUDGE_COMPLETION, std::getenv(kAuthEnv));
  dcrm_feature_score score{};
  char* text = nullptr;
  check(dcrm_featurediff(pairs.get(), prompts.get(), &cfg, sample_size, seed, workers,
                         kFormats.at(format), &score, &text),
        "feature analysis");
  OwnedString owned(text);
  emit(text, out);
  std::cerr << "judged " << score.n_pairs << " pair(s), " << score.n_failures << " failure(s)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-pair curation with distance-calibrated reward margins.\n"
               "Exit codes: 0 success, 1 domain violation, 2 usage, I/O or endpoint failure.\n"
               "The endpoint auth token is read from the DCRM_AUTH_TOKEN environment variable.",
               "dcrm"};
  app.set_version_flag("--version", std::string(dcrm_version()));
  app.require_subcommand(1);
  app.fallthrough(false);

  std::string input;
  std::string out;
  std::string format = "text";
  auto add_format = [&](CLI::App* cmd) {
    cmd->add_option("--format", format, "Output format")
        ->check(CLI::IsMember({"text", "csv", "json"}))
        ->capture_default_str();
  };
  auto add_out = [&](CLI::App* cmd) {
    cmd->add_option("--out", out, "Output path (default: standard output)");
  };

  // validate
  bool require_scores = false;
  auto* validate = app.add_subcommand("validate", "Check a response-pool JSONL file");
  validate->add_option("input", input, "Response-pool JSONL file")->required();
  validate->add_flag("--require-scores", require_scores,
                     "Also report responses lacking logprob or reward");

  // score
  std::string kind;
  bool length_normalize = false;
  EndpointOptions score_ep;
  auto* score = app.add_subcommand("score", "Fill missing logprob or reward fields");
  score->add_option("input", input, "Response-pool JSONL file")->required();
  score->add_option("--kind", kind, "Field to fill")
      ->required()
      ->check(CLI::IsMember({"logprob", "reward"}));
  score_ep.add_to(score, true);
  score->add_option("--template", score_ep.request_template,
                    "Request template (default: completion-logprobs for logprob, "
                    "scalar-reward for reward)")
      ->check(CLI::IsMember({"completion-logprobs", "scalar-reward"}));
  score->add_flag("--length-normalize", length_normalize,
                  "Divide each logprob by the response token count");
  add_out(score);

  // pair
  PairOptions pair_opts;
  auto* pair = app.add_subcommand("pair", "Select one preference pair per pool");
  pair->add_option("input", input, "Scored response-pool JSONL file")->required();
  pair->add_option("--strategy", pair_opts.strategy, "Selection strategy")
      ->check(CLI::IsMember({"dcrm", "max-margin", "r-only", "distance-only"}))
      ->capture_default_str();
  pair->add_flag("--no-e", pair_opts.no_e, "Drop the edit-distance term from the denominator");
  pair->add_flag("--no-p", pair_opts.no_p, "Drop the logprob-difference term from the denominator");
  pair->add_flag("--cross-source", pair_opts.cross_source,
                 "Only pair responses from different sources");
  pair->add_option("--epsilon", pair_opts.epsilon, "Denominator smoothing constant")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  pair->add_option("--min-margin", pair_opts.min_margin,
                   "Skip candidate pairs whose reward margin is below this value");
  pair->add_option("--workers", pair_opts.workers,
                   "Worker threads (default: available parallelism)")
      ->check(CLI::PositiveNumber);
  pair->add_option("--skips-out", pair_opts.skips_out,
                   "Write skipped pools as <index>\\t<prompt_id>\\t<reason> lines");
  add_out(pair);

  // stats
  std::vector<std::string> stats_inputs;
  std::vector<std::string> stats_labels;
  double scale_r = 100.0;
  double scale_dcrm = 1000.0;
  auto* stats = app.add_subcommand("stats", "Summarize pair files, one row per file");
  stats->add_option("inputs", stats_inputs, "Pair JSONL files")->required();
  stats->add_option("--label", stats_labels, "Row label per input (default: the path)");
  stats->add_option("--scale-r", scale_r, "Display multiplier for the reward margin (text only)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  stats->add_option("--scale-dcrm", scale_dcrm, "Display multiplier for DCRM (text only)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  add_format(stats);
  add_out(stats);

  // correlate
  std::string x_col;
  std::string y_col;
  auto* correlate = app.add_subcommand("correlate", "Pearson correlation of two CSV columns");
  correlate->add_option("input", input, "CSV file with a header row")->required();
  correlate->add_option("--x", x_col, "First column name")->required();
  correlate->add_option("--y", y_col, "Second column name")->required();

  // tokendiff
  std::string other;
  std::string side_a = "both";
  std::string side_b = "both";
  std::size_t top_k = 20;
  auto* tokendiff = app.add_subcommand(
      "tokendiff",
      "Tokens whose normalized frequency rises most from corpus B to corpus A.\n"
      "With one pairs file, compares its chosen responses against its rejected ones.");
  tokendiff->add_option("input", input, "Corpus A (responses, pools or pairs JSONL)")->required();
  tokendiff->add_option("other", other, "Corpus B");
  tokendiff->add_option("--side-a", side_a, "Pair members read from corpus A")
      ->check(CLI::IsMember({"both", "chosen", "rejected"}))
      ->capture_default_str();
  tokendiff->add_option("--side-b", side_b, "Pair members read from corpus B")
      ->check(CLI::IsMember({"both", "chosen", "rejected"}))
      ->capture_default_str();
  tokendiff->add_option("--top-k", top_k, "Number of tokens reported")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  add_format(tokendiff);
  add_out(tokendiff);

  // featurediff
  std::string prompts_path;
  std::size_t sample_size = 200;
  std::uint64_t seed = 42;
  std::size_t fd_workers = default_workers();
  EndpointOptions judge_ep;
  auto* featurediff =
      app.add_subcommand("featurediff", "Judge feature differences on a sample of pairs");
  featurediff->add_option("input", input, "Pair JSONL file")->required();
  featurediff->add_option("--prompts", prompts_path,
                          "Pool file supplying prompt text by prompt_id");
  judge_ep.add_to(featurediff, false);
  featurediff->add_option("--sample-size", sample_size, "Pairs sampled for judging")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  featurediff->add_option("--seed", seed, "Sampling seed")->capture_default_str();
  featurediff->add_option("--workers", fd_workers,
                          "Judge calls in flight, capped by --max-concurrency "
                          "(default: available parallelism)")
      ->check(CLI::PositiveNumber);
  add_format(featurediff);
  add_out(featurediff);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitEnv;
  }

  dcrm_set_log_callback(log_to_stderr, nullptr);
  try {
    if (*validate) return run_validate(input, require_scores);
    if (*score) return run_score(input, kind, score_ep, length_normalize, out);
    if (*pair) return run_pair(input, pair_opts, out);
    if (*stats) return run_stats(stats_inputs, stats_labels, scale_r, scale_dcrm, format, out);
    if (*correlate) return run_correlate(input, x_col, y_col);
    if (*tokendiff) return run_tokendiff(input, other, side_a, side_b, top_k, format, out);
    if (*featurediff)
      return run_featurediff(input, prompts_path, judge_ep, sample_size, seed, fd_workers, format,
                             out);
  } catch (const Failure& f) {
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "dcrm: " << e.what() << "\n";
    return kExitEnv;
  }
  return kExitEnv;
}
