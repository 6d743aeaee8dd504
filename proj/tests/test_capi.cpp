// Exercises the shared library through its C header only.

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "dcrm/dcrm.h"

namespace fs = std::filesystem;

namespace {

const char* kPools =
    R"({"prompt_id":"p1","prompt":"Say hi","responses":[{"id":"a","source":"m1","text":"hello there friend","logprob":-5.0,"reward":0.9},{"id":"b","source":"m2","text":"hello there","logprob":-4.0,"reward":0.2},{"id":"c","source":"m1","text":"go away now please","logprob":-9.0,"reward":-0.5}]}
{"prompt_id":"p2","prompt":"Count","responses":[{"id":"a","source":"m1","text":"one two three","logprob":-3.0,"reward":0.5},{"id":"b","source":"m2","text":"one two four","logprob":-3.5,"reward":0.1}]}
{"prompt_id":"p3","prompt":"Tie","responses":[{"id":"a","source":"m1","text":"same","logprob":-1.0,"reward":0.3},{"id":"b","source":"m1","text":"same too","logprob":-2.0,"reward":0.3}]}
)";

struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() / ("dcrm-capi-" + std::to_string(std::rand()));
    fs::create_directories(dir);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  std::string put(const std::string& name, const std::string& body) const {
    std::ofstream(dir / name, std::ios::binary) << body;
    return (dir / name).string();
  }
};

struct StrDeleter {
  void operator()(char* s) const { dcrm_string_free(s); }
};
using Str = std::unique_ptr<char, StrDeleter>;

std::string own(char* s) {
  Str guard(s);
  return s ? std::string(s) : std::string();
}

std::size_t lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("version and error state") {
  CHECK(std::string(dcrm_version()) == "0.1.0");
  std::size_t d = 0;
  CHECK(dcrm_edit_distance(nullptr, 3, nullptr, 0, &d) == DCRM_ERR_INVALID_ARGUMENT);
  CHECK(std::string(dcrm_last_error()).size() > 0);
  dcrm_pools* pools = nullptr;
  CHECK(dcrm_pools_load("/nonexistent/pools.jsonl", 1, &pools) == DCRM_ERR_IO);
  CHECK(pools == nullptr);
  CHECK(std::string(dcrm_last_error()).find("/nonexistent/pools.jsonl") != std::string::npos);
  CHECK(dcrm_pools_count(nullptr) == 0);
  dcrm_pools_free(nullptr);
  dcrm_pairs_free(nullptr);
  dcrm_string_free(nullptr);
}

TEST_CASE("kernels") {
  CHECK(dcrm_sigmoid(0.0) == 0.5);
  const uint32_t a[] = {1, 2, 3, 4};
  const uint32_t b[] = {1, 3, 4, 5};
  std::size_t d = 99;
  REQUIRE(dcrm_edit_distance(a, 4, b, 4, &d) == DCRM_OK);
  CHECK(d == 2);
  REQUIRE(dcrm_edit_distance(a, 4, nullptr, 0, &d) == DCRM_OK);
  CHECK(d == 4);

  double m = 0;
  REQUIRE(dcrm_metric(0.8, 3, 1.5, 1.0, DCRM_VARIANT_FULL, &m) == DCRM_OK);
  const long double want = (1.0L / (1.0L + std::exp(-0.8L)) - 0.5L) / 5.5L;
  CHECK(std::fabs(m - static_cast<double>(want)) <= 1e-15 * std::fabs(m));
  REQUIRE(dcrm_metric(0.8, 3, 1.5, 1.0, DCRM_USE_E | DCRM_USE_R, &m) == DCRM_OK);
  CHECK(m == doctest::Approx((1.0 / (1.0 + std::exp(-0.8)) - 0.5) / 4.0));
  REQUIRE(dcrm_metric(0.8, 3, 1.5, 1.0, DCRM_USE_E | DCRM_USE_P, &m) == DCRM_OK);
  CHECK(m == doctest::Approx(1.0 / 5.5));
  CHECK(dcrm_metric(0.8, 3, 1.5, 0.0, DCRM_VARIANT_FULL, &m) == DCRM_ERR_DOMAIN);
  CHECK(dcrm_metric(0.8, 3, -1.0, 1.0, DCRM_VARIANT_FULL, &m) == DCRM_ERR_DOMAIN);

  const double x[] = {1, 2, 3, 4};
  const double y[] = {8, 6, 4, 2};
  double r = 0;
  REQUIRE(dcrm_pearson(x, y, 4, &r) == DCRM_OK);
  CHECK(r == -1.0);
  const double c[] = {1, 1, 1, 1};
  CHECK(dcrm_pearson(x, c, 4, &r) == DCRM_ERR_DOMAIN);

  const double p[] = {0.5, 0.5};
  const double q[] = {0.25, 0.75};
  double kl = -1;
  REQUIRE(dcrm_kl_divergence(p, p, 2, &kl) == DCRM_OK);
  CHECK(kl == 0.0);
  REQUIRE(dcrm_kl_divergence(p, q, 2, &kl) == DCRM_OK);
  CHECK(kl == doctest::Approx(0.5 * std::log(2.0) + 0.5 * std::log(0.5 / 0.75)));
}

TEST_CASE("pools: load, validate, serialize") {
  Scratch s;
  const auto path = s.put("pools.jsonl", kPools);
  dcrm_pools* pools = nullptr;
  REQUIRE(dcrm_pools_load(path.c_str(), 1, &pools) == DCRM_OK);
  CHECK(dcrm_pools_count(pools) == 3);
  std::size_t n = 99;
  char* report = nullptr;
  REQUIRE(dcrm_pools_validate(pools, 1, &n, &report) == DCRM_OK);
  CHECK(n == 0);
  CHECK(own(report).empty());

  char* text = nullptr;
  REQUIRE(dcrm_pools_serialize(pools, &text) == DCRM_OK);
  const std::string first = own(text);
  CHECK(lines(first) == 3);
  const auto copy = (s.dir / "copy.jsonl").string();
  REQUIRE(dcrm_pools_write(pools, copy.c_str()) == DCRM_OK);
  dcrm_pools* again = nullptr;
  REQUIRE(dcrm_pools_load(copy.c_str(), 1, &again) == DCRM_OK);
  REQUIRE(dcrm_pools_serialize(again, &text) == DCRM_OK);
  CHECK(own(text) == first);
  dcrm_pools_free(again);
  dcrm_pools_free(pools);

  const auto dup = s.put(
      "dup.jsonl",
      R"({"prompt_id":"d","prompt":"x","responses":[{"id":"a","source":"m","text":"t"},{"id":"a","source":"m","text":"u"}]})"
      "\n");
  CHECK(dcrm_pools_load(dup.c_str(), 1, &pools) == DCRM_ERR_VALIDATION);
  REQUIRE(dcrm_pools_load(dup.c_str(), 0, &pools) == DCRM_OK);
  REQUIRE(dcrm_pools_validate(pools, 1, &n, &report) == DCRM_OK);
  const std::string rep = own(report);
  CHECK(n >= 2);  // duplicate id, missing scores
  CHECK(rep.rfind("d\t", 0) == 0);
  dcrm_pools_free(pools);

  CHECK(dcrm_pools_load(s.put("bad.jsonl", "{nope\n").c_str(), 1, &pools) == DCRM_ERR_PARSE);
  CHECK(std::string(dcrm_last_error()).find("line 1") != std::string::npos);
}

TEST_CASE("pairing round trip") {
  Scratch s;
  dcrm_pools* pools = nullptr;
  REQUIRE(dcrm_pools_load(s.put("pools.jsonl", kPools).c_str(), 1, &pools) == DCRM_OK);
  dcrm_pairing_config cfg;
  dcrm_pairing_config_init(&cfg);
  CHECK(cfg.strategy == DCRM_STRATEGY_DCRM);
  CHECK(cfg.variant_flags == DCRM_VARIANT_FULL);
  CHECK(cfg.epsilon == 1.0);

  dcrm_pairs* pairs = nullptr;
  REQUIRE(dcrm_select_pairs(pools, &cfg, 2, &pairs) == DCRM_OK);
  REQUIRE(dcrm_pairs_count(pairs) == 3);
  CHECK(dcrm_pairs_skip_count(pairs) == 0);
  // Equal rewards: every objective is zero and position decides.
  dcrm_pair_metrics tie{};
  REQUIRE(dcrm_pairs_metrics(pairs, 2, &tie) == DCRM_OK);
  CHECK(tie.dcrm == 0.0);
  CHECK(tie.r_delta == 0.0);
  dcrm_pairs_free(pairs);

  // p3 has a single source.
  cfg.cross_source = 1;
  REQUIRE(dcrm_select_pairs(pools, &cfg, 2, &pairs) == DCRM_OK);
  REQUIRE(dcrm_pairs_count(pairs) == 2);
  CHECK(dcrm_pairs_skip_count(pairs) == 1);
  char* skips = nullptr;
  REQUIRE(dcrm_pairs_skip_report(pairs, &skips) == DCRM_OK);
  CHECK(own(skips).rfind("2\tp3\t", 0) == 0);

  char *pid = nullptr, *cid = nullptr, *rid = nullptr;
  REQUIRE(dcrm_pairs_ids(pairs, 0, &pid, &cid, &rid) == DCRM_OK);
  CHECK(own(pid) == "p1");
  CHECK(own(cid) == "a");
  CHECK(own(rid) == "b");
  dcrm_pair_metrics m{};
  REQUIRE(dcrm_pairs_metrics(pairs, 0, &m) == DCRM_OK);
  CHECK(m.e_delta == 1);
  CHECK(m.p_delta == 1.0);
  CHECK(m.r_delta == doctest::Approx(0.7));
  double want = 0;
  REQUIRE(dcrm_metric(m.r_delta, m.e_delta, m.p_delta, 1.0, DCRM_VARIANT_FULL, &want) == DCRM_OK);
  CHECK(m.dcrm == want);
  CHECK(dcrm_pairs_metrics(pairs, 2, &m) == DCRM_ERR_INVALID_ARGUMENT);

  char* text = nullptr;
  REQUIRE(dcrm_pairs_serialize(pairs, &text) == DCRM_OK);
  const std::string first = own(text);
  CHECK(first.find("\"strategy\":\"dcrm_bon2:cross_source\"") != std::string::npos);
  const auto out = (s.dir / "pairs.jsonl").string();
  REQUIRE(dcrm_pairs_write(pairs, out.c_str()) == DCRM_OK);
  dcrm_pairs* loaded = nullptr;
  REQUIRE(dcrm_pairs_load(out.c_str(), &loaded) == DCRM_OK);
  REQUIRE(dcrm_pairs_serialize(loaded, &text) == DCRM_OK);
  CHECK(own(text) == first);

  dcrm_dataset_stats st{};
  REQUIRE(dcrm_pairs_stats(loaded, &st) == DCRM_OK);
  CHECK(st.n_pairs == 2);
  CHECK(st.mean_e_delta == 1.0);
  CHECK(st.mean_r_delta == doctest::Approx(0.55));
  const char* labels[] = {"toy"};
  char* rendered = nullptr;
  REQUIRE(dcrm_stats_render(&st, labels, 1, 100, 1000, DCRM_FORMAT_CSV, &rendered) == DCRM_OK);
  const std::string csv = own(rendered);
  CHECK(csv.rfind("dataset,", 0) == 0);
  CHECK(csv.find("toy,2,") != std::string::npos);
  REQUIRE(dcrm_stats_render(&st, labels, 1, 100, 1000, DCRM_FORMAT_TEXT, &rendered) == DCRM_OK);
  CHECK(own(rendered).find("55.0") != std::string::npos);
  CHECK(dcrm_stats_render(&st, labels, 1, 100, 1000, 9, &rendered) == DCRM_ERR_INVALID_ARGUMENT);

  cfg.strategy = 17;
  CHECK(dcrm_select_pairs(pools, &cfg, 1, &pairs) == DCRM_ERR_INVALID_ARGUMENT);
  dcrm_pairs_free(loaded);
  dcrm_pairs_free(pairs);
  dcrm_pools_free(pools);
}

TEST_CASE("file-level statistics") {
  Scratch s;
  const auto csv = s.put("c.csv", "dataset,x,y\na,1,2\nb,2,4\nc,3,6.5\n");
  double r = 0;
  REQUIRE(dcrm_correlate_csv(csv.c_str(), "x", "y", &r) == DCRM_OK);
  CHECK(r > 0.99);
  CHECK(dcrm_correlate_csv(csv.c_str(), "x", "zz", &r) != DCRM_OK);

  const auto a = s.put("a.jsonl", R"({"tokens":["x","y","x"]})" "\n");
  const auto b = s.put("b.jsonl", R"({"tokens":["y"]})" "\n");
  char* out = nullptr;
  REQUIRE(dcrm_tokendiff_files(a.c_str(), DCRM_SIDE_BOTH, b.c_str(), DCRM_SIDE_BOTH, 5,
                               DCRM_FORMAT_JSON, &out) == DCRM_OK);
  const std::string j = own(out);
  CHECK(j.find("\"x\"") < j.find("\"y\""));
}

TEST_CASE("enrichment and judging through fixtures") {
  Scratch s;
  dcrm_pools* pools = nullptr;
  REQUIRE(dcrm_pools_load(
              s.put("p.jsonl",
                    R"({"prompt_id":"q","prompt":"Q?","responses":[{"id":"a","source":"m1","text":"yes"},{"id":"b","source":"m2","text":"no way"}]})"
                    "\n")
                  .c_str(),
              1, &pools) == DCRM_OK);
  dcrm_endpoint_config ep;
  dcrm_endpoint_config_init(&ep);
  const auto fx = s.put("fx.json",
                        R"({"logprobs":{"yes":-1.0,"no way":[-1.0,-2.5]},"rewards":{"yes":2.0,"no way":-1.0}})");
  ep.fixture_path = fx.c_str();
  dcrm_enrich_stats es{};
  REQUIRE(dcrm_pools_enrich(pools, &ep, DCRM_SCORE_LOGPROB, &es) == DCRM_OK);
  CHECK(es.filled == 2);
  CHECK(es.requests == 0);
  REQUIRE(dcrm_pools_enrich(pools, &ep, DCRM_SCORE_REWARD, &es) == DCRM_OK);
  std::size_t n = 1;
  char* report = nullptr;
  REQUIRE(dcrm_pools_validate(pools, 1, &n, &report) == DCRM_OK);
  own(report);
  CHECK(n == 0);

  dcrm_pairing_config cfg;
  dcrm_pairing_config_init(&cfg);
  dcrm_pairs* pairs = nullptr;
  REQUIRE(dcrm_select_pairs(pools, &cfg, 1, &pairs) == DCRM_OK);
  REQUIRE(dcrm_pairs_count(pairs) == 1);

  char* prompt = nullptr;
  REQUIRE(dcrm_judge_prompt("Q?", "yes", "no way", &prompt) == DCRM_OK);
  CHECK(own(prompt).find("Response y2: no way") != std::string::npos);

  const auto judge = s.put(
      "judge.json",
      R"({"default":{"helpfulness":{"better response":"y1"},"tone":{"better response":"N/A"},"humor":{"better response":"y2"}}})");
  dcrm_endpoint_config jc;
  dcrm_endpoint_config_init(&jc);
  jc.fixture_path = judge.c_str();
  jc.request_template = DCRM_TEMPLATE_JUDGE_COMPLETION;
  dcrm_feature_score score{};
  REQUIRE(dcrm_featurediff(pairs, pools, &jc, 10, 1, 1, DCRM_FORMAT_JSON, &score, &report) ==
          DCRM_OK);
  own(report);
  CHECK(score.n_pairs == 1);
  CHECK(score.n_failures == 0);
  // Constant replies: forward order credits helpfulness, swapped credits nothing.
  CHECK(score.f_rel == doctest::Approx(1.0 / 3.0));
  CHECK(score.f_des == doctest::Approx(1.0 / 6.0));

  dcrm_pools_free(pools);
  dcrm_pools_load(s.put("e.jsonl", "").c_str(), 1, &pools);
  ep.fixture_path = nullptr;
  CHECK(dcrm_pools_enrich(pools, &ep, DCRM_SCORE_REWARD, &es) == DCRM_ERR_INVALID_ARGUMENT);
  dcrm_pairs_free(pairs);
  dcrm_pools_free(pools);

  char* key = nullptr;
  REQUIRE(dcrm_cache_key("p", "r", "m", &key) == DCRM_OK);
  CHECK(own(key).size() == 64);
}
