#include <doctest.h>

#include <algorithm>
#include <set>

#include "dcrm/error.hpp"
#include "dcrm/judge.hpp"
#include "support/mock_server.hpp"
#include "support/testkit.hpp"

using namespace dcrm;
using nlohmann::json;

namespace {

// Reference feature lists, transcribed separately from the library catalog.
const std::set<std::string> kRelevant{"helpfulness",    "correctness",          "factuality",
                                      "coherence",      "verbosity",            "instruction following",
                                      "truthfulness",   "honesty",              "harmlessness",
                                      "code complexity", "code readability"};
const std::set<std::string> kIrrelevant{
    "writing style",        "tone",           "politeness",
    "friendliness",         "caring or not",  "intimacy",
    "empathy",              "language type",  "casual or formal",
    "authoritative or not", "creativity",     "certainty",
    "humor",                "passive or active", "pessimistic or optimistic",
    "explicit or implicit", "sarcastic or not", "passion",
    "repetitiveness",       "word usage diversity", "structure of presentation",
    "other"};

const char* kHandTrace = R"({
  "helpfulness": {"justification": "more complete", "better response": "y1"},
  "tone": {"justification": "warmer", "better response": "Not applicable"},
  "verbosity": {"justification": "longer", "better response": "y2"}
})";

std::string verdict_json(const std::vector<std::pair<std::string, std::string>>& fs) {
  nlohmann::ordered_json o = nlohmann::ordered_json::object();
  for (const auto& [name, better] : fs) {
    o[name] = {{"justification", "because"}, {"better response", better}};
  }
  return o.dump();
}

// Mirrors a fixed verdict so that it always describes the same responses:
// the direction label follows whichever slot the preferred response is in.
class MirrorJudge final : public Judge {
 public:
  std::string complete(std::string_view, std::string_view, std::string_view y1,
                       std::string_view) override {
    const bool preferred_first = y1.rfind("GOOD", 0) == 0;
    const std::string good = preferred_first ? "y1" : "y2";
    const std::string bad = preferred_first ? "y2" : "y1";
    return verdict_json({{"helpfulness", good}, {"tone", "Not applicable"}, {"verbosity", bad}});
  }
};

// Relevant-only verdicts for pairs whose query ends in an even digit,
// irrelevant-only otherwise.
class PlantedJudge final : public Judge {
 public:
  std::string complete(std::string_view, std::string_view x, std::string_view,
                       std::string_view) override {
    const bool even = (x.back() - '0') % 2 == 0;
    if (even) return verdict_json({{"correctness", "y1"}, {"coherence", "y1"}, {"honesty", "y2"}});
    return verdict_json({{"tone", "y1"}, {"humor", "y1"}, {"empathy", "y1"}});
  }
};

class FailingJudge final : public Judge {
 public:
  explicit FailingJudge(std::size_t every) : every_(every) {}
  std::string complete(std::string_view, std::string_view x, std::string_view,
                       std::string_view) override {
    if (std::stoul(std::string(x.substr(1))) % every_ == 0) return "I cannot answer that.";
    return kHandTrace;
  }

 private:
  std::size_t every_;
};

std::vector<JudgedPair> corpus(std::size_t n) {
  std::vector<JudgedPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = std::to_string(i);
    out.push_back({"p" + id, "q" + id, "GOOD answer " + id, "BAD answer " + id});
  }
  return out;
}

}  // namespace

TEST_CASE("catalog matches the reference feature lists") {
  const auto& c = FeatureCatalog::standard();
  CHECK(std::set<std::string>(c.relevant().begin(), c.relevant().end()) == kRelevant);
  CHECK(std::set<std::string>(c.irrelevant().begin(), c.irrelevant().end()) == kIrrelevant);
  CHECK(c.relevant().size() == 11);
  CHECK(c.irrelevant().size() == 22);
  CHECK(c.prompt_features().size() == 32);
  for (const auto& f : c.relevant()) CHECK(kIrrelevant.count(f) == 0);
  CHECK(c.normalize("  Instruction_Following ") == "instruction following");
  CHECK(c.normalize("\"Helpfulness\"") == "helpfulness");
  CHECK(c.normalize("wittiness") == "other");
}

TEST_CASE("judge prompt") {
  const auto p = render_judge_prompt("What is 2+2?", "Four.", "It is 4, obviously.");
  CHECK(p.find("top 3 most prominent features") != std::string::npos);
  CHECK(p.find("{x}") == std::string::npos);
  CHECK(p.find("{y1}") == std::string::npos);
  CHECK(p.find("{y2}") == std::string::npos);
  CHECK(p.find("Query x: What is 2+2?") != std::string::npos);
  CHECK(p.find("Response y1: Four.") != std::string::npos);
  CHECK(p.rfind("Answer:\n") == p.size() - 8);

  // The brace-delimited list and the catalog contain each other.
  const auto open = p.find("{explicit");
  const auto close = p.find('}', open);
  REQUIRE(open != std::string::npos);
  const std::string listed = p.substr(open + 1, close - open - 1);
  std::set<std::string> in_prompt;
  std::size_t start = 0;
  while (start < listed.size()) {
    auto comma = listed.find(", ", start);
    if (comma == std::string::npos) comma = listed.size();
    in_prompt.insert(listed.substr(start, comma - start));
    start = comma + 2;
  }
  const auto& c = FeatureCatalog::standard();
  CHECK(in_prompt == std::set<std::string>(c.prompt_features().begin(), c.prompt_features().end()));
  std::set<std::string> all = kRelevant;
  all.insert(kIrrelevant.begin(), kIrrelevant.end());
  all.erase("other");
  CHECK(in_prompt == all);

  // Swapping responses only touches the two response blocks.
  const auto q = render_judge_prompt("What is 2+2?", "It is 4, obviously.", "Four.");
  const auto head = p.find("Response y1: ");
  CHECK(p.substr(0, head) == q.substr(0, head));
  CHECK(q.find("Response y1: It is 4, obviously.") != std::string::npos);
  CHECK(q.find("Response y2: Four.") != std::string::npos);
}

TEST_CASE("verdict parsing") {
  const auto plain = parse_verdict(kHandTrace, false);
  CHECK(plain.features[0].name == "helpfulness");
  CHECK(plain.features[0].better == Better::preferred);
  CHECK(plain.features[1].better == Better::not_applicable);
  CHECK(plain.features[2].better == Better::other);
  CHECK(plain.features[0].justification == "more complete");

  const auto fenced = parse_verdict(std::string("Here you go:\n```json\n") + kHandTrace + "\n```\nHope this helps.", false);
  CHECK(fenced.features[0].name == plain.features[0].name);
  CHECK(fenced.features[2].better == plain.features[2].better);

  const auto prose = parse_verdict(std::string("Sure! ") + kHandTrace + " Let me know.", false);
  CHECK(prose.features[1].name == "tone");

  const auto swapped = parse_verdict(kHandTrace, true);
  CHECK(swapped.features[0].better == Better::other);
  CHECK(swapped.features[2].better == Better::preferred);
  CHECK(swapped.order_swapped);

  const auto listed = parse_verdict(
      R"({"features":[{"feature":"Wittiness","justification":"j","better response":"y1"},
                      {"feature":"feature 2: Correctness","better":"y2"},
                      {"name":"honesty","better_response":"N/A"},
                      {"feature":"tone"}]})",
      false);
  CHECK(listed.features[0].name == "other");
  CHECK(listed.features[1].name == "correctness");
  CHECK(listed.features[1].better == Better::other);
  CHECK(listed.features[2].better == Better::not_applicable);

  const auto numbered = parse_verdict(
      R"({"feature 1: helpfulness": {"better response": "y1"}, "feature 2: tone": {}, "feature 3: verbosity": {"better response": "y2"}})",
      false);
  CHECK(numbered.features[0].name == "helpfulness");
  CHECK(numbered.features[2].name == "verbosity");

  for (const char* bad : {"no json here", "{\"helpfulness\": {}}", "```\n{broken\n```"}) {
    try {
      parse_verdict(bad, false);
      FAIL("expected parse error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::parse);
      CHECK(std::string(e.what()).find(bad) != std::string::npos);
    }
  }
  CHECK_THROWS_AS(parse_verdict(R"({"a":{"better":"y3"},"b":{},"c":{}})", false), Error);
}

TEST_CASE("hand trace scores (2/3, 1/3)") {
  const auto v = parse_verdict(kHandTrace, false);
  const auto s = score_verdict(v);
  CHECK(s.f_rel == 2.0 / 3.0);
  CHECK(s.f_des == 1.0 / 3.0);
  const auto irrelevant = parse_verdict(verdict_json({{"tone", "y1"}, {"humor", "y2"}, {"odd", "y1"}}), false);
  CHECK(score_verdict(irrelevant).f_rel == 0.0);
  CHECK(score_verdict(irrelevant).f_des == 0.0);
  // Consistent content in both orders averages to itself.
  const auto mirrored = parse_verdict(
      verdict_json({{"helpfulness", "y2"}, {"tone", "Not applicable"}, {"verbosity", "y1"}}), true);
  const auto pair = score_pair(v, mirrored);
  CHECK(pair.f_rel == s.f_rel);
  CHECK(pair.f_des == s.f_des);
}

TEST_CASE("f_des <= f_rel <= 1 on random verdicts") {
  testkit::Gen g(55);
  const auto& c = FeatureCatalog::standard();
  const std::vector<std::string> dirs{"y1", "y2", "Not applicable"};
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::pair<std::string, std::string>> fs;
    for (int k = 0; k < 3; ++k) {
      // Numbered keys keep duplicates distinct inside the JSON object.
      const auto name = g.coin(0.1) ? std::string("invented")
                                    : c.prompt_features()[g.index(c.prompt_features().size())];
      fs.push_back({"feature " + std::to_string(k + 1) + ": " + name, dirs[g.index(3)]});
    }
    const auto v = parse_verdict(verdict_json(fs), g.coin());
    const auto s = score_verdict(v);
    CHECK(s.f_des <= s.f_rel);
    CHECK(s.f_rel <= 1.0);
    CHECK(s.f_des >= 0.0);
  }
}

TEST_CASE("sampling") {
  CHECK(sample_indices(5, 10, 1) == std::vector<std::size_t>{0, 1, 2, 3, 4});
  const auto a = sample_indices(1000, 200, 42);
  CHECK(a == sample_indices(1000, 200, 42));
  CHECK(a != sample_indices(1000, 200, 43));
  CHECK(a.size() == 200);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
  CHECK(a.back() < 1000);
}

TEST_CASE("score_corpus") {
  SUBCASE("constant verdict equals the single-pair score") {
    struct Constant final : Judge {
      std::string complete(std::string_view, std::string_view, std::string_view,
                           std::string_view) override {
        return kHandTrace;
      }
    } judge;
    const auto pairs = corpus(50);
    const auto r = score_corpus(pairs, judge, 20, 42);
    const auto single = score_pair(parse_verdict(kHandTrace, false), parse_verdict(kHandTrace, true));
    CHECK(r.score.f_rel == doctest::Approx(single.f_rel).epsilon(1e-15));
    CHECK(r.score.f_des == doctest::Approx(single.f_des).epsilon(1e-15));
    CHECK(r.score.n_pairs == 20);
    CHECK(r.failures.empty());
  }
  SUBCASE("fixed seed reruns give identical reports") {
    MirrorJudge judge;
    const auto pairs = corpus(300);
    const auto a = score_corpus(pairs, judge, 40, 7, 1);
    const auto b = score_corpus(pairs, judge, 40, 7, 4);
    CHECK(a.sampled_ids == b.sampled_ids);
    CHECK(render_feature_report(a, OutputFormat::json) == render_feature_report(b, OutputFormat::json));
  }
  SUBCASE("position-unbiased judge: forward and swapped agree") {
    MirrorJudge judge;
    const auto pairs = corpus(10);
    const auto& p = pairs[0];
    const auto fwd = parse_verdict(judge.complete("", p.x, p.preferred, p.other), false);
    const auto swp = parse_verdict(judge.complete("", p.x, p.other, p.preferred), true);
    CHECK(score_verdict(fwd).f_rel == score_verdict(swp).f_rel);
    CHECK(score_verdict(fwd).f_des == score_verdict(swp).f_des);
    const auto r = score_corpus(pairs, judge, 10, 1);
    CHECK(r.score.f_rel == doctest::Approx(2.0 / 3.0));
    CHECK(r.score.f_des == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("planted 50% relevant") {
    PlantedJudge judge;
    const auto pairs = corpus(200);
    const auto r = score_corpus(pairs, judge, 200, 42, 3);
    CHECK(r.score.f_rel == 0.5);
    CHECK(r.score.n_pairs == 200);
    CHECK(r.score.f_des <= r.score.f_rel);
    // Distribution counts every feature of both orders.
    std::size_t total = 0;
    for (const auto& c : r.distribution) total += c.count;
    CHECK(total == 200 * 2 * 3);
  }
  SUBCASE("failures up to 10% are reported, beyond that abort") {
    const auto pairs = corpus(100);
    FailingJudge tenth(10);
    const auto r = score_corpus(pairs, tenth, 100, 1);
    CHECK(r.failures.size() == 10);
    CHECK(r.score.n_pairs == 90);
    CHECK(r.failures[0].error.find("raw payload") != std::string::npos);
    FailingJudge fifth(5);
    try {
      score_corpus(pairs, fifth, 100, 1);
      FAIL("expected abort");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::domain);
    }
  }
  SUBCASE("empty corpus") {
    MirrorJudge judge;
    CHECK_THROWS_AS(score_corpus({}, judge, 10, 1), Error);
  }
}

TEST_CASE("category distribution for KL comparisons") {
  PlantedJudge judge;
  const auto r = score_corpus(corpus(20), judge, 20, 3);
  const std::vector<std::pair<std::string, Better>> order{
      {"correctness", Better::preferred}, {"tone", Better::preferred}, {"passion", Better::preferred}};
  const auto d = category_distribution(r, order);
  REQUIRE(d.size() == 3);
  CHECK(d[2] == 0.0);
  CHECK(d[0] > 0.0);
}

TEST_CASE("fixture and http judges") {
  testkit::TempDir dir;
  const std::string key = judge_key("q", "a", "b");
  testkit::write_file(dir / "judge.json",
                      json{{"verdicts", {{key, json::parse(kHandTrace)}}},
                           {"default", verdict_json({{"tone", "y1"}, {"humor", "y1"}, {"passion", "y1"}})}}
                          .dump());
  FixtureJudge fixture(dir / "judge.json");
  CHECK(parse_verdict(fixture.complete("", "q", "a", "b"), false).features[0].name == "helpfulness");
  CHECK(parse_verdict(fixture.complete("", "q", "b", "a"), false).features[0].name == "tone");
  CHECK(judge_key("q", "a", "b") != judge_key("q", "b", "a"));

  testkit::MockServer server;
  server.on("/judge", [](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    CHECK(body["temperature"] == 0);
    CHECK(body["prompt"].get<std::string>().find("top 3 most prominent") != std::string::npos);
    res.set_content(json{{"choices", {{{"text", std::string("```json\n") + kHandTrace + "\n```"}}}}}.dump(),
                    "application/json");
  });
  server.start();
  EndpointConfig cfg;
  cfg.base_url = server.url("/judge");
  cfg.model_name = "judge";
  cfg.request_template = RequestTemplate::judge_completion;
  auto judge = make_judge(cfg);
  const auto r = score_corpus(corpus(5), *judge, 5, 9, 2);
  CHECK(r.score.n_pairs == 5);
  CHECK(server.count("/judge") == 10);
}
