#include <doctest.h>

#include "dcrm/data_model.hpp"
#include "dcrm/error.hpp"
#include "support/testkit.hpp"

using namespace dcrm;

namespace {

const char* kTwoPools =
    R"({"prompt_id":"p1","prompt":"x","responses":[{"id":"a","source":"m1","text":"a b a","logprob":-1.5,"reward":0.25},{"id":"b","source":"m2","text":"c","tokens":[7,"c"],"reward":1}]})"
    "\n"
    R"({"prompt_id":"p2","prompt":"y","responses":[{"id":"a","source":"m1","text":"q"},{"id":"b","source":"m1","text":"r"}]})"
    "\n";

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::invalid_argument;
}

}  // namespace

TEST_CASE("pool file parses in order with token fallback") {
  testkit::TempDir dir;
  testkit::write_file(dir / "pools.jsonl", kTwoPools);
  const auto pools = parse_pool_file(dir / "pools.jsonl");
  REQUIRE(pools.size() == 2);
  CHECK(pools[0].prompt_id == "p1");
  CHECK(pools[1].prompt_id == "p2");
  const auto& a = pools[0].responses[0];
  CHECK(a.tokens == TokenSeq{std::string("a"), std::string("b"), std::string("a")});
  CHECK(a.logprob == -1.5);
  CHECK(a.reward == 0.25);
  const auto& b = pools[0].responses[1];
  CHECK(b.tokens == TokenSeq{std::int64_t{7}, std::string("c")});
  CHECK_FALSE(b.logprob.has_value());
  CHECK_FALSE(pools[1].responses[0].scored());
}

TEST_CASE("integer and string tokens are distinct symbols") {
  CHECK(Token{std::int64_t{1}} != Token{std::string("1")});
}

TEST_CASE("blank lines are skipped and line numbers count them") {
  testkit::TempDir dir;
  testkit::write_file(dir / "p.jsonl", std::string("\n") + kTwoPools + "\n{\"prompt_id\":\"z\"}\n");
  try {
    parse_pool_file(dir / "p.jsonl");
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::parse);
    CHECK(std::string(e.what()).find("line 5") != std::string::npos);
  }
}

TEST_CASE("schema violations name the line") {
  try {
    parse_pool_line(R"({"prompt_id":"p","prompt":"x"})", 1);
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::parse);
    const std::string msg = e.what();
    CHECK(msg.find("line 1") != std::string::npos);
    CHECK(msg.find("responses") != std::string::npos);
  }
  CHECK(kind_of([] { parse_pool_line("{not json", 3); }) == ErrorKind::parse);
  CHECK(kind_of([] {
          parse_pool_line(R"({"prompt_id":"p","prompt":"x","responses":[{"id":"a","source":"s","text":"t","tokens":[1.5]}]})", 1);
        }) == ErrorKind::parse);
  CHECK(kind_of([] {
          parse_pool_line(R"({"prompt_id":"p","prompt":"x","responses":[{"id":"a","source":"s","text":"t","reward":"high"}]})", 1);
        }) == ErrorKind::parse);
}

TEST_CASE("strict parsing rejects small pools and duplicate ids; lenient keeps them") {
  const char* dup =
      R"({"prompt_id":"p","prompt":"x","responses":[{"id":"r1","source":"s","text":"a"},{"id":"r1","source":"s","text":"b"}]})";
  const char* single = R"({"prompt_id":"p","prompt":"x","responses":[{"id":"r1","source":"s","text":"a"}]})";
  CHECK(kind_of([&] { parse_pool_line(dup, 1); }) == ErrorKind::validation);
  CHECK(kind_of([&] { parse_pool_line(single, 1); }) == ErrorKind::validation);
  const ParseOptions lenient{false};
  CHECK(parse_pool_line(dup, 1, lenient).responses.size() == 2);
  CHECK(parse_pool_line(single, 1, lenient).responses.size() == 1);
}

TEST_CASE("missing file is an I/O error") {
  CHECK(kind_of([] { parse_pool_file("/nonexistent/dir/pools.jsonl"); }) == ErrorKind::io);
}

TEST_CASE("validate_pool") {
  ResponsePool pool;
  pool.prompt_id = "p";
  for (const char* id : {"r0", "r1"}) {
    Response r;
    r.id = id;
    r.source = "m";
    r.text = "t";
    r.tokens = {std::string("t")};
    r.logprob = -1.0;
    r.reward = 0.0;
    pool.responses.push_back(r);
  }

  SUBCASE("fully scored pool is clean") { CHECK(validate_pool(pool, true).empty()); }

  SUBCASE("duplicate id reported once, naming it") {
    pool.responses[0].id = "r1";
    pool.responses.push_back(pool.responses[1]);
    const auto v = validate_pool(pool, false);
    REQUIRE(v.size() == 1);
    CHECK(v[0].response_id == "r1");
    CHECK(v[0].message.find("r1") != std::string::npos);
  }

  SUBCASE("one violation per missing field") {
    for (auto& r : pool.responses) {
      r.logprob.reset();
      r.reward.reset();
    }
    CHECK(validate_pool(pool, true).size() == 4);
    CHECK(validate_pool(pool, false).empty());
  }

  SUBCASE("type invariants") {
    pool.responses[0].logprob = 0.5;
    pool.responses[1].tokens.clear();
    const auto v = validate_pool(pool, false);
    CHECK(v.size() == 2);
    pool.responses.pop_back();
    CHECK(validate_pool(pool, false).size() == 2);
  }
}

TEST_CASE("pool round trip on random pools") {
  testkit::Gen g(7);
  std::vector<ResponsePool> pools;
  for (int i = 0; i < 50; ++i) {
    auto pool = testkit::random_pool(g, 2 + g.index(5), "p" + std::to_string(i));
    if (g.coin()) pool.responses[0].logprob.reset();
    if (g.coin()) pool.responses[1].tokens = {std::int64_t{g.between(-5, 5)}, std::string("é\"\\")};
    pools.push_back(std::move(pool));
  }
  testkit::TempDir dir;
  write_pools(pools, dir / "a.jsonl");
  const auto back = parse_pool_file(dir / "a.jsonl");
  CHECK(back == pools);
  write_pools(back, dir / "b.jsonl");
  CHECK(testkit::read_file(dir / "a.jsonl") == testkit::read_file(dir / "b.jsonl"));
}

TEST_CASE("whitespace tokenizer is idempotent under re-joining") {
  testkit::Gen g(11);
  const std::string alphabet = "ab \t\n c";
  for (int i = 0; i < 300; ++i) {
    std::string text;
    const auto len = g.index(30);
    for (std::size_t k = 0; k < len; ++k) text += alphabet[g.index(alphabet.size())];
    const auto once = whitespace_tokenize(text);
    CHECK(whitespace_tokenize(testkit::join_tokens(once)) == once);
  }
  CHECK(whitespace_tokenize("").empty());
  CHECK(whitespace_tokenize("  \t ").empty());
}

TEST_CASE("pair files") {
  testkit::TempDir dir;
  testkit::Gen g(3);
  std::vector<PreferencePair> pairs;
  for (int i = 0; i < 3; ++i) {
    const auto pool = testkit::random_pool(g, 2, "p" + std::to_string(i));
    PreferencePair p;
    p.prompt_id = pool.prompt_id;
    p.chosen = pool.responses[0];
    p.rejected = pool.responses[1];
    p.metrics = {4, 2.5, 0.8, 0.0448, 1.0};
    p.strategy = "dcrm_bon2";
    pairs.push_back(p);
  }

  SUBCASE("empty sequence gives an empty file") {
    write_pairs({}, dir / "e.jsonl");
    CHECK(testkit::read_file(dir / "e.jsonl").empty());
  }

  SUBCASE("three pairs, three lines, order kept, byte-identical rewrite, round trip") {
    write_pairs(pairs, dir / "a.jsonl");
    write_pairs(pairs, dir / "b.jsonl");
    const auto text = testkit::read_file(dir / "a.jsonl");
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);
    CHECK(text == testkit::read_file(dir / "b.jsonl"));
    CHECK(text.rfind(R"({"prompt_id":"p0","strategy":"dcrm_bon2","chosen":{"id":)", 0) == 0);
    CHECK(read_pairs(dir / "a.jsonl") == pairs);
  }
}
