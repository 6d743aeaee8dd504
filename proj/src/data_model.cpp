#include "dcrm/data_model.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dcrm/error.hpp"

namespace dcrm {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid argument";
    case ErrorKind::io: return "I/O error";
    case ErrorKind::parse: return "parse error";
    case ErrorKind::validation: return "validation error";
    case ErrorKind::domain: return "domain error";
    case ErrorKind::transport: return "transport error";
    case ErrorKind::protocol: return "protocol error";
  }
  return "error";
}

std::string token_to_string(const Token& token) {
  if (const auto* i = std::get_if<std::int64_t>(&token)) return std::to_string(*i);
  return std::get<std::string>(token);
}

TokenSeq whitespace_tokenize(std::string_view text) {
  TokenSeq out;
  auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  };
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) out.emplace_back(std::string(text.substr(start, i - start)));
  }
  return out;
}

namespace {

[[noreturn]] void fail_line(std::size_t line_no, const std::string& what,
                            ErrorKind kind = ErrorKind::parse) {
  throw Error(kind, "line " + std::to_string(line_no) + ": " + what);
}

const json& require(const json& obj, const char* key, std::size_t line_no,
                    const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) fail_line(line_no, where + "missing field `" + key + "`");
  return *it;
}

std::string require_string(const json& obj, const char* key, std::size_t line_no,
                           const std::string& where) {
  const json& v = require(obj, key, line_no, where);
  if (!v.is_string()) fail_line(line_no, where + "field `" + key + "` must be a string");
  return v.get<std::string>();
}

std::optional<double> optional_number(const json& obj, const char* key, std::size_t line_no,
                                      const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) fail_line(line_no, where + "field `" + key + "` must be a number");
  return it->get<double>();
}

TokenSeq parse_tokens(const json& arr, std::size_t line_no, const std::string& where) {
  if (!arr.is_array()) fail_line(line_no, where + "field `tokens` must be an array");
  TokenSeq out;
  out.reserve(arr.size());
  for (const auto& t : arr) {
    if (t.is_number_integer()) {
      out.emplace_back(t.get<std::int64_t>());
    } else if (t.is_string()) {
      out.emplace_back(t.get<std::string>());
    } else {
      fail_line(line_no, where + "tokens must be integers or strings");
    }
  }
  return out;
}

Response parse_response(const json& r, std::size_t line_no, std::size_t index) {
  std::string where = "response " + std::to_string(index) + ": ";
  if (!r.is_object()) fail_line(line_no, where + "expected an object");
  Response out;
  out.id = require_string(r, "id", line_no, where);
  where = "response `" + out.id + "`: ";
  out.source = require_string(r, "source", line_no, where);
  out.text = require_string(r, "text", line_no, where);
  auto tokens = r.find("tokens");
  if (tokens != r.end() && !tokens->is_null()) {
    out.tokens = parse_tokens(*tokens, line_no, where);
  } else {
    out.tokens = whitespace_tokenize(out.text);
  }
  out.logprob = optional_number(r, "logprob", line_no, where);
  out.reward = optional_number(r, "reward", line_no, where);
  return out;
}

ordered_json tokens_to_json(const TokenSeq& tokens) {
  ordered_json arr = ordered_json::array();
  for (const auto& t : tokens) {
    std::visit([&](const auto& v) { arr.push_back(v); }, t);
  }
  return arr;
}

ordered_json response_to_json(const Response& r) {
  ordered_json o;
  o["id"] = r.id;
  o["source"] = r.source;
  o["text"] = r.text;
  o["tokens"] = tokens_to_json(r.tokens);
  if (r.logprob) o["logprob"] = *r.logprob;
  if (r.reward) o["reward"] = *r.reward;
  return o;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  return out;
}

void finish_output(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

bool blank(std::string_view line) {
  return line.find_first_not_of(" \t\r\n") == std::string_view::npos;
}

}  // namespace

ResponsePool parse_pool_line(std::string_view line, std::size_t line_no,
                             const ParseOptions& options) {
  json doc;
  try {
    doc = json::parse(line);
  } catch (const json::parse_error& e) {
    fail_line(line_no, std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) fail_line(line_no, "expected a JSON object");

  ResponsePool pool;
  pool.prompt_id = require_string(doc, "prompt_id", line_no, "");
  pool.prompt = require_string(doc, "prompt", line_no, "");
  const json& responses = require(doc, "responses", line_no, "");
  if (!responses.is_array()) fail_line(line_no, "field `responses` must be an array");
  for (std::size_t i = 0; i < responses.size(); ++i) {
    pool.responses.push_back(parse_response(responses[i], line_no, i));
  }

  if (options.strict) {
    if (pool.responses.size() < 2) {
      fail_line(line_no, "pool `" + pool.prompt_id + "` has fewer than 2 responses",
                ErrorKind::validation);
    }
    std::set<std::string> seen;
    for (const auto& r : pool.responses) {
      if (!seen.insert(r.id).second) {
        fail_line(line_no, "pool `" + pool.prompt_id + "` has duplicate response id `" + r.id + "`",
                  ErrorKind::validation);
      }
    }
  }
  return pool;
}

std::vector<ResponsePool> parse_pool_file(const std::filesystem::path& path,
                                          const ParseOptions& options) {
  auto in = open_input(path);
  std::vector<ResponsePool> pools;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    pools.push_back(parse_pool_line(line, line_no, options));
  }
  if (in.bad()) throw Error(ErrorKind::io, "read failed for " + path.string());
  return pools;
}

std::vector<Violation> validate_pool(const ResponsePool& pool, bool require_scores) {
  std::vector<Violation> out;
  if (pool.responses.size() < 2) {
    out.push_back({"", "pool `" + pool.prompt_id + "` has " +
                           std::to_string(pool.responses.size()) +
                           " response(s); at least 2 required"});
  }
  std::set<std::string> seen;
  std::set<std::string> reported;
  for (const auto& r : pool.responses) {
    if (!seen.insert(r.id).second && reported.insert(r.id).second) {
      out.push_back({r.id, "duplicate response id `" + r.id + "`"});
    }
  }
  for (const auto& r : pool.responses) {
    if (!r.text.empty() && r.tokens.empty()) {
      out.push_back({r.id, "response `" + r.id + "` has text but no tokens"});
    }
    if (r.logprob) {
      if (!std::isfinite(*r.logprob)) {
        out.push_back({r.id, "response `" + r.id + "` has a non-finite logprob"});
      } else if (*r.logprob > 0.0) {
        out.push_back({r.id, "response `" + r.id + "` has logprob > 0"});
      }
    } else if (require_scores) {
      out.push_back({r.id, "response `" + r.id + "` is missing logprob"});
    }
    if (r.reward) {
      if (!std::isfinite(*r.reward)) {
        out.push_back({r.id, "response `" + r.id + "` has a non-finite reward"});
      }
    } else if (require_scores) {
      out.push_back({r.id, "response `" + r.id + "` is missing reward"});
    }
  }
  return out;
}

std::string serialize_pool(const ResponsePool& pool) {
  ordered_json o;
  o["prompt_id"] = pool.prompt_id;
  o["prompt"] = pool.prompt;
  o["responses"] = ordered_json::array();
  for (const auto& r : pool.responses) o["responses"].push_back(response_to_json(r));
  return o.dump();
}

void write_pools(std::span<const ResponsePool> pools, const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const auto& p : pools) out << serialize_pool(p) << '\n';
  finish_output(out, path);
}

std::string serialize_pair(const PreferencePair& pair) {
  ordered_json o;
  o["prompt_id"] = pair.prompt_id;
  o["strategy"] = pair.strategy;
  o["chosen"] = response_to_json(pair.chosen);
  o["rejected"] = response_to_json(pair.rejected);
  ordered_json m;
  m["e_delta"] = pair.metrics.e_delta;
  m["p_delta"] = pair.metrics.p_delta;
  m["r_delta"] = pair.metrics.r_delta;
  m["dcrm"] = pair.metrics.dcrm;
  o["metrics"] = std::move(m);
  return o.dump();
}

void write_pairs(std::span<const PreferencePair> pairs, const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const auto& p : pairs) out << serialize_pair(p) << '\n';
  finish_output(out, path);
}

PreferencePair parse_pair_line(std::string_view line, std::size_t line_no) {
  json doc;
  try {
    doc = json::parse(line);
  } catch (const json::parse_error& e) {
    fail_line(line_no, std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) fail_line(line_no, "expected a JSON object");

  PreferencePair pair;
  pair.prompt_id = require_string(doc, "prompt_id", line_no, "");
  pair.strategy = require_string(doc, "strategy", line_no, "");
  pair.chosen = parse_response(require(doc, "chosen", line_no, ""), line_no, 0);
  pair.rejected = parse_response(require(doc, "rejected", line_no, ""), line_no, 1);
  const json& m = require(doc, "metrics", line_no, "");
  if (!m.is_object()) fail_line(line_no, "field `metrics` must be an object");
  const json& e = require(m, "e_delta", line_no, "metrics: ");
  if (!e.is_number_integer() || e.get<std::int64_t>() < 0) {
    fail_line(line_no, "metrics: `e_delta` must be a non-negative integer");
  }
  pair.metrics.e_delta = e.get<std::uint64_t>();
  auto number = [&](const char* key) {
    auto v = optional_number(m, key, line_no, "metrics: ");
    if (!v) fail_line(line_no, std::string("metrics: missing field `") + key + "`");
    if (!std::isfinite(*v)) fail_line(line_no, std::string("metrics: `") + key + "` not finite");
    return *v;
  };
  pair.metrics.p_delta = number("p_delta");
  pair.metrics.r_delta = number("r_delta");
  pair.metrics.dcrm = number("dcrm");
  if (pair.chosen.id == pair.rejected.id) {
    fail_line(line_no, "chosen and rejected share id `" + pair.chosen.id + "`",
              ErrorKind::validation);
  }
  return pair;
}

std::vector<PreferencePair> read_pairs(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<PreferencePair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    pairs.push_back(parse_pair_line(line, line_no));
  }
  if (in.bad()) throw Error(ErrorKind::io, "read failed for " + path.string());
  return pairs;
}

}  // namespace dcrm
