#pragma once

// JSON-Lines ingestion and serialization for response pools and preference
// pairs.
//
// Pool line:
//   {"prompt_id": str, "prompt": str,
//    "responses": [{"id": str, "source": str, "text": str,
//                   "tokens": [int|str]?, "logprob": float?, "reward": float?}]}
//
// Pair line (fields always written in this order):
//   {"prompt_id": str, "strategy": str, "chosen": <response>,
//    "rejected": <response>,
//    "metrics": {"e_delta": int, "p_delta": float, "r_delta": float, "dcrm": float}}

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dcrm/types.hpp"

namespace dcrm {

// Splits on runs of ASCII whitespace. Used when a record carries no tokens.
TokenSeq whitespace_tokenize(std::string_view text);

struct ParseOptions {
  // Strict parsing rejects pools with fewer than two responses or duplicate
  // ids. Lenient parsing keeps them so validate_pool can report them.
  bool strict = true;
};

ResponsePool parse_pool_line(std::string_view line, std::size_t line_no,
                             const ParseOptions& options = {});
std::vector<ResponsePool> parse_pool_file(const std::filesystem::path& path,
                                          const ParseOptions& options = {});

struct Violation {
  std::string response_id;  // empty for pool-level violations
  std::string message;

  friend bool operator==(const Violation&, const Violation&) = default;
};

std::vector<Violation> validate_pool(const ResponsePool& pool, bool require_scores);

std::string serialize_pool(const ResponsePool& pool);
void write_pools(std::span<const ResponsePool> pools, const std::filesystem::path& path);

std::string serialize_pair(const PreferencePair& pair);
void write_pairs(std::span<const PreferencePair> pairs, const std::filesystem::path& path);

PreferencePair parse_pair_line(std::string_view line, std::size_t line_no);
std::vector<PreferencePair> read_pairs(const std::filesystem::path& path);

}  // namespace dcrm
