#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace dcrm {

// Tokens are opaque symbols compared by equality. Integer ids and strings
// are distinct symbols even when they print the same.
using Token = std::variant<std::int64_t, std::string>;
using TokenSeq = std::vector<Token>;

std::string token_to_string(const Token& token);

struct Response {
  std::string id;
  std::string source;
  std::string text;
  TokenSeq tokens;
  // Sum of per-token conditional log-probabilities under the reference model.
  std::optional<double> logprob;
  std::optional<double> reward;

  bool scored() const noexcept { return logprob.has_value() && reward.has_value(); }

  friend bool operator==(const Response&, const Response&) = default;
};

struct ResponsePool {
  std::string prompt_id;
  std::string prompt;
  // Order is significant: pairing breaks ties by position.
  std::vector<Response> responses;

  friend bool operator==(const ResponsePool&, const ResponsePool&) = default;
};

struct PairMetrics {
  std::uint64_t e_delta = 0;  // token edit operations
  double p_delta = 0.0;       // |logprob difference|, nats
  double r_delta = 0.0;       // chosen minus rejected reward
  double dcrm = 0.0;
  double epsilon = 1.0;

  friend bool operator==(const PairMetrics&, const PairMetrics&) = default;
};

// Which terms enter the margin metric. The full metric uses all three;
// dropping `use_r` turns it into an inverse-distance score.
struct DcrmVariant {
  bool use_e = true;
  bool use_p = true;
  bool use_r = true;
  // Per-term scale on the distance terms. Both stay at 1 unless a corpus
  // needs e and p brought onto a common scale.
  double weight_e = 1.0;
  double weight_p = 1.0;

  static DcrmVariant full() { return {}; }

  friend bool operator==(const DcrmVariant&, const DcrmVariant&) = default;
};

struct PreferencePair {
  std::string prompt_id;
  Response chosen;
  Response rejected;
  PairMetrics metrics;
  std::string strategy;

  friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

}  // namespace dcrm
