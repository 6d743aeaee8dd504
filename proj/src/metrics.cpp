#include "dcrm/metrics.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "dcrm/edit_distance.hpp"
#include "dcrm/error.hpp"

namespace dcrm {

namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw Error(ErrorKind::domain, std::string(what) + " must be finite");
  }
}

struct TokenHash {
  std::size_t operator()(const Token& t) const noexcept { return std::hash<Token>{}(t); }
};

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double centered_sigmoid(double x) { return 0.5 * std::tanh(0.5 * x); }

double logprob_diff(double lp_plus, double lp_minus) {
  require_finite(lp_plus, "logprob");
  require_finite(lp_minus, "logprob");
  return std::fabs(lp_plus - lp_minus);
}

double reward_margin(double r_plus, double r_minus) {
  require_finite(r_plus, "reward");
  require_finite(r_minus, "reward");
  return r_plus - r_minus;
}

void check_variant(const DcrmVariant& variant) {
  if (!variant.use_e && !variant.use_p && !variant.use_r) {
    throw Error(ErrorKind::invalid_argument, "metric variant must enable at least one term");
  }
  for (double w : {variant.weight_e, variant.weight_p}) {
    if (!std::isfinite(w) || w < 0.0) {
      throw Error(ErrorKind::invalid_argument, "distance weights must be finite and >= 0");
    }
  }
}

double combined_distance(std::uint64_t e_delta, double p_delta, const DcrmVariant& variant) {
  double d = 0.0;
  if (variant.use_e) d += variant.weight_e * static_cast<double>(e_delta);
  if (variant.use_p) d += variant.weight_p * p_delta;
  return d;
}

double dcrm(double r_delta, std::uint64_t e_delta, double p_delta, double epsilon,
            const DcrmVariant& variant) {
  check_variant(variant);
  require_finite(r_delta, "r_delta");
  require_finite(p_delta, "p_delta");
  require_finite(epsilon, "epsilon");
  if (epsilon <= 0.0) throw Error(ErrorKind::domain, "epsilon must be > 0");
  if (p_delta < 0.0) throw Error(ErrorKind::domain, "p_delta must be >= 0");

  const double denom = combined_distance(e_delta, p_delta, variant) + epsilon;
  if (!variant.use_r) return 1.0 / denom;

  const double value = centered_sigmoid(r_delta) / denom;
  // Keep the margin's sign when the quotient underflows.
  if (value == 0.0 && r_delta != 0.0) {
    return std::copysign(std::numeric_limits<double>::denorm_min(), r_delta);
  }
  return value;
}

PairMetrics pair_metrics(const Response& y_plus, const Response& y_minus, double epsilon,
                         const DcrmVariant& variant) {
  for (const Response* r : {&y_plus, &y_minus}) {
    if (!r->logprob) throw Error(ErrorKind::validation, "response `" + r->id + "` has no logprob");
    if (!r->reward) throw Error(ErrorKind::validation, "response `" + r->id + "` has no reward");
  }
  SymbolInterner<Token, TokenHash> interner;
  const auto a = interner.intern_all(y_plus.tokens);
  const auto b = interner.intern_all(y_minus.tokens);

  PairMetrics m;
  m.epsilon = epsilon;
  m.e_delta = edit_distance(std::span<const TokenId>(a), std::span<const TokenId>(b));
  m.p_delta = logprob_diff(*y_plus.logprob, *y_minus.logprob);
  m.r_delta = reward_margin(*y_plus.reward, *y_minus.reward);
  m.dcrm = dcrm(m.r_delta, m.e_delta, m.p_delta, epsilon, variant);
  return m;
}

}  // namespace dcrm
