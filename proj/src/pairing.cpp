#include "dcrm/pairing.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include "dcrm/edit_distance.hpp"
#include "dcrm/error.hpp"

namespace dcrm {

std::string_view to_string(Strategy s) noexcept {
  switch (s) {
    case Strategy::dcrm_bon2: return "dcrm_bon2";
    case Strategy::max_margin: return "max_margin";
    case Strategy::r_only_bon2: return "r_only_bon2";
    case Strategy::distance_only: return "distance_only";
  }
  return "unknown";
}

std::optional<Strategy> parse_strategy(std::string_view name) noexcept {
  if (name == "dcrm" || name == "dcrm_bon2") return Strategy::dcrm_bon2;
  if (name == "max-margin" || name == "max_margin") return Strategy::max_margin;
  if (name == "r-only" || name == "r_only_bon2") return Strategy::r_only_bon2;
  if (name == "distance-only" || name == "distance_only") return Strategy::distance_only;
  return std::nullopt;
}

void check_config(const PairingConfig& config) {
  if (!std::isfinite(config.epsilon) || config.epsilon <= 0.0) {
    throw Error(ErrorKind::invalid_argument, "epsilon must be finite and > 0");
  }
  check_variant(config.variant);
  if (config.strategy == Strategy::distance_only) {
    if (config.variant.use_r) {
      throw Error(ErrorKind::invalid_argument, "distance_only requires a variant without r");
    }
    if (!config.variant.use_e && !config.variant.use_p) {
      throw Error(ErrorKind::invalid_argument, "distance_only needs e or p enabled");
    }
  }
  if (config.min_margin && !std::isfinite(*config.min_margin)) {
    throw Error(ErrorKind::invalid_argument, "min_margin must be finite");
  }
}

namespace {

struct TokenHash {
  std::size_t operator()(const Token& t) const noexcept { return std::hash<Token>{}(t); }
};

std::string strategy_label(const PairingConfig& config) {
  std::string label(to_string(config.strategy));
  const bool variant_matters =
      config.strategy == Strategy::dcrm_bon2 || config.strategy == Strategy::distance_only;
  if (variant_matters) {
    if (!config.variant.use_e) label += ":no_e";
    if (!config.variant.use_p) label += ":no_p";
    if (!config.variant.use_r && config.strategy == Strategy::dcrm_bon2) label += ":no_r";
  }
  if (config.cross_source) label += ":cross_source";
  return label;
}

// Scored view of one pool with lazily filled symmetric edit distances.
class PoolView {
 public:
  explicit PoolView(const ResponsePool& pool) : pool_(pool), n_(pool.responses.size()) {
    if (n_ < 2) {
      throw Error(ErrorKind::validation, "pool has fewer than 2 responses");
    }
    for (const auto& r : pool.responses) {
      if (!r.logprob || !r.reward) {
        throw Error(ErrorKind::validation, "response `" + r.id + "` is not scored");
      }
      if (!std::isfinite(*r.logprob) || !std::isfinite(*r.reward)) {
        throw Error(ErrorKind::validation, "response `" + r.id + "` has non-finite scores");
      }
    }
    SymbolInterner<Token, TokenHash> interner;
    ids_.reserve(n_);
    for (const auto& r : pool.responses) ids_.push_back(interner.intern_all(r.tokens));
    edits_.assign(n_ * n_, kUnknown);
  }

  std::size_t size() const noexcept { return n_; }
  const Response& at(std::size_t i) const { return pool_.responses[i]; }

  double r_delta(std::size_t i, std::size_t j) const { return *at(i).reward - *at(j).reward; }
  double p_delta(std::size_t i, std::size_t j) const {
    return std::fabs(*at(i).logprob - *at(j).logprob);
  }

  std::uint64_t e_delta(std::size_t i, std::size_t j) {
    std::uint64_t& slot = edits_[std::min(i, j) * n_ + std::max(i, j)];
    if (slot == kUnknown) {
      slot = edit_distance(std::span<const TokenId>(ids_[i]), std::span<const TokenId>(ids_[j]));
    }
    return slot;
  }

  PairMetrics metrics(std::size_t i, std::size_t j, double epsilon) {
    PairMetrics m;
    m.epsilon = epsilon;
    m.e_delta = e_delta(i, j);
    m.p_delta = p_delta(i, j);
    m.r_delta = r_delta(i, j);
    m.dcrm = dcrm(m.r_delta, m.e_delta, m.p_delta, epsilon);
    return m;
  }

 private:
  static constexpr std::uint64_t kUnknown = ~std::uint64_t{0};

  const ResponsePool& pool_;
  std::size_t n_;
  std::vector<std::vector<TokenId>> ids_;
  std::vector<std::uint64_t> edits_;
};

struct Candidate {
  std::size_t chosen = 0;
  std::size_t rejected = 0;
};

std::optional<Candidate> best_ordered_pair(PoolView& view, const PairingConfig& config,
                                           std::string& why_none) {
  DcrmVariant distance_variant = config.variant;
  distance_variant.use_r = false;

  auto objective = [&](std::size_t i, std::size_t j) -> double {
    switch (config.strategy) {
      case Strategy::dcrm_bon2: {
        const std::uint64_t e = config.variant.use_e ? view.e_delta(i, j) : 0;
        return dcrm(view.r_delta(i, j), e, view.p_delta(i, j), config.epsilon, config.variant);
      }
      case Strategy::distance_only: {
        const std::uint64_t e = config.variant.use_e ? view.e_delta(i, j) : 0;
        return dcrm(view.r_delta(i, j), e, view.p_delta(i, j), config.epsilon, distance_variant);
      }
      case Strategy::max_margin:
      case Strategy::r_only_bon2:
        return view.r_delta(i, j);
    }
    return 0.0;
  };

  std::optional<Candidate> best;
  double best_value = 0.0;
  bool any_source_ok = false;
  for (std::size_t i = 0; i < view.size(); ++i) {
    for (std::size_t j = 0; j < view.size(); ++j) {
      if (i == j) continue;
      if (config.cross_source && view.at(i).source == view.at(j).source) continue;
      any_source_ok = true;
      if (config.min_margin && view.r_delta(i, j) < *config.min_margin) continue;
      const double value = objective(i, j);
      if (!best || value > best_value) {
        best = Candidate{i, j};
        best_value = value;
      }
    }
  }
  if (!best) {
    why_none = !any_source_ok ? "no pair of responses from different sources"
                              : "no pair reaches min_margin";
  }
  return best;
}

std::optional<Candidate> max_margin_pair(PoolView& view, const PairingConfig& config,
                                         std::string& why_none) {
  if (config.cross_source) return best_ordered_pair(view, config, why_none);
  std::size_t hi = 0;
  for (std::size_t i = 1; i < view.size(); ++i) {
    if (*view.at(i).reward > *view.at(hi).reward) hi = i;
  }
  std::optional<std::size_t> lo;
  for (std::size_t j = 0; j < view.size(); ++j) {
    if (j == hi) continue;
    if (!lo || *view.at(j).reward < *view.at(*lo).reward) lo = j;
  }
  if (config.min_margin && view.r_delta(hi, *lo) < *config.min_margin) {
    why_none = "no pair reaches min_margin";
    return std::nullopt;
  }
  return Candidate{hi, *lo};
}

}  // namespace

Selection select_pair(const ResponsePool& pool, const PairingConfig& config) {
  check_config(config);
  PoolView view(pool);
  std::string why_none;
  const auto picked = config.strategy == Strategy::max_margin
                          ? max_margin_pair(view, config, why_none)
                          : best_ordered_pair(view, config, why_none);
  Selection out;
  if (!picked) {
    out.skip_reason = why_none;
    return out;
  }
  PreferencePair pair;
  pair.prompt_id = pool.prompt_id;
  pair.chosen = view.at(picked->chosen);
  pair.rejected = view.at(picked->rejected);
  pair.metrics = view.metrics(picked->chosen, picked->rejected, config.epsilon);
  pair.strategy = strategy_label(config);
  out.pair = std::move(pair);
  return out;
}

SelectionReport select_all(std::span<const ResponsePool> pools, const PairingConfig& config,
                           std::size_t workers) {
  check_config(config);
  std::vector<Selection> results(pools.size());
  std::vector<std::exception_ptr> errors(pools.size());
  std::atomic<std::size_t> next{0};

  auto work = [&] {
    for (std::size_t i = next++; i < pools.size(); i = next++) {
      try {
        results[i] = select_pair(pools[i], config);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(pools.size(), 1));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> threads;
    threads.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) threads.emplace_back(work);
  }

  for (std::size_t i = 0; i < pools.size(); ++i) {
    if (!errors[i]) continue;
    const std::string where =
        "pool " + std::to_string(i + 1) + " (`" + pools[i].prompt_id + "`): ";
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      throw Error(e.kind(), where + e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorKind::domain, where + e.what());
    }
  }

  SelectionReport report;
  for (std::size_t i = 0; i < pools.size(); ++i) {
    if (results[i].pair) {
      report.pairs.push_back(std::move(*results[i].pair));
    } else {
      report.skips.push_back({i, pools[i].prompt_id, results[i].skip_reason});
    }
  }
  return report;
}

}  // namespace dcrm
