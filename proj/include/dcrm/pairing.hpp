#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dcrm/metrics.hpp"
#include "dcrm/types.hpp"

namespace dcrm {

enum class Strategy {
  dcrm_bon2,      // maximize the margin metric over all ordered pairs
  max_margin,     // highest reward vs lowest reward
  r_only_bon2,    // maximize the raw reward margin over ordered pairs
  distance_only,  // maximize 1 / (D + epsilon), i.e. the closest pair
};

std::string_view to_string(Strategy s) noexcept;
std::optional<Strategy> parse_strategy(std::string_view name) noexcept;

struct PairingConfig {
  Strategy strategy = Strategy::dcrm_bon2;
  DcrmVariant variant = DcrmVariant::full();
  bool cross_source = false;
  double epsilon = kDefaultEpsilon;
  std::optional<double> min_margin;
};

void check_config(const PairingConfig& config);

struct Selection {
  std::optional<PreferencePair> pair;
  std::string skip_reason;  // set iff pair is empty

  bool skipped() const noexcept { return !pair.has_value(); }
};

// Picks one preference pair from a scored pool. Ties on the objective go to
// the smallest (chosen, rejected) position in lexicographic order.
Selection select_pair(const ResponsePool& pool, const PairingConfig& config);

struct SkipRecord {
  std::size_t pool_index = 0;
  std::string prompt_id;
  std::string reason;
};

struct SelectionReport {
  std::vector<PreferencePair> pairs;  // input pool order, skips removed
  std::vector<SkipRecord> skips;
};

// Runs select_pair over every pool on up to `workers` threads. The result
// does not depend on the worker count. A per-pool failure is rethrown
// naming the pool; the lowest failing index wins.
SelectionReport select_all(std::span<const ResponsePool> pools, const PairingConfig& config,
                           std::size_t workers = 1);

}  // namespace dcrm
