#pragma once

#include <cstdint>

#include "dcrm/types.hpp"

namespace dcrm {

inline constexpr double kDefaultEpsilon = 1.0;

// 1 / (1 + e^-x), evaluated without overflow for large |x|.
double sigmoid(double x);

// sigmoid(x) - 0.5, computed as tanh(x/2)/2 so small margins keep full
// relative precision.
double centered_sigmoid(double x);

double logprob_diff(double lp_plus, double lp_minus);
double reward_margin(double r_plus, double r_minus);

// Throws Error(invalid_argument) unless at least one flag is set and the
// distance weights are finite and non-negative.
void check_variant(const DcrmVariant& variant);

// Sum of the enabled distance terms, before epsilon.
double combined_distance(std::uint64_t e_delta, double p_delta, const DcrmVariant& variant);

// Distance-calibrated reward margin:
//   use_r set:   (sigmoid(r) - 0.5) / (D + epsilon)
//   use_r unset: 1 / (D + epsilon)
// with D the weighted sum of the enabled distance terms.
double dcrm(double r_delta, std::uint64_t e_delta, double p_delta, double epsilon,
            const DcrmVariant& variant = DcrmVariant::full());

// Token edit distance, logprob gap and reward margin of y_plus over y_minus,
// plus the combined metric. Both responses must carry logprob and reward.
PairMetrics pair_metrics(const Response& y_plus, const Response& y_minus,
                         double epsilon = kDefaultEpsilon,
                         const DcrmVariant& variant = DcrmVariant::full());

}  // namespace dcrm
