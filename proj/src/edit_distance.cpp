#include "dcrm/edit_distance.hpp"

#include <algorithm>
#include <numeric>

namespace dcrm {

namespace {

constexpr std::size_t kWordBits = 64;

}  // namespace

std::size_t edit_distance_reference(std::span<const TokenId> a, std::span<const TokenId> b) {
  if (a.size() < b.size()) std::swap(a, b);
  // b is the shorter sequence; rows are indexed by it.
  std::vector<std::size_t> prev(b.size() + 1);
  std::vector<std::size_t> cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t subst = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, subst});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

EditDistancePattern::EditDistancePattern(std::span<const TokenId> pattern)
    : length_(pattern.size()), words_((pattern.size() + kWordBits - 1) / kWordBits) {
  zeros_.assign(words_, 0);
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    auto [it, inserted] = slot_.try_emplace(pattern[i], masks_.size());
    if (inserted) masks_.resize(masks_.size() + words_, 0);
    masks_[it->second + i / kWordBits] |= std::uint64_t{1} << (i % kWordBits);
  }
}

std::span<const std::uint64_t> EditDistancePattern::match_vector(TokenId symbol) const {
  auto it = slot_.find(symbol);
  if (it == slot_.end()) return zeros_;
  return std::span<const std::uint64_t>(masks_).subspan(it->second, words_);
}

// Hyyrö (2003) block formulation of Myers' bit-vector algorithm. VP/VN hold
// the vertical +1/-1 deltas of the current DP column; horizontal deltas
// leaving the top of one word enter the bottom of the next.
std::size_t EditDistancePattern::distance(std::span<const TokenId> text) const {
  if (length_ == 0) return text.size();
  if (text.empty()) return length_;

  struct Column {
    std::uint64_t vp = ~std::uint64_t{0};
    std::uint64_t vn = 0;
  };
  std::vector<Column> cols(words_);
  const std::uint64_t last = std::uint64_t{1} << ((length_ - 1) % kWordBits);
  std::size_t score = length_;

  for (const TokenId symbol : text) {
    const auto eq = match_vector(symbol);
    std::uint64_t hp_carry = 1;
    std::uint64_t hn_carry = 0;
    for (std::size_t w = 0; w < words_; ++w) {
      const std::uint64_t vp = cols[w].vp;
      const std::uint64_t vn = cols[w].vn;
      const std::uint64_t x = eq[w] | hn_carry;
      const std::uint64_t d0 = (((x & vp) + vp) ^ vp) | x | vn;
      std::uint64_t hp = vn | ~(d0 | vp);
      std::uint64_t hn = d0 & vp;

      const std::uint64_t hp_in = hp_carry;
      const std::uint64_t hn_in = hn_carry;
      if (w + 1 < words_) {
        hp_carry = hp >> 63;
        hn_carry = hn >> 63;
      } else {
        hp_carry = (hp & last) ? 1 : 0;
        hn_carry = (hn & last) ? 1 : 0;
      }
      hp = (hp << 1) | hp_in;
      hn = (hn << 1) | hn_in;
      cols[w].vp = hn | ~(d0 | hp);
      cols[w].vn = hp & d0;
    }
    score += hp_carry;
    score -= hn_carry;
  }
  return score;
}

std::size_t edit_distance(std::span<const TokenId> a, std::span<const TokenId> b) {
  // Common prefix and suffix never change the distance.
  while (!a.empty() && !b.empty() && a.front() == b.front()) {
    a = a.subspan(1);
    b = b.subspan(1);
  }
  while (!a.empty() && !b.empty() && a.back() == b.back()) {
    a = a.first(a.size() - 1);
    b = b.first(b.size() - 1);
  }
  if (a.size() > b.size()) std::swap(a, b);
  if (a.empty()) return b.size();
  return EditDistancePattern(a).distance(b);
}

}  // namespace dcrm
