#pragma once

// Token-level Levenshtein distance with unit costs.
//
// Two implementations that must agree exactly:
//   * edit_distance_reference: two-row dynamic program, O(|a||b|) time and
//     O(min(|a|,|b|)) memory.
//   * EditDistancePattern / edit_distance: Hyyrö's bit-parallel recurrence
//     over 64-bit words, O(ceil(m/64) * n) time.

#include <cstddef>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

namespace dcrm {

using TokenId = std::uint32_t;

std::size_t edit_distance_reference(std::span<const TokenId> a, std::span<const TokenId> b);

// Precomputed match vectors for one sequence, reusable against many others.
class EditDistancePattern {
 public:
  explicit EditDistancePattern(std::span<const TokenId> pattern);

  std::size_t size() const noexcept { return length_; }
  std::size_t distance(std::span<const TokenId> text) const;

 private:
  std::span<const std::uint64_t> match_vector(TokenId symbol) const;

  std::size_t length_ = 0;
  std::size_t words_ = 0;
  std::unordered_map<TokenId, std::size_t> slot_;  // symbol -> offset into masks_
  std::vector<std::uint64_t> masks_;
  std::vector<std::uint64_t> zeros_;
};

std::size_t edit_distance(std::span<const TokenId> a, std::span<const TokenId> b);

// Maps arbitrary comparable symbols onto dense ids so the bit-parallel path
// can index match vectors.
template <typename Symbol, typename Hash = std::hash<Symbol>>
class SymbolInterner {
 public:
  TokenId intern(const Symbol& s) {
    auto [it, inserted] = ids_.try_emplace(s, static_cast<TokenId>(ids_.size()));
    return it->second;
  }

  template <typename Range>
  std::vector<TokenId> intern_all(const Range& seq) {
    std::vector<TokenId> out;
    out.reserve(std::size(seq));
    for (const auto& s : seq) out.push_back(intern(s));
    return out;
  }

 private:
  std::unordered_map<Symbol, TokenId, Hash> ids_;
};

template <typename Symbol>
std::size_t edit_distance(std::span<const Symbol> a, std::span<const Symbol> b) {
  SymbolInterner<Symbol> interner;
  const auto ia = interner.intern_all(a);
  const auto ib = interner.intern_all(b);
  return edit_distance(std::span<const TokenId>(ia), std::span<const TokenId>(ib));
}

}  // namespace dcrm
