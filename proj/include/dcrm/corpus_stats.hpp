#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dcrm/types.hpp"

namespace dcrm {

enum class OutputFormat { text, csv, json };

std::optional<OutputFormat> parse_format(std::string_view name) noexcept;

// Compensated (Neumaier) running sum.
class StableSum {
 public:
  void add(double x) noexcept;
  double value() const noexcept { return sum_ + compensation_; }

 private:
  double sum_ = 0.0;
  double compensation_ = 0.0;
};

struct DatasetStats {
  std::size_t n_pairs = 0;
  double mean_e_delta = 0.0;
  double mean_p_delta = 0.0;
  double mean_r_delta = 0.0;
  double mean_dcrm = 0.0;
  // Presentation-only multipliers, applied by render_stats in text mode.
  double display_scale_r = 100.0;
  double display_scale_dcrm = 1000.0;
};

// Arithmetic means of the per-pair metric values.
DatasetStats dataset_statistics(std::span<const PreferencePair> pairs);

struct LabeledStats {
  std::string label;
  DatasetStats stats;
};

// text: aligned table, r and dcrm columns scaled and annotated in the header.
// csv:  `dataset,n_pairs,mean_e_delta,...` with raw values, one row per set.
// json: array of objects with raw values and the display scales.
std::string render_stats(std::span<const LabeledStats> rows, OutputFormat format);

// Sample Pearson correlation coefficient.
double pearson(std::span<const double> xs, std::span<const double> ys);

// Minimal RFC 4180 reader: header row, quoted fields, no embedded newlines.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::vector<double> numeric_column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(std::string_view content);

double correlate_columns(const CsvTable& table, std::string_view x_col, std::string_view y_col);

// KL(p || q) in nats.
double kl_divergence(std::span<const double> p, std::span<const double> q);

using BagOfWords = std::map<Token, double>;

// Token count divided by sequence length.
BagOfWords bow_normalized(std::span<const Token> seq);

struct TokenFrequencyEntry {
  Token token;
  double freq_a = 0.0;
  double freq_b = 0.0;
  double delta = 0.0;  // freq_a - freq_b
};

struct TokenFrequencyReport {
  std::vector<TokenFrequencyEntry> entries;  // delta descending, then token
  std::size_t k = 0;
};

// Mean per-sequence normalized frequency in A minus the same in B, top k by
// delta. A token missing from a sequence contributes 0 for that sequence.
TokenFrequencyReport token_frequency_diff(std::span<const TokenSeq> corpus_a,
                                          std::span<const TokenSeq> corpus_b, std::size_t k);

std::string render_token_report(const TokenFrequencyReport& report, OutputFormat format);

enum class PairSide { both, chosen, rejected };

// Token sequences from a JSONL file. Each line may be a response object
// (`tokens` or `text`), a pool (every response contributes) or a pair
// (`side` picks which members contribute).
std::vector<TokenSeq> read_token_corpus(const std::filesystem::path& path,
                                        PairSide side = PairSide::both);

}  // namespace dcrm
