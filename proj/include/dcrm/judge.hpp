#pragma once

// Feature-difference judging: prompt rendering, verdict parsing and the
// relevant / desired fractions over a sampled corpus.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dcrm/corpus_stats.hpp"
#include "dcrm/gateway.hpp"

namespace dcrm {

inline constexpr std::size_t kFeaturesPerVerdict = 3;

class FeatureCatalog {
 public:
  static const FeatureCatalog& standard();

  // Features listed to the judge, in prompt order. Excludes "other".
  std::span<const std::string> prompt_features() const noexcept { return prompt_features_; }
  const std::vector<std::string>& relevant() const noexcept { return relevant_; }
  // Includes the catch-all "other".
  const std::vector<std::string>& irrelevant() const noexcept { return irrelevant_; }

  bool is_relevant(std::string_view name) const;
  // Case/whitespace-insensitive lookup; unknown names become "other".
  std::string normalize(std::string_view name) const;

 private:
  FeatureCatalog();

  std::vector<std::string> prompt_features_;
  std::vector<std::string> relevant_;
  std::vector<std::string> irrelevant_;
};

inline constexpr std::string_view kOtherFeature = "other";

std::string render_judge_prompt(std::string_view x, std::string_view y1, std::string_view y2);

// Direction after un-swapping: `preferred` means the preferred (or trained)
// response is the better one on this feature.
enum class Better { preferred, other, not_applicable };

std::string_view to_string(Better b) noexcept;

struct FeatureDifference {
  std::string name;  // catalog-normalized
  std::string justification;
  Better better = Better::not_applicable;
};

struct FeatureVerdict {
  std::array<FeatureDifference, kFeaturesPerVerdict> features;
  // False: y1 was the preferred response. True: y1 was the other one.
  bool order_swapped = false;
};

// Accepts the reply with surrounding prose or markdown fences. Keeps the
// first three features in emitted order. Throws Error(parse) carrying the
// raw payload when no JSON object is recoverable or fewer than three
// features are present.
FeatureVerdict parse_verdict(std::string_view raw, bool order_swapped);

struct FeatureScore {
  double f_rel = 0.0;
  double f_des = 0.0;
  std::size_t n_pairs = 0;
};

FeatureScore score_verdict(const FeatureVerdict& verdict,
                           const FeatureCatalog& catalog = FeatureCatalog::standard());

// Mean of the forward and swapped verdict scores.
FeatureScore score_pair(const FeatureVerdict& forward, const FeatureVerdict& swapped,
                        const FeatureCatalog& catalog = FeatureCatalog::standard());

// Produces the raw judge reply for a rendered prompt. Implementations must
// be callable from several threads at once.
class Judge {
 public:
  virtual ~Judge() = default;
  virtual std::string complete(std::string_view prompt, std::string_view x, std::string_view y1,
                               std::string_view y2) = 0;
};

// SHA-256 digest identifying one (x, y1, y2) judging request.
std::string judge_key(std::string_view x, std::string_view y1, std::string_view y2);

// Fixture file: {"verdicts": {judge_key: reply}, "default": reply}
// where a reply is a string or a JSON object (serialized before parsing).
class FixtureJudge final : public Judge {
 public:
  explicit FixtureJudge(const std::filesystem::path& path);
  std::string complete(std::string_view prompt, std::string_view x, std::string_view y1,
                       std::string_view y2) override;

 private:
  nlohmann::json verdicts_;
  std::optional<std::string> default_;
};

class HttpJudge final : public Judge {
 public:
  explicit HttpJudge(const EndpointConfig& config, LogSink log = {});
  std::string complete(std::string_view prompt, std::string_view x, std::string_view y1,
                       std::string_view y2) override;

 private:
  EndpointConfig config_;
  HttpTransport transport_;
};

std::unique_ptr<Judge> make_judge(const EndpointConfig& config, LogSink log = {});

struct JudgedPair {
  std::string prompt_id;
  std::string x;
  std::string preferred;
  std::string other;
};

struct CategoryCount {
  std::string feature;
  Better direction = Better::not_applicable;
  std::size_t count = 0;
  double fraction = 0.0;
};

struct JudgeFailure {
  std::string prompt_id;
  std::string error;
};

struct CorpusFeatureReport {
  FeatureScore score;
  std::size_t requested = 0;
  std::vector<std::string> sampled_ids;  // sample order
  // One entry per (feature, direction) seen, sorted by feature then direction.
  std::vector<CategoryCount> distribution;
  std::vector<JudgeFailure> failures;
};

// Seeded sample of k distinct indices from [0, n), ascending. k >= n keeps all.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::uint64_t seed);

inline constexpr double kMaxJudgeFailureRate = 0.10;

// Judges each sampled pair in both orders and averages the pair scores.
// Failed pairs are excluded and listed; more than 10% failures throws
// Error(domain).
CorpusFeatureReport score_corpus(std::span<const JudgedPair> pairs, Judge& judge,
                                 std::size_t sample_size, std::uint64_t seed,
                                 std::size_t workers = 1);

// Probability vector over a fixed category order, for KL comparisons
// between two reports.
std::vector<double> category_distribution(const CorpusFeatureReport& report,
                                          std::span<const std::pair<std::string, Better>> order);

std::string render_feature_report(const CorpusFeatureReport& report, OutputFormat format);

}  // namespace dcrm
