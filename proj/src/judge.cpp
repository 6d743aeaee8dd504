#include "dcrm/judge.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "dcrm/error.hpp"

namespace dcrm {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

struct FeatureSpec {
  std::string_view name;
  bool relevant;
};

// Listed in the order the judge sees them.
constexpr FeatureSpec kFeatures[] = {
    {"explicit or implicit", false},
    {"instruction following", true},
    {"code readability", true},
    {"caring or not", false},
    {"pessimistic or optimistic", false},
    {"writing style", false},
    {"certainty", false},
    {"truthfulness", true},
    {"casual or formal", false},
    {"tone", false},
    {"intimacy", false},
    {"code complexity", true},
    {"passion", false},
    {"friendliness", false},
    {"passive or active", false},
    {"authoritative or not", false},
    {"word usage diversity", false},
    {"correctness", true},
    {"politeness", false},
    {"language type", false},
    {"factuality", true},
    {"empathy", false},
    {"creativity", false},
    {"coherence", true},
    {"repetitiveness", false},
    {"verbosity", true},
    {"sarcastic or not", false},
    {"structure of presentation", false},
    {"harmlessness", true},
    {"humor", false},
    {"helpfulness", true},
    {"honesty", true},
};

std::string collapse_name(std::string_view raw) {
  std::string out;
  bool pending_space = false;
  for (char c : raw) {
    const auto uc = static_cast<unsigned char>(c);
    if (c == '_' || std::isspace(uc)) {
      pending_space = !out.empty();
      continue;
    }
    if (c == '"' || c == '\'' || c == '*' || c == '`') continue;
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(uc));
  }
  return out;
}

}  // namespace

FeatureCatalog::FeatureCatalog() {
  for (const auto& f : kFeatures) {
    prompt_features_.emplace_back(f.name);
    (f.relevant ? relevant_ : irrelevant_).emplace_back(f.name);
  }
  irrelevant_.emplace_back(kOtherFeature);
}

const FeatureCatalog& FeatureCatalog::standard() {
  static const FeatureCatalog catalog;
  return catalog;
}

bool FeatureCatalog::is_relevant(std::string_view name) const {
  return std::find(relevant_.begin(), relevant_.end(), name) != relevant_.end();
}

std::string FeatureCatalog::normalize(std::string_view name) const {
  std::string key = collapse_name(name);
  for (const auto& f : prompt_features_) {
    if (f == key) return f;
  }
  return std::string(kOtherFeature);
}

std::string render_judge_prompt(std::string_view x, std::string_view y1, std::string_view y2) {
  std::string features;
  for (const auto& f : FeatureCatalog::standard().prompt_features()) {
    if (!features.empty()) features += ", ";
    features += f;
  }
  std::string out;
  out +=
      "Given 2 responses y1 and y2 to a query x, identify the top 3 most prominent features in "
      "which y1 and y2 differ. Provide a justification for each feature that you identified. The "
      "features that you identified should only come from the following set of potential "
      "features:\n\n";
  out += "{" + features + "}\n\n";
  out +=
      "Note that the features \"code complexity\" and \"code readability\" are only applicable "
      "for programming or coding tasks. Do not indicate these for non programming or coding "
      "tasks.\n\n";
  out +=
      "If you think none of the feature listed above can explain the differences between y1 and "
      "y2, propose new features that can explain the differences. Again, provide a justification "
      "for each proposed new feature.\n\n";
  out +=
      "Additionally, for any feature where it makes sense to say y1 is \"better\" or \"worse\" "
      "than y2 in terms of that feature (e.g., helpfulness, where more helpful is better; "
      "verbosity, where less verbose is better), identify which response is better. You should "
      "put \"y1\" or \"y2\". For other features where differences do not imply \"better\" or "
      "\"worse\" (writing style, tone, formal or casual, language type, etc.), put \"Not "
      "applicable\".\n\n";
  out +=
      "Give your response in the following JSON format:\n\n"
      "{\n"
      "    feature 1: {\n"
      "        \"justification\": justification 1,\n"
      "        \"better response\": \"y1\" or \"y2\" or \"Not applicable\"\n"
      "    },\n"
      "    ...\n"
      "    feature 3: {\n"
      "        \"justification\": justification 3,\n"
      "        \"better response\": \"y1\" or \"y2\" or \"Not applicable\"\n"
      "    }\n"
      "}\n\n";
  out += "Query x: ";
  out += x;
  out += "\n\n\nResponse y1: ";
  out += y1;
  out += "\n\n\nResponse y2: ";
  out += y2;
  out += "\n\n\nAnswer:\n";
  return out;
}

std::string_view to_string(Better b) noexcept {
  switch (b) {
    case Better::preferred: return "preferred";
    case Better::other: return "other";
    case Better::not_applicable: return "not_applicable";
  }
  return "not_applicable";
}

namespace {

[[noreturn]] void verdict_error(const std::string& what, std::string_view raw) {
  throw Error(ErrorKind::parse, "judge verdict: " + what + "; raw payload: " + std::string(raw));
}

std::optional<ordered_json> try_parse(std::string_view text) {
  const auto open = text.find_first_of("{[");
  if (open == std::string_view::npos) return std::nullopt;
  const char close_char = text[open] == '{' ? '}' : ']';
  const auto close = text.find_last_of(close_char);
  if (close == std::string_view::npos || close < open) return std::nullopt;
  try {
    return ordered_json::parse(text.substr(open, close - open + 1));
  } catch (const ordered_json::parse_error&) {
    return std::nullopt;
  }
}

ordered_json extract_json(std::string_view raw) {
  // Prefer the first fenced block when the reply has one.
  const auto fence = raw.find("```");
  if (fence != std::string_view::npos) {
    auto body_start = raw.find('\n', fence);
    if (body_start != std::string_view::npos) {
      ++body_start;
      const auto fence_end = raw.find("```", body_start);
      if (fence_end != std::string_view::npos) {
        if (auto doc = try_parse(raw.substr(body_start, fence_end - body_start))) return *doc;
      }
    }
  }
  if (auto doc = try_parse(raw)) return *doc;
  verdict_error("no JSON object found", raw);
}

std::string strip_feature_prefix(const std::string& key) {
  // Keys such as "feature 1: helpfulness".
  std::string lower = collapse_name(key);
  if (lower.rfind("feature", 0) == 0) {
    std::size_t i = 7;
    while (i < lower.size() && (lower[i] == ' ' || std::isdigit(static_cast<unsigned char>(lower[i])))) ++i;
    if (i < lower.size() && (lower[i] == ':' || lower[i] == '-')) {
      ++i;
      while (i < lower.size() && lower[i] == ' ') ++i;
      return lower.substr(i);
    }
  }
  return key;
}

Better parse_direction(const ordered_json& entry, bool order_swapped, std::string_view raw) {
  const ordered_json* v = nullptr;
  for (const char* key : {"better response", "better_response", "better"}) {
    auto it = entry.find(key);
    if (it != entry.end()) {
      v = &*it;
      break;
    }
  }
  if (!v || v->is_null()) return Better::not_applicable;
  if (!v->is_string()) verdict_error("`better response` must be a string", raw);
  const std::string s = collapse_name(v->get<std::string>());
  bool first;
  if (s == "y1") {
    first = true;
  } else if (s == "y2") {
    first = false;
  } else if (s.empty() || s == "not applicable" || s == "n/a" || s == "na" || s == "none") {
    return Better::not_applicable;
  } else {
    verdict_error("unrecognized `better response` value `" + v->get<std::string>() + "`", raw);
  }
  // y1 holds the preferred response unless the order was swapped.
  return first != order_swapped ? Better::preferred : Better::other;
}

std::string string_field(const ordered_json& entry, std::initializer_list<const char*> keys) {
  for (const char* key : keys) {
    auto it = entry.find(key);
    if (it != entry.end() && it->is_string()) return it->get<std::string>();
  }
  return {};
}

}  // namespace

FeatureVerdict parse_verdict(std::string_view raw, bool order_swapped) {
  const ordered_json doc = extract_json(raw);
  const auto& catalog = FeatureCatalog::standard();

  std::vector<FeatureDifference> found;
  auto add = [&](const std::string& name, const ordered_json& entry) {
    FeatureDifference d;
    d.name = catalog.normalize(strip_feature_prefix(name));
    if (entry.is_object()) {
      d.justification = string_field(entry, {"justification", "reason"});
      d.better = parse_direction(entry, order_swapped, raw);
    } else if (entry.is_string()) {
      d.justification = entry.get<std::string>();
    }
    found.push_back(std::move(d));
  };

  const ordered_json* list = nullptr;
  if (doc.is_array()) {
    list = &doc;
  } else if (doc.is_object()) {
    for (const char* key : {"features", "differences"}) {
      auto it = doc.find(key);
      if (it != doc.end() && it->is_array()) list = &*it;
    }
  }
  if (list) {
    for (const auto& entry : *list) {
      if (!entry.is_object()) continue;
      add(string_field(entry, {"feature", "name"}), entry);
    }
  } else if (doc.is_object()) {
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      std::string name = it.key();
      if (it->is_object()) {
        if (auto inner = string_field(*it, {"feature", "name"}); !inner.empty()) name = inner;
      }
      add(name, *it);
    }
  }

  if (found.size() < kFeaturesPerVerdict) {
    verdict_error("expected " + std::to_string(kFeaturesPerVerdict) + " features, found " +
                      std::to_string(found.size()),
                  raw);
  }
  FeatureVerdict verdict;
  verdict.order_swapped = order_swapped;
  std::move(found.begin(), found.begin() + kFeaturesPerVerdict, verdict.features.begin());
  return verdict;
}

FeatureScore score_verdict(const FeatureVerdict& verdict, const FeatureCatalog& catalog) {
  std::size_t relevant = 0;
  std::size_t desired = 0;
  for (const auto& f : verdict.features) {
    if (!catalog.is_relevant(f.name)) continue;
    ++relevant;
    if (f.better == Better::preferred) ++desired;
  }
  const double n = static_cast<double>(kFeaturesPerVerdict);
  return {static_cast<double>(relevant) / n, static_cast<double>(desired) / n, 1};
}

FeatureScore score_pair(const FeatureVerdict& forward, const FeatureVerdict& swapped,
                        const FeatureCatalog& catalog) {
  const auto a = score_verdict(forward, catalog);
  const auto b = score_verdict(swapped, catalog);
  return {(a.f_rel + b.f_rel) / 2.0, (a.f_des + b.f_des) / 2.0, 1};
}

std::string judge_key(std::string_view x, std::string_view y1, std::string_view y2) {
  return content_digest("dcrm-judge-v1", {x, y1, y2});
}

FixtureJudge::FixtureJudge(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open judge fixture " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::parse, "judge fixture " + path.string() + ": " + e.what());
  }
  auto as_text = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  verdicts_ = json::object();
  if (auto it = doc.find("verdicts"); it != doc.end() && it->is_object()) {
    for (auto v = it->begin(); v != it->end(); ++v) verdicts_[v.key()] = as_text(*v);
  }
  if (auto it = doc.find("default"); it != doc.end() && !it->is_null()) default_ = as_text(*it);
}

std::string FixtureJudge::complete(std::string_view, std::string_view x, std::string_view y1,
                                   std::string_view y2) {
  if (auto it = verdicts_.find(judge_key(x, y1, y2)); it != verdicts_.end()) {
    return it->get<std::string>();
  }
  if (default_) return *default_;
  throw Error(ErrorKind::protocol, "judge fixture has no verdict for this pair");
}

HttpJudge::HttpJudge(const EndpointConfig& config, LogSink log)
    : config_(config), transport_(config, std::move(log)) {}

std::string HttpJudge::complete(std::string_view prompt, std::string_view, std::string_view,
                                std::string_view) {
  const json body = {{"model", config_.model_name}, {"prompt", prompt}, {"temperature", 0}};
  const json reply = transport_.post(body, "judge request");
  const std::string_view selector = config_.response_field.empty()
                                        ? default_selector(RequestTemplate::judge_completion)
                                        : std::string_view(config_.response_field);
  const json* field = select_field(reply, selector);
  if (!field) {
    throw Error(ErrorKind::protocol,
                "judge reply lacks field `" + std::string(selector) + "`");
  }
  return field->is_string() ? field->get<std::string>() : field->dump();
}

std::unique_ptr<Judge> make_judge(const EndpointConfig& config, LogSink log) {
  if (config.fixture) return std::make_unique<FixtureJudge>(*config.fixture);
  check_endpoint(config);
  return std::make_unique<HttpJudge>(config, std::move(log));
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (k >= n) return idx;
  // Partial Fisher-Yates with an explicit unbiased draw so the sample does
  // not depend on the standard library's distribution implementation.
  std::mt19937_64 rng(seed);
  auto bounded = [&](std::uint64_t range) {
    const std::uint64_t limit = std::mt19937_64::max() - std::mt19937_64::max() % range;
    std::uint64_t v;
    do {
      v = rng();
    } while (v >= limit);
    return v % range;
  };
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(bounded(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

CorpusFeatureReport score_corpus(std::span<const JudgedPair> pairs, Judge& judge,
                                 std::size_t sample_size, std::uint64_t seed,
                                 std::size_t workers) {
  if (pairs.empty()) throw Error(ErrorKind::domain, "feature scoring needs a nonempty corpus");
  if (sample_size < 1) throw Error(ErrorKind::invalid_argument, "sample size must be >= 1");
  const auto sample = sample_indices(pairs.size(), sample_size, seed);

  struct Outcome {
    std::optional<std::array<FeatureVerdict, 2>> verdicts;
    std::string error;
  };
  std::vector<Outcome> outcomes(sample.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < sample.size(); i = next++) {
      const JudgedPair& p = pairs[sample[i]];
      try {
        const auto fwd_raw =
            judge.complete(render_judge_prompt(p.x, p.preferred, p.other), p.x, p.preferred, p.other);
        const auto swp_raw =
            judge.complete(render_judge_prompt(p.x, p.other, p.preferred), p.x, p.other, p.preferred);
        outcomes[i].verdicts = {parse_verdict(fwd_raw, false), parse_verdict(swp_raw, true)};
      } catch (const std::exception& e) {
        outcomes[i].error = e.what();
      }
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, sample.size());
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> threads;
    for (std::size_t t = 0; t < workers; ++t) threads.emplace_back(work);
  }

  CorpusFeatureReport report;
  report.requested = sample_size;
  StableSum rel, des;
  std::map<std::pair<std::string, Better>, std::size_t> counts;
  std::size_t total_features = 0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const JudgedPair& p = pairs[sample[i]];
    report.sampled_ids.push_back(p.prompt_id);
    if (!outcomes[i].verdicts) {
      report.failures.push_back({p.prompt_id, outcomes[i].error});
      continue;
    }
    const auto& [fwd, swp] = *outcomes[i].verdicts;
    const auto s = score_pair(fwd, swp);
    rel.add(s.f_rel);
    des.add(s.f_des);
    report.score.n_pairs++;
    for (const auto* v : {&fwd, &swp}) {
      for (const auto& f : v->features) {
        counts[{f.name, f.better}]++;
        ++total_features;
      }
    }
  }

  const double failure_rate =
      static_cast<double>(report.failures.size()) / static_cast<double>(sample.size());
  if (failure_rate > kMaxJudgeFailureRate) {
    std::string msg = std::to_string(report.failures.size()) + " of " +
                      std::to_string(sample.size()) + " judged pairs failed (limit 10%)";
    if (!report.failures.empty()) msg += "; first failure: " + report.failures.front().error;
    throw Error(ErrorKind::domain, msg);
  }
  if (report.score.n_pairs > 0) {
    const double n = static_cast<double>(report.score.n_pairs);
    report.score.f_rel = rel.value() / n;
    report.score.f_des = des.value() / n;
  }
  for (const auto& [key, count] : counts) {
    report.distribution.push_back(
        {key.first, key.second, count,
         static_cast<double>(count) / static_cast<double>(total_features)});
  }
  return report;
}

std::vector<double> category_distribution(const CorpusFeatureReport& report,
                                          std::span<const std::pair<std::string, Better>> order) {
  std::vector<double> out(order.size(), 0.0);
  for (const auto& c : report.distribution) {
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (order[i].first == c.feature && order[i].second == c.direction) out[i] = c.fraction;
    }
  }
  return out;
}

std::string render_feature_report(const CorpusFeatureReport& report, OutputFormat format) {
  switch (format) {
    case OutputFormat::json: {
      ordered_json o;
      o["f_rel"] = report.score.f_rel;
      o["f_des"] = report.score.f_des;
      o["n_pairs"] = report.score.n_pairs;
      o["requested"] = report.requested;
      o["sampled_ids"] = report.sampled_ids;
      o["distribution"] = ordered_json::array();
      for (const auto& c : report.distribution) {
        o["distribution"].push_back({{"feature", c.feature},
                                     {"direction", std::string(to_string(c.direction))},
                                     {"count", c.count},
                                     {"fraction", c.fraction}});
      }
      o["failures"] = ordered_json::array();
      for (const auto& f : report.failures) {
        o["failures"].push_back({{"prompt_id", f.prompt_id}, {"error", f.error}});
      }
      return o.dump(2) + "\n";
    }
    case OutputFormat::csv: {
      std::ostringstream os;
      os << "feature,direction,count,fraction\n";
      for (const auto& c : report.distribution) {
        os << '"' << c.feature << "\"," << to_string(c.direction) << ',' << c.count << ','
           << std::setprecision(17) << c.fraction << '\n';
      }
      return os.str();
    }
    case OutputFormat::text: {
      std::ostringstream os;
      os << std::fixed << std::setprecision(4);
      os << "pairs scored: " << report.score.n_pairs << " of " << report.sampled_ids.size()
         << " sampled\n";
      os << "f_rel: " << report.score.f_rel << "\n";
      os << "f_des: " << report.score.f_des << "\n";
      os << "failures: " << report.failures.size() << "\n";
      for (const auto& f : report.failures) os << "  " << f.prompt_id << ": " << f.error << "\n";
      os << "distribution (feature, direction, count, fraction):\n";
      for (const auto& c : report.distribution) {
        os << "  " << std::left << std::setw(28) << c.feature << std::setw(16)
           << to_string(c.direction) << std::right << std::setw(6) << c.count << "  "
           << c.fraction << "\n";
      }
      return os.str();
    }
  }
  return {};
}

}  // namespace dcrm
