#include "dcrm/corpus_stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "dcrm/data_model.hpp"
#include "dcrm/error.hpp"

namespace dcrm {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::optional<OutputFormat> parse_format(std::string_view name) noexcept {
  if (name == "text") return OutputFormat::text;
  if (name == "csv") return OutputFormat::csv;
  if (name == "json") return OutputFormat::json;
  return std::nullopt;
}

void StableSum::add(double x) noexcept {
  const double t = sum_ + x;
  if (std::fabs(sum_) >= std::fabs(x)) {
    compensation_ += (sum_ - t) + x;
  } else {
    compensation_ += (x - t) + sum_;
  }
  sum_ = t;
}

DatasetStats dataset_statistics(std::span<const PreferencePair> pairs) {
  if (pairs.empty()) throw Error(ErrorKind::domain, "no pairs to summarize");
  StableSum e, p, r, d;
  for (const auto& pair : pairs) {
    const auto& m = pair.metrics;
    if (!std::isfinite(m.p_delta) || !std::isfinite(m.r_delta) || !std::isfinite(m.dcrm)) {
      throw Error(ErrorKind::validation, "pair `" + pair.prompt_id + "` has non-finite metrics");
    }
    e.add(static_cast<double>(m.e_delta));
    p.add(m.p_delta);
    r.add(m.r_delta);
    d.add(m.dcrm);
  }
  const double n = static_cast<double>(pairs.size());
  DatasetStats s;
  s.n_pairs = pairs.size();
  s.mean_e_delta = e.value() / n;
  s.mean_p_delta = p.value() / n;
  s.mean_r_delta = r.value() / n;
  s.mean_dcrm = d.value() / n;
  return s;
}

namespace {

std::string format_double(double v, int precision) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

// Shortest text that parses back to the same double.
std::string exact_double(double v) {
  char buf[32];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

std::string scale_suffix(double scale) {
  std::ostringstream os;
  os << "x" << scale;
  return os.str();
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string render_table(const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> width;
  for (const auto& row : cells) {
    width.resize(std::max(width.size(), row.size()), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream os;
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) {
        os << std::left << std::setw(static_cast<int>(width[c])) << row[c];
      } else {
        os << "  " << std::right << std::setw(static_cast<int>(width[c])) << row[c];
      }
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace

std::string render_stats(std::span<const LabeledStats> rows, OutputFormat format) {
  switch (format) {
    case OutputFormat::text: {
      std::vector<std::vector<std::string>> cells;
      const double sr = rows.empty() ? 100.0 : rows.front().stats.display_scale_r;
      const double sd = rows.empty() ? 1000.0 : rows.front().stats.display_scale_dcrm;
      cells.push_back({"dataset", "n_pairs", "e_delta", "p_delta", "r_delta (" + scale_suffix(sr) + ")",
                       "dcrm (" + scale_suffix(sd) + ")"});
      for (const auto& row : rows) {
        const auto& s = row.stats;
        cells.push_back({row.label, std::to_string(s.n_pairs), format_double(s.mean_e_delta, 2),
                         format_double(s.mean_p_delta, 2),
                         format_double(s.mean_r_delta * s.display_scale_r, 2),
                         format_double(s.mean_dcrm * s.display_scale_dcrm, 4)});
      }
      return render_table(cells);
    }
    case OutputFormat::csv: {
      std::string out = "dataset,n_pairs,mean_e_delta,mean_p_delta,mean_r_delta,mean_dcrm\n";
      for (const auto& row : rows) {
        const auto& s = row.stats;
        out += csv_field(row.label) + "," + std::to_string(s.n_pairs) + "," +
               exact_double(s.mean_e_delta) + "," + exact_double(s.mean_p_delta) + "," +
               exact_double(s.mean_r_delta) + "," + exact_double(s.mean_dcrm) + "\n";
      }
      return out;
    }
    case OutputFormat::json: {
      ordered_json arr = ordered_json::array();
      for (const auto& row : rows) {
        const auto& s = row.stats;
        ordered_json o;
        o["dataset"] = row.label;
        o["n_pairs"] = s.n_pairs;
        o["mean_e_delta"] = s.mean_e_delta;
        o["mean_p_delta"] = s.mean_p_delta;
        o["mean_r_delta"] = s.mean_r_delta;
        o["mean_dcrm"] = s.mean_dcrm;
        o["display_scale_r"] = s.display_scale_r;
        o["display_scale_dcrm"] = s.display_scale_dcrm;
        arr.push_back(std::move(o));
      }
      return arr.dump(2) + "\n";
    }
  }
  return {};
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw Error(ErrorKind::invalid_argument, "pearson: length mismatch (" +
                                                 std::to_string(xs.size()) + " vs " +
                                                 std::to_string(ys.size()) + ")");
  }
  if (xs.size() < 2) throw Error(ErrorKind::invalid_argument, "pearson: need at least 2 points");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) {
      throw Error(ErrorKind::domain, "pearson: non-finite input");
    }
  }
  const double n = static_cast<double>(xs.size());
  StableSum sx, sy;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx.add(xs[i]);
    sy.add(ys[i]);
  }
  const double mx = sx.value() / n;
  const double my = sy.value() / n;
  StableSum sxy, sxx, syy;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy.add(dx * dy);
    sxx.add(dx * dx);
    syy.add(dy * dy);
  }
  if (sxx.value() == 0.0 || syy.value() == 0.0) {
    throw Error(ErrorKind::domain, "pearson: zero variance");
  }
  const double r = sxy.value() / std::sqrt(sxx.value() * syy.value());
  return std::clamp(r, -1.0, 1.0);
}

CsvTable parse_csv(std::string_view content) {
  CsvTable table;
  auto split = [](std::string_view line, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"') {
          if (i + 1 < line.size() && line[i + 1] == '"') {
            cur += '"';
            ++i;
          } else {
            quoted = false;
          }
        } else {
          cur += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        fields.push_back(std::move(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (quoted) {
      throw Error(ErrorKind::parse, "csv line " + std::to_string(line_no) + ": unterminated quote");
    }
    fields.push_back(std::move(cur));
    return fields;
  };

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    pos = end + 1;
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    auto fields = split(line, line_no);
    if (table.header.empty()) {
      table.header = std::move(fields);
    } else {
      // A repeated header (concatenated exports) is skipped.
      if (fields == table.header) continue;
      if (fields.size() != table.header.size()) {
        throw Error(ErrorKind::parse, "csv line " + std::to_string(line_no) + ": expected " +
                                          std::to_string(table.header.size()) + " fields, got " +
                                          std::to_string(fields.size()));
      }
      table.rows.push_back(std::move(fields));
    }
  }
  if (table.header.empty()) throw Error(ErrorKind::parse, "csv: missing header row");
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str());
}

std::vector<double> CsvTable::numeric_column(std::string_view name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) {
    throw Error(ErrorKind::invalid_argument, "csv: no column `" + std::string(name) + "`");
  }
  const auto col = static_cast<std::size_t>(it - header.begin());
  std::vector<double> out;
  out.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::string& cell = rows[r][col];
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (cell.empty() || end != cell.c_str() + cell.size()) {
      throw Error(ErrorKind::parse, "csv: column `" + std::string(name) + "` row " +
                                        std::to_string(r + 1) + " is not numeric: `" + cell + "`");
    }
    out.push_back(v);
  }
  return out;
}

double correlate_columns(const CsvTable& table, std::string_view x_col, std::string_view y_col) {
  const auto xs = table.numeric_column(x_col);
  const auto ys = table.numeric_column(y_col);
  return pearson(xs, ys);
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw Error(ErrorKind::invalid_argument, "kl_divergence: support size mismatch");
  }
  if (p.empty()) throw Error(ErrorKind::invalid_argument, "kl_divergence: empty support");
  constexpr double kTolerance = 1e-9;
  auto check = [&](std::span<const double> dist, const char* name) {
    StableSum total;
    for (double v : dist) {
      if (!std::isfinite(v) || v < 0.0) {
        throw Error(ErrorKind::domain, std::string("kl_divergence: ") + name +
                                           " has a negative or non-finite entry");
      }
      total.add(v);
    }
    if (std::fabs(total.value() - 1.0) > kTolerance) {
      throw Error(ErrorKind::domain, std::string("kl_divergence: ") + name + " does not sum to 1");
    }
  };
  check(p, "p");
  check(q, "q");
  StableSum kl;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) {
      throw Error(ErrorKind::domain,
                  "kl_divergence: q is zero at index " + std::to_string(i) + " where p is not");
    }
    kl.add(p[i] * std::log(p[i] / q[i]));
  }
  return std::max(0.0, kl.value());
}

BagOfWords bow_normalized(std::span<const Token> seq) {
  if (seq.empty()) throw Error(ErrorKind::domain, "bow_normalized: empty sequence");
  std::map<Token, std::size_t> counts;
  for (const auto& t : seq) ++counts[t];
  BagOfWords out;
  const double n = static_cast<double>(seq.size());
  for (const auto& [t, c] : counts) out.emplace(t, static_cast<double>(c) / n);
  return out;
}

namespace {

BagOfWords corpus_mean_bow(std::span<const TokenSeq> corpus) {
  std::map<Token, StableSum> sums;
  for (const auto& seq : corpus) {
    for (const auto& [t, f] : bow_normalized(seq)) sums[t].add(f);
  }
  BagOfWords mean;
  const double n = static_cast<double>(corpus.size());
  for (const auto& [t, s] : sums) mean.emplace(t, s.value() / n);
  return mean;
}

}  // namespace

TokenFrequencyReport token_frequency_diff(std::span<const TokenSeq> corpus_a,
                                          std::span<const TokenSeq> corpus_b, std::size_t k) {
  if (corpus_a.empty() || corpus_b.empty()) {
    throw Error(ErrorKind::domain, "token_frequency_diff: empty corpus");
  }
  if (k < 1) throw Error(ErrorKind::invalid_argument, "token_frequency_diff: k must be >= 1");
  const auto mean_a = corpus_mean_bow(corpus_a);
  const auto mean_b = corpus_mean_bow(corpus_b);

  TokenFrequencyReport report;
  auto ia = mean_a.begin();
  auto ib = mean_b.begin();
  while (ia != mean_a.end() || ib != mean_b.end()) {
    TokenFrequencyEntry e;
    if (ib == mean_b.end() || (ia != mean_a.end() && ia->first < ib->first)) {
      e.token = ia->first;
      e.freq_a = ia->second;
      ++ia;
    } else if (ia == mean_a.end() || ib->first < ia->first) {
      e.token = ib->first;
      e.freq_b = ib->second;
      ++ib;
    } else {
      e.token = ia->first;
      e.freq_a = ia->second;
      e.freq_b = ib->second;
      ++ia;
      ++ib;
    }
    e.delta = e.freq_a - e.freq_b;
    report.entries.push_back(std::move(e));
  }
  std::stable_sort(report.entries.begin(), report.entries.end(),
                   [](const TokenFrequencyEntry& x, const TokenFrequencyEntry& y) {
                     return x.delta > y.delta;
                   });
  if (report.entries.size() > k) report.entries.resize(k);
  report.k = report.entries.size();
  return report;
}

std::string render_token_report(const TokenFrequencyReport& report, OutputFormat format) {
  auto token_json = [](const Token& t) {
    ordered_json v;
    std::visit([&](const auto& x) { v = x; }, t);
    return v;
  };
  switch (format) {
    case OutputFormat::text: {
      std::vector<std::vector<std::string>> cells;
      cells.push_back({"token", "freq_a", "freq_b", "delta"});
      for (const auto& e : report.entries) {
        cells.push_back({token_to_string(e.token), format_double(e.freq_a, 6),
                         format_double(e.freq_b, 6), format_double(e.delta, 6)});
      }
      return render_table(cells);
    }
    case OutputFormat::csv: {
      std::string out = "token,freq_a,freq_b,delta\n";
      for (const auto& e : report.entries) {
        out += csv_field(token_to_string(e.token)) + "," + exact_double(e.freq_a) + "," +
               exact_double(e.freq_b) + "," + exact_double(e.delta) + "\n";
      }
      return out;
    }
    case OutputFormat::json: {
      ordered_json o;
      o["k"] = report.k;
      o["entries"] = ordered_json::array();
      for (const auto& e : report.entries) {
        ordered_json row;
        row["token"] = token_json(e.token);
        row["freq_a"] = e.freq_a;
        row["freq_b"] = e.freq_b;
        row["delta"] = e.delta;
        o["entries"].push_back(std::move(row));
      }
      return o.dump(2) + "\n";
    }
  }
  return {};
}

std::vector<TokenSeq> read_token_corpus(const std::filesystem::path& path, PairSide side) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::vector<TokenSeq> corpus;
  std::string line;
  std::size_t line_no = 0;

  auto tokens_of = [&](const json& r) -> TokenSeq {
    if (!r.is_object()) {
      throw Error(ErrorKind::parse, "line " + std::to_string(line_no) + ": expected an object");
    }
    auto t = r.find("tokens");
    if (t != r.end() && t->is_array()) {
      TokenSeq seq;
      for (const auto& v : *t) {
        if (v.is_number_integer()) {
          seq.emplace_back(v.get<std::int64_t>());
        } else if (v.is_string()) {
          seq.emplace_back(v.get<std::string>());
        } else {
          throw Error(ErrorKind::parse, "line " + std::to_string(line_no) +
                                            ": tokens must be integers or strings");
        }
      }
      return seq;
    }
    auto text = r.find("text");
    if (text == r.end() || !text->is_string()) {
      throw Error(ErrorKind::parse,
                  "line " + std::to_string(line_no) + ": record has neither tokens nor text");
    }
    return whitespace_tokenize(text->get<std::string>());
  };
  auto push = [&](TokenSeq seq) {
    // Empty responses have no normalized bag of words; they are skipped.
    if (!seq.empty()) corpus.push_back(std::move(seq));
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    json doc;
    try {
      doc = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::parse,
                  "line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    if (doc.is_object() && doc.contains("responses")) {
      for (const auto& r : doc["responses"]) push(tokens_of(r));
    } else if (doc.is_object() && doc.contains("chosen") && doc.contains("rejected")) {
      if (side != PairSide::rejected) push(tokens_of(doc["chosen"]));
      if (side != PairSide::chosen) push(tokens_of(doc["rejected"]));
    } else {
      push(tokens_of(doc));
    }
  }
  return corpus;
}

}  // namespace dcrm
