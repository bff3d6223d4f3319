#include "cpdefer/dataio.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>

#include "cpdefer/error.hpp"

namespace cpdefer {

namespace fs = std::filesystem;

namespace {

class LineReader {
 public:
  explicit LineReader(const fs::path& path) : path_(path), in_(path) {
    if (!in_) throw ValidationError(fmt::format("cannot open '{}'", path.string()));
  }

  // Next non-blank line with any trailing CR removed.
  bool next(std::string& line) {
    while (std::getline(in_, line)) {
      ++number_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") != std::string::npos) return true;
    }
    return false;
  }

  std::size_t number() const { return number_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw ValidationError(fmt::format("{}:{}: {}", path_.string(), number_, what));
  }

 private:
  fs::path path_;
  std::ifstream in_;
  std::size_t number_ = 0;
};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
bool parse_number(const std::string& field, T& out) {
  const char* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, out);
  return ec == std::errc() && ptr == end && !field.empty();
}

int parse_int(const LineReader& reader, const std::string& field, const char* what) {
  int v = 0;
  if (!parse_number(field, v)) reader.fail(fmt::format("{} '{}' is not an integer", what, field));
  return v;
}

double parse_double(const LineReader& reader, const std::string& field, const char* what) {
  double v = 0.0;
  if (!parse_number(field, v)) reader.fail(fmt::format("{} '{}' is not a number", what, field));
  return v;
}

void expect_header(const LineReader& reader, const std::string& line, const std::string& expected) {
  if (line != expected) reader.fail(fmt::format("expected header '{}', got '{}'", expected, line));
}

void expect_fields(const LineReader& reader, const std::vector<std::string>& fields, std::size_t n) {
  if (fields.size() != n) reader.fail(fmt::format("expected {} fields, got {}", n, fields.size()));
}

std::optional<double> parse_optional(const LineReader& reader, const std::string& field, const char* what) {
  if (field.empty()) return std::nullopt;
  return parse_double(reader, field, what);
}

}  // namespace

ProbabilityTable load_probabilities(const fs::path& path, LoadDiagnostics* diag) {
  LineReader reader(path);
  std::string line;
  if (!reader.next(line)) reader.fail("missing header");
  const auto header = split(line);
  if (header.size() < 4 || header[0] != "sample_id" || header[1] != "true_label") {
    reader.fail("header must be sample_id,true_label,p_0,...,p_{C-1} with C >= 2");
  }
  const std::size_t c = header.size() - 2;
  for (std::size_t k = 0; k < c; ++k) {
    if (header[k + 2] != fmt::format("p_{}", k)) {
      reader.fail(fmt::format("header column {} should be p_{}, got '{}'", k + 3, k, header[k + 2]));
    }
  }

  std::vector<ProbabilityTable::Row> rows;
  std::unordered_map<std::string, std::size_t> seen;
  std::size_t renormalized = 0;
  while (reader.next(line)) {
    const auto fields = split(line);
    expect_fields(reader, fields, c + 2);
    const std::string& id = fields[0];
    if (id.empty()) reader.fail("empty sample_id");
    if (const auto [it, fresh] = seen.emplace(id, reader.number()); !fresh) {
      reader.fail(fmt::format("duplicate sample_id '{}' (first seen on line {})", id, it->second));
    }
    const int truth = parse_int(reader, fields[1], "true_label");
    if (truth < 0 || static_cast<std::size_t>(truth) >= c) {
      reader.fail(fmt::format("true_label {} outside [0, {})", truth, c));
    }
    std::vector<double> p(c);
    for (std::size_t k = 0; k < c; ++k) p[k] = parse_double(reader, fields[k + 2], "probability");
    bool rescaled = false;
    try {
      rows.push_back({id, truth, ProbVector::normalized(std::move(p), rescaled)});
    } catch (const ValidationError& e) {
      reader.fail(fmt::format("sample '{}': {}", id, e.what()));
    }
    renormalized += rescaled;
  }
  if (diag) diag->renormalized_rows = renormalized;
  return ProbabilityTable(c, std::move(rows));
}

AnnotationStore load_annotations(const fs::path& path, const ProbabilityTable& table) {
  LineReader reader(path);
  std::string line;
  if (!reader.next(line)) return AnnotationStore({}, table);
  expect_header(reader, line, "expert_id,sample_id,predicted_label");

  std::vector<ExpertRecord> records;
  std::unordered_map<std::string, std::size_t> seen;
  while (reader.next(line)) {
    const auto fields = split(line);
    expect_fields(reader, fields, 3);
    if (fields[0].empty()) reader.fail("empty expert_id");
    if (!table.find(fields[1])) reader.fail(fmt::format("unknown sample_id '{}'", fields[1]));
    const int label = parse_int(reader, fields[2], "predicted_label");
    if (label < 0 || static_cast<std::size_t>(label) >= table.num_classes()) {
      reader.fail(fmt::format("predicted_label {} outside [0, {})", label, table.num_classes()));
    }
    const std::string key = fields[0] + '\n' + fields[1];
    if (const auto [it, fresh] = seen.emplace(key, reader.number()); !fresh) {
      reader.fail(fmt::format("duplicate annotation by '{}' on '{}' (first seen on line {})", fields[0], fields[1],
                              it->second));
    }
    records.push_back({fields[0], fields[1], label});
  }
  return AnnotationStore(std::move(records), table);
}

ClassMapping load_class_mapping(const fs::path& path) {
  LineReader reader(path);
  std::string line;
  if (!reader.next(line)) reader.fail("missing header");
  expect_header(reader, line, "fine_label,coarse_label");
  std::vector<std::pair<int, int>> pairs;
  std::unordered_map<int, std::size_t> seen;
  while (reader.next(line)) {
    const auto fields = split(line);
    expect_fields(reader, fields, 2);
    const int fine = parse_int(reader, fields[0], "fine_label");
    const int coarse = parse_int(reader, fields[1], "coarse_label");
    if (fine < 0 || coarse < 0) reader.fail("labels must be non-negative");
    if (const auto [it, fresh] = seen.emplace(fine, reader.number()); !fresh) {
      reader.fail(fmt::format("fine label {} mapped twice (first on line {})", fine, it->second));
    }
    pairs.emplace_back(fine, coarse);
  }
  try {
    return ClassMapping::from_pairs(pairs);
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::map<std::string, double> load_costs(const fs::path& path) {
  LineReader reader(path);
  std::string line;
  if (!reader.next(line)) reader.fail("missing header");
  expect_header(reader, line, "expert_id,cost");
  std::map<std::string, double> costs;
  while (reader.next(line)) {
    const auto fields = split(line);
    expect_fields(reader, fields, 2);
    const double cost = parse_double(reader, fields[1], "cost");
    if (!std::isfinite(cost) || cost < 0.0) reader.fail(fmt::format("cost {} must be finite and >= 0", fields[1]));
    if (!costs.emplace(fields[0], cost).second) reader.fail(fmt::format("duplicate expert_id '{}'", fields[0]));
  }
  return costs;
}

std::vector<std::string> load_label_names(const fs::path& path) {
  LineReader reader(path);
  std::vector<std::string> names;
  std::string line;
  while (reader.next(line)) names.push_back(line);
  return names;
}

ProbabilityTable aggregate_superclasses(const ProbabilityTable& table, const ClassMapping& mapping) {
  if (mapping.num_fine() != table.num_classes()) {
    throw ValidationError(fmt::format("class mapping covers {} fine labels but the table has {}", mapping.num_fine(),
                                      table.num_classes()));
  }
  std::vector<ProbabilityTable::Row> rows;
  rows.reserve(table.size());
  for (const auto& row : table.rows()) {
    std::vector<double> coarse(mapping.num_coarse, 0.0);
    for (std::size_t i = 0; i < table.num_classes(); ++i) {
      coarse[static_cast<std::size_t>(mapping.coarse_of_fine[i])] += row.probs[i];
    }
    double total = 0.0;
    for (double v : coarse) total += v;
    for (double& v : coarse) v /= total;
    rows.push_back({row.sample_id, mapping.coarse_of_fine[static_cast<std::size_t>(row.truth)],
                    ProbVector(std::move(coarse))});
  }
  return ProbabilityTable(mapping.num_coarse, std::move(rows));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  out.flush();
  if (!out) throw ReplayError(fmt::format("cannot write '{}'", path.string()));
}

void write_probabilities(const ProbabilityTable& table, const fs::path& path) {
  std::string text = "sample_id,true_label";
  for (std::size_t k = 0; k < table.num_classes(); ++k) text += fmt::format(",p_{}", k);
  text += '\n';
  for (const auto& row : table.rows()) {
    text += fmt::format("{},{}", row.sample_id, row.truth);
    for (double v : row.probs.values()) text += fmt::format(",{:.17g}", v);
    text += '\n';
  }
  write_text(path, text);
}

void write_annotations(const AnnotationStore& store, const fs::path& path) {
  std::string text = "expert_id,sample_id,predicted_label\n";
  for (const auto& r : store.records()) text += fmt::format("{},{},{}\n", r.expert_id, r.sample_id, r.predicted_label);
  write_text(path, text);
}

std::string format_results(std::span<const RunResult> rows) {
  std::string text = kResultsHeader;
  text += '\n';
  for (const RunResult& r : rows) {
    text += fmt::format("{},{},{},{},{},{},{},", r.split_index, to_string(r.score), to_string(r.strategy), r.alpha,
                        r.accuracy, r.n_queries, r.max_qpe);
    if (r.avg_qpe) text += fmt::format("{}", *r.avg_qpe);
    text += '\n';
  }
  return text;
}

std::vector<RunResult> load_results(const fs::path& path) {
  LineReader reader(path);
  std::string line;
  if (!reader.next(line)) reader.fail("missing header");
  expect_header(reader, line, kResultsHeader);
  std::vector<RunResult> rows;
  while (reader.next(line)) {
    const auto f = split(line);
    expect_fields(reader, f, 8);
    RunResult r;
    std::size_t split_index = 0;
    if (!parse_number(f[0], split_index)) reader.fail(fmt::format("split '{}' is not an index", f[0]));
    r.split_index = split_index;
    try {
      r.score = parse_score_kind(f[1]);
      r.strategy = parse_strategy(f[2]);
    } catch (const ValidationError& e) {
      reader.fail(e.what());
    }
    r.alpha = parse_double(reader, f[3], "alpha");
    r.accuracy = parse_double(reader, f[4], "accuracy");
    if (!parse_number(f[5], r.n_queries)) reader.fail(fmt::format("n_queries '{}' is not an integer", f[5]));
    if (!parse_number(f[6], r.max_qpe)) reader.fail(fmt::format("max_qpe '{}' is not an integer", f[6]));
    r.avg_qpe = parse_optional(reader, f[7], "avg_qpe");
    rows.push_back(r);
  }
  return rows;
}

namespace {

nlohmann::json mean_sd_json(const MeanSd& m) { return {{"mean", m.mean}, {"sd", m.sd}}; }

}  // namespace

nlohmann::json summary_json(std::span<const StrategySummary> summaries) {
  nlohmann::json out = nlohmann::json::array();
  for (const StrategySummary& s : summaries) {
    nlohmann::json j;
    j["score"] = std::string(to_string(s.score));
    j["strategy"] = std::string(to_string(s.strategy));
    j["alpha_opt"] = s.alpha_opt ? nlohmann::json(*s.alpha_opt) : nlohmann::json(nullptr);
    j["n_splits"] = s.n_splits;
    j["accuracy"] = mean_sd_json(s.accuracy);
    j["n_queries"] = mean_sd_json(s.n_queries);
    j["max_qpe"] = mean_sd_json(s.max_qpe);
    j["avg_qpe"] = s.avg_qpe ? mean_sd_json(*s.avg_qpe) : nlohmann::json(nullptr);
    if (s.significance) {
      const auto& v = *s.significance;
      j["significance"] = {{"test", std::string(to_string(v.test_used))},
                           {"p_value", v.p_value},
                           {"stars", v.stars},
                           {"baseline", std::string(to_string(v.baseline))},
                           {"complementarity", v.complementarity}};
    } else {
      j["significance"] = nullptr;
    }
    out.push_back(std::move(j));
  }
  return out;
}

ResultPaths write_results(std::vector<RunResult> rows, std::span<const StrategySummary> summaries,
                          const fs::path& out_dir, const nlohmann::json& meta) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw ReplayError(fmt::format("cannot create '{}': {}", out_dir.string(), ec.message()));
  sort_results(rows);
  ResultPaths paths{out_dir / "results.csv", out_dir / "summary.json"};
  write_text(paths.results_csv, format_results(rows));
  nlohmann::json doc;
  doc["run"] = meta;
  doc["strategies"] = summary_json(summaries);
  write_text(paths.summary_json, doc.dump(2) + "\n");
  return paths;
}

nlohmann::json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot open '{}'", path.string()));
  try {
    nlohmann::json j = nlohmann::json::parse(in);
    if (!j.is_object()) throw ValidationError(fmt::format("{}: expected a JSON object", path.string()));
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace cpdefer
