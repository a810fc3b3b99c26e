#pragma once

// Tabular binary-classification data: CSV ingestion (RFC-4180 style),
// schema-driven encoding (one-hot categoricals, mean-imputed numerics),
// seeded train/validation splitting, and score-column augmentation.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mcal/common.hpp"

namespace mcal {

struct MissingLabelColumn : Error {
  using Error::Error;
};
struct UnparseableLabel : Error {
  using Error::Error;
};
struct EmptyFile : Error {
  using Error::Error;
};
struct SchemaMismatch : Error {
  using Error::Error;
};
struct DegenerateSplit : Error {
  using Error::Error;
};
struct LengthMismatch : Error {
  using Error::Error;
};
struct ScoreOutOfRange : Error {
  using Error::Error;
};

// Reserved name for the model-score feature slot; augmenting twice replaces
// the column instead of stacking a second one.
inline constexpr const char* kScoreColumnName = "__score__";
inline constexpr const char* kMissingLevel = "__missing__";

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct Dataset {
  std::vector<std::vector<double>> columns;  // d columns, each of length n
  std::vector<std::string> feature_names;    // length d
  std::vector<double> labels;                // values in {0.0, 1.0}
  std::vector<double> weights;               // empty means all ones

  std::size_t n_rows() const { return labels.size(); }
  std::size_t n_features() const { return columns.size(); }
  double value(std::size_t row, std::size_t col) const {
    return columns[col][row];
  }
  double weight(std::size_t row) const {
    return weights.empty() ? 1.0 : weights[row];
  }

  std::optional<std::size_t> find_column(std::string_view name) const {
    for (std::size_t j = 0; j < feature_names.size(); ++j)
      if (feature_names[j] == name) return j;
    return std::nullopt;
  }

  Dataset subset(const std::vector<std::size_t>& rows) const {
    Dataset out;
    out.feature_names = feature_names;
    out.columns.resize(columns.size());
    for (std::size_t j = 0; j < columns.size(); ++j) {
      out.columns[j].reserve(rows.size());
      for (const std::size_t r : rows) out.columns[j].push_back(columns[j][r]);
    }
    out.labels.reserve(rows.size());
    for (const std::size_t r : rows) out.labels.push_back(labels[r]);
    if (!weights.empty()) {
      out.weights.reserve(rows.size());
      for (const std::size_t r : rows) out.weights.push_back(weights[r]);
    }
    return out;
  }

  void check_valid() const {
    if (n_rows() == 0 || n_features() == 0)
      throw Error("dataset must have n >= 1 and d >= 1");
    for (const auto& col : columns)
      if (col.size() != n_rows())
        throw Error("dataset column length mismatch");
    for (const double y : labels)
      if (y != 0.0 && y != 1.0) throw Error("labels must be 0 or 1");
    for (const auto& col : columns)
      for (const double v : col)
        if (!std::isfinite(v)) throw Error("non-finite feature value");
    if (!weights.empty()) {
      if (weights.size() != n_rows()) throw Error("weight length mismatch");
      for (const double w : weights)
        if (!(w >= 0.0)) throw Error("negative weight");
    }
  }
};

// ---------------------------------------------------------------------------
// FeatureSchema
// ---------------------------------------------------------------------------

enum class ColumnKind { Numeric, Categorical };

struct ColumnSchema {
  std::string name;
  ColumnKind kind = ColumnKind::Numeric;
  double impute_value = 0.0;        // numeric: training mean of present values
  std::vector<std::string> levels;  // categorical: first-seen order
};

// Encoding is a pure function of the schema: same schema + same raw rows
// always produce identical matrices. Unknown categorical levels map to the
// all-zero one-hot block.
struct FeatureSchema {
  std::vector<ColumnSchema> columns;  // file column order, label excluded
  std::string label_column;

  std::vector<std::string> encoded_feature_names() const {
    std::vector<std::string> names;
    for (const auto& c : columns) {
      if (c.kind == ColumnKind::Numeric) {
        names.push_back(c.name);
      } else {
        for (const auto& lvl : c.levels) names.push_back(c.name + "=" + lvl);
      }
    }
    return names;
  }

  nlohmann::json to_json() const {
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& c : columns) {
      cols.push_back({{"name", c.name},
                      {"kind", c.kind == ColumnKind::Numeric ? "numeric"
                                                             : "categorical"},
                      {"impute_value", c.impute_value},
                      {"levels", c.levels}});
    }
    return {{"label_column", label_column}, {"columns", cols}};
  }

  static FeatureSchema from_json(const nlohmann::json& j) {
    FeatureSchema s;
    s.label_column = j.at("label_column").get<std::string>();
    for (const auto& c : j.at("columns")) {
      ColumnSchema col;
      col.name = c.at("name").get<std::string>();
      col.kind = c.at("kind").get<std::string>() == "numeric"
                     ? ColumnKind::Numeric
                     : ColumnKind::Categorical;
      col.impute_value = c.at("impute_value").get<double>();
      col.levels = c.at("levels").get<std::vector<std::string>>();
      s.columns.push_back(std::move(col));
    }
    return s;
  }
};

// ---------------------------------------------------------------------------
// CSV parsing
// ---------------------------------------------------------------------------

namespace detail {

// RFC-4180 parser: quoted fields may contain commas, escaped quotes ("")
// and newlines. Accepts both LF and CRLF.
inline std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool any = false;
  int c;
  while ((c = in.get()) != EOF) {
    any = true;
    const char ch = static_cast<char>(c);
    if (in_quotes) {
      if (ch == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(ch);
      }
      continue;
    }
    switch (ch) {
      case '"':
        in_quotes = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        break;
      case '\r':
        break;
      case '\n':
        row.push_back(std::move(field));
        field.clear();
        rows.push_back(std::move(row));
        row.clear();
        break;
      default:
        field.push_back(ch);
    }
  }
  if (any && (!field.empty() || !row.empty())) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* begin = s.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  while (end && *end == ' ') ++end;
  return end == begin + s.size();
}

inline bool parse_label(const std::string& s, double& out) {
  if (s == "0" || s == "false") {
    out = 0.0;
    return true;
  }
  if (s == "1" || s == "true") {
    out = 1.0;
    return true;
  }
  return false;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (const char ch : s) {
    if (ch == '"') out += "\"\"";
    else out.push_back(ch);
  }
  out += "\"";
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// load_csv
// ---------------------------------------------------------------------------

struct LoadedCsv {
  Dataset data;
  FeatureSchema schema;
  std::vector<double> extracted;  // values of `extract_column`, if requested
};

namespace detail {

inline FeatureSchema infer_schema(
    const std::vector<std::string>& header,
    const std::vector<std::vector<std::string>>& body,
    const std::vector<bool>& skip, const std::string& label_column) {
  FeatureSchema schema;
  schema.label_column = label_column;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (skip[j]) continue;
    ColumnSchema col;
    col.name = header[j];
    bool numeric = true;
    for (const auto& r : body) {
      const std::string& v = r[j];
      double x;
      if (v.empty()) continue;  // missing
      if (!parse_number(v, x)) {
        numeric = false;
        break;
      }
    }
    if (numeric) {
      col.kind = ColumnKind::Numeric;
      double sum = 0.0;
      std::size_t cnt = 0;
      for (const auto& r : body) {
        double x;
        if (parse_number(r[j], x)) {
          sum += x;
          ++cnt;
        }
      }
      col.impute_value = cnt > 0 ? sum / static_cast<double>(cnt) : 0.0;
    } else {
      col.kind = ColumnKind::Categorical;
      std::unordered_map<std::string, std::size_t> seen;
      for (const auto& r : body) {
        const std::string lvl = r[j].empty() ? kMissingLevel : r[j];
        if (seen.emplace(lvl, col.levels.size()).second)
          col.levels.push_back(lvl);
      }
    }
    schema.columns.push_back(std::move(col));
  }
  return schema;
}

}  // namespace detail

// Loads and encodes a CSV file. The header row is required. If `schema` is
// not given it is inferred (column kinds, categorical levels in first-seen
// order, numeric imputation means). `extract_column`, when set, names a
// column that is parsed as a double and excluded from the features (used for
// externally supplied scores). If `allow_missing_label` is set and the label
// column is absent, labels come back as zeros.
inline LoadedCsv load_csv(const std::string& path,
                          const std::string& label_column,
                          const std::optional<FeatureSchema>& schema =
                              std::nullopt,
                          const std::string& extract_column = "",
                          bool allow_missing_label = false) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EmptyFile("cannot open file: " + path);
  auto rows = detail::parse_csv(in);
  if (rows.empty()) throw EmptyFile("empty file: " + path);

  const std::vector<std::string> header = rows.front();
  std::vector<std::vector<std::string>> body(rows.begin() + 1, rows.end());
  if (body.empty()) throw EmptyFile("no data rows in: " + path);
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (body[i].size() != header.size())
      throw Error("row " + std::to_string(i + 2) + " has " +
                  std::to_string(body[i].size()) + " fields, expected " +
                  std::to_string(header.size()));
  }

  std::optional<std::size_t> label_idx;
  std::optional<std::size_t> extract_idx;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == label_column) label_idx = j;
    if (!extract_column.empty() && header[j] == extract_column) extract_idx = j;
  }
  if (!label_idx && !allow_missing_label)
    throw MissingLabelColumn("label column not found: " + label_column);
  if (!extract_column.empty() && !extract_idx)
    throw Error("column not found: " + extract_column);

  std::vector<bool> skip(header.size(), false);
  if (label_idx) skip[*label_idx] = true;
  if (extract_idx) skip[*extract_idx] = true;

  LoadedCsv out;
  out.schema = schema ? *schema
                      : detail::infer_schema(header, body, skip, label_column);

  // Schema/file reconciliation: every schema column must exist in the file
  // and every non-label, non-extracted file column must exist in the schema.
  std::unordered_map<std::string, std::size_t> file_col;
  for (std::size_t j = 0; j < header.size(); ++j)
    if (!skip[j]) file_col[header[j]] = j;
  for (const auto& c : out.schema.columns) {
    if (!file_col.count(c.name))
      throw SchemaMismatch("schema column missing from file: " + c.name);
  }
  if (file_col.size() != out.schema.columns.size()) {
    for (const auto& [name, j] : file_col) {
      bool found = false;
      for (const auto& c : out.schema.columns)
        if (c.name == name) found = true;
      if (!found)
        throw SchemaMismatch("schema lacks column present in file: " + name);
    }
  }

  const std::size_t n = body.size();

  // Labels.
  out.data.labels.resize(n, 0.0);
  if (label_idx) {
    for (std::size_t i = 0; i < n; ++i) {
      double y;
      if (!detail::parse_label(body[i][*label_idx], y))
        throw UnparseableLabel("unparseable label '" + body[i][*label_idx] +
                               "' at row " + std::to_string(i + 2));
      out.data.labels[i] = y;
    }
  }

  // Extracted column.
  if (extract_idx) {
    out.extracted.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double v;
      if (!detail::parse_number(body[i][*extract_idx], v))
        throw Error("unparseable value in column '" + extract_column +
                    "' at row " + std::to_string(i + 2));
      out.extracted[i] = v;
    }
  }

  // Encode.
  out.data.feature_names = out.schema.encoded_feature_names();
  out.data.columns.assign(out.data.feature_names.size(),
                          std::vector<double>(n, 0.0));
  std::size_t enc = 0;
  for (const auto& c : out.schema.columns) {
    const std::size_t j = file_col.at(c.name);
    if (c.kind == ColumnKind::Numeric) {
      for (std::size_t i = 0; i < n; ++i) {
        double x;
        out.data.columns[enc][i] =
            detail::parse_number(body[i][j], x) ? x : c.impute_value;
      }
      ++enc;
    } else {
      std::unordered_map<std::string, std::size_t> level_of;
      for (std::size_t k = 0; k < c.levels.size(); ++k)
        level_of[c.levels[k]] = k;
      for (std::size_t i = 0; i < n; ++i) {
        const std::string lvl =
            body[i][j].empty() ? kMissingLevel : body[i][j];
        const auto it = level_of.find(lvl);
        if (it != level_of.end()) out.data.columns[enc + it->second][i] = 1.0;
        // unknown level: all-zeros block
      }
      enc += c.levels.size();
    }
  }
  out.data.check_valid();
  return out;
}

// ---------------------------------------------------------------------------
// train/validation split
// ---------------------------------------------------------------------------

struct SplitSpec {
  double valid_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
};

// Seeded uniform shuffle of {0..n-1}; validation takes round(n*fraction)
// indices clamped to [1, n-1]. Both halves come back sorted ascending so
// downstream row order is canonical.
inline SplitIndices split_indices(std::size_t n, const SplitSpec& spec) {
  if (n < 2) throw DegenerateSplit("cannot split fewer than 2 rows");
  if (!(spec.valid_fraction > 0.0 && spec.valid_fraction < 1.0))
    throw Error("valid_fraction must be in (0,1)");
  std::size_t v = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * spec.valid_fraction));
  v = std::max<std::size_t>(1, std::min(v, n - 1));

  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(spec.seed);
  deterministic_shuffle(idx, rng);

  SplitIndices out;
  out.valid.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(v));
  out.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(v), idx.end());
  std::sort(out.valid.begin(), out.valid.end());
  std::sort(out.train.begin(), out.train.end());
  return out;
}

inline std::pair<Dataset, Dataset> train_valid_split(const Dataset& data,
                                                     const SplitSpec& spec) {
  const SplitIndices idx = split_indices(data.n_rows(), spec);
  return {data.subset(idx.train), data.subset(idx.valid)};
}

// ---------------------------------------------------------------------------
// score augmentation
// ---------------------------------------------------------------------------

// Appends (or replaces) the reserved score column with the given
// probabilities. Each boosting round must see only the latest scores, so a
// pre-existing score column is overwritten rather than stacked.
inline Dataset augment_with_score(const Dataset& data,
                                  const std::vector<double>& scores) {
  if (scores.size() != data.n_rows())
    throw LengthMismatch("score vector length " +
                         std::to_string(scores.size()) + " != n rows " +
                         std::to_string(data.n_rows()));
  for (const double s : scores)
    if (!(s >= 0.0 && s <= 1.0))
      throw ScoreOutOfRange("score outside [0,1]: " + format_double(s));

  Dataset out = data;
  const auto existing = data.find_column(kScoreColumnName);
  if (existing) {
    out.columns[*existing] = scores;
  } else {
    out.columns.push_back(scores);
    out.feature_names.push_back(kScoreColumnName);
  }
  return out;
}

}  // namespace mcal
