#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "nbmodel.hpp"
#include "parallel.hpp"
#include "text.hpp"

namespace delta_recourse {

/// Move variable `variable` into cell `cell`.
struct Change {
  std::size_t variable = 0;
  int cell = 0;

  bool operator==(const Change&) const = default;
};

/// At most one change per variable.
using ChangeSet = std::vector<Change>;

inline void validate_changes(const NBModel& m, std::span<const Change> changes) {
  std::set<std::size_t> seen;
  for (const auto& c : changes) {
    if (c.variable >= m.variables())
      throw Error(ErrorCode::CellOutOfRange, "variable " + std::to_string(c.variable) + " does not exist");
    if (c.cell < 0 || c.cell >= m.cells(c.variable))
      throw Error(ErrorCode::CellOutOfRange, "variable " + std::to_string(c.variable) + " has no cell " +
                                                 std::to_string(c.cell));
    if (!seen.insert(c.variable).second)
      throw Error(ErrorCode::DuplicateVariable, "variable " + std::to_string(c.variable) + " changed twice");
  }
}

inline EncodedInstance apply_changes(EncodedInstance x, std::span<const Change> changes) {
  for (const auto& c : changes) x[c.variable] = c.cell;
  return x;
}

/// Log-odds change of the positive class when variable i of x moves to
/// cell m: W_i * (log-ratio at m - log-ratio at x_i). Positive values move
/// x toward (or across) the decision frontier.
inline double delta_univariate(const NBModel& model, const EncodedInstance& x, std::size_t i, int m) {
  model.check(x);
  if (i >= model.variables() || m < 0 || m >= model.cells(i))
    throw Error(ErrorCode::CellOutOfRange, "variable " + std::to_string(i) + " cell " + std::to_string(m));
  if (m == x[i] || model.weights[i] == 0.0) return 0.0;
  return model.weights[i] * (model.log_ratio(i, m) - model.log_ratio(i, x[i]));
}

/// Sum of univariate deltas. Naive Bayes is additive in log-odds, so this
/// equals score_logit(apply_changes(x, changes)) - score_logit(x).
inline double delta_set(const NBModel& model, const EncodedInstance& x, std::span<const Change> changes) {
  validate_changes(model, changes);
  double total = 0.0;
  for (const auto& c : changes) total += delta_univariate(model, x, c.variable, c.cell);
  return total;
}

struct KbColumn {
  std::size_t variable = 0;
  int cell = 0;

  bool operator==(const KbColumn&) const = default;
};

/// Read-only view of one knowledge-base row.
struct KbRow {
  std::string_view fingerprint;
  std::string_view id;
  std::span<const KbColumn> columns;
  std::span<const double> values;
  const EncodedInstance* factual = nullptr;
  double base_logit = 0.0;
};

/// The knowledge base: one row per individual, one column per
/// (variable, cell) over every cell of every weight-included variable.
struct DeltaTable {
  std::string model_fingerprint;
  std::string positive_label;
  std::vector<std::string> variable_names;  // full schema order
  std::vector<KbColumn> columns;
  std::vector<std::string> row_ids;
  std::vector<double> values;  // row-major, rows() x columns.size()
  std::vector<EncodedInstance> factual_cells;
  std::vector<double> base_logit;

  std::size_t rows() const { return row_ids.size(); }
  std::size_t cols() const { return columns.size(); }

  std::span<const double> row_values(std::size_t r) const {
    return std::span<const double>(values).subspan(r * cols(), cols());
  }

  KbRow row(std::size_t r) const {
    return KbRow{model_fingerprint, row_ids[r], columns, row_values(r), &factual_cells[r], base_logit[r]};
  }

  std::optional<std::size_t> find(std::string_view id) const {
    for (std::size_t r = 0; r < row_ids.size(); ++r)
      if (row_ids[r] == id) return r;
    return std::nullopt;
  }

  std::string column_name(std::size_t c) const {
    return variable_names[columns[c].variable] + ":" + std::to_string(columns[c].cell);
  }

  bool operator==(const DeltaTable&) const = default;
};

inline std::vector<KbColumn> kb_columns(const NBModel& model) {
  std::vector<KbColumn> cols;
  for (std::size_t i = 0; i < model.variables(); ++i)
    if (model.included(i))
      for (int q = 0; q < model.cells(i); ++q) cols.push_back({i, q});
  return cols;
}

/// Fills every (row, column) with delta_univariate. Factual cells are 0.
inline DeltaTable build_kb(const NBModel& model, std::span<const EncodedInstance> individuals,
                           std::span<const std::string> ids) {
  if (individuals.size() != ids.size()) throw Error(ErrorCode::LengthMismatch, "individuals vs ids");
  {
    std::set<std::string_view> seen;
    for (const auto& id : ids)
      if (!seen.insert(id).second) throw Error(ErrorCode::DuplicateId, "'" + id + "'");
  }
  for (const auto& x : individuals) model.check(x);

  DeltaTable kb;
  kb.model_fingerprint = fingerprint(model);
  kb.positive_label = model.positive_label();
  for (const auto& v : model.schema.variables) kb.variable_names.push_back(v.name);
  kb.columns = kb_columns(model);
  kb.row_ids.assign(ids.begin(), ids.end());
  kb.factual_cells.assign(individuals.begin(), individuals.end());
  kb.base_logit.resize(individuals.size());
  kb.values.assign(individuals.size() * kb.columns.size(), 0.0);

  const std::size_t cols = kb.columns.size();
  parallel_for(individuals.size(), [&](std::size_t r) {
    const auto& x = individuals[r];
    kb.base_logit[r] = score_logit(model, x);
    for (std::size_t c = 0; c < cols; ++c) {
      const auto& col = kb.columns[c];
      kb.values[r * cols + c] = col.cell == x[col.variable] ? 0.0 : delta_univariate(model, x, col.variable, col.cell);
    }
  });
  return kb;
}

/// A single KB row computed on the fly for an instance that is not stored.
inline DeltaTable kb_for_instance(const NBModel& model, const EncodedInstance& x, std::string id = "query") {
  const std::string ids[1] = {std::move(id)};
  return build_kb(model, std::span<const EncodedInstance>(&x, 1), ids);
}

/// Change in positive-class probability per column. Unlike the log-odds
/// deltas these are NOT additive across variables; display only.
inline std::vector<double> probability_deltas(const DeltaTable& kb, std::size_t r) {
  const double p0 = sigmoid(kb.base_logit[r]);
  std::vector<double> out;
  for (double d : kb.row_values(r)) out.push_back(d == 0.0 ? 0.0 : sigmoid(kb.base_logit[r] + d) - p0);
  return out;
}

inline void require_same_model(const KbRow& row, const NBModel& model) {
  if (row.fingerprint != fingerprint(model))
    throw Error(ErrorCode::FingerprintMismatch, "knowledge base was built from a different model");
}

// ---- persistence -------------------------------------------------------

inline constexpr int kKbFormatVersion = 1;

/// kb.csv -> kb.meta.json; anything else gets ".meta.json" appended.
inline std::string kb_metadata_path(const std::string& csv_path) {
  if (csv_path.size() > 4 && csv_path.ends_with(".csv"))
    return csv_path.substr(0, csv_path.size() - 4) + ".meta.json";
  return csv_path + ".meta.json";
}

inline void write_kb(const DeltaTable& kb, std::ostream& csv_out, std::ostream& meta_out) {
  csv::Record rec{"id"};
  for (std::size_t c = 0; c < kb.cols(); ++c) rec.push_back(kb.column_name(c));
  csv::write_record(csv_out, rec);
  for (std::size_t r = 0; r < kb.rows(); ++r) {
    rec.assign(1, kb.row_ids[r]);
    for (double v : kb.row_values(r)) rec.push_back(format_double(v));
    csv::write_record(csv_out, rec);
  }

  nlohmann::json meta;
  meta["format"] = "delta-recourse-kb";
  meta["version"] = kKbFormatVersion;
  meta["model_fingerprint"] = kb.model_fingerprint;
  meta["positive_label"] = kb.positive_label;
  meta["variables"] = kb.variable_names;
  auto cols = nlohmann::json::array();
  for (const auto& c : kb.columns) cols.push_back({{"variable", c.variable}, {"cell", c.cell}});
  meta["columns"] = std::move(cols);
  auto factual = nlohmann::json::array();
  for (const auto& x : kb.factual_cells) factual.push_back(x.cells);
  meta["factual_cells"] = std::move(factual);
  meta["base_logits"] = kb.base_logit;
  meta_out << meta.dump(2) << "\n";
}

inline void save_kb(const DeltaTable& kb, const std::string& csv_path) {
  std::ofstream csv_out(csv_path, std::ios::binary);
  std::ofstream meta_out(kb_metadata_path(csv_path), std::ios::binary);
  if (!csv_out || !meta_out) throw Error(ErrorCode::IoError, "cannot write knowledge base '" + csv_path + "'");
  write_kb(kb, csv_out, meta_out);
  if (!csv_out || !meta_out) throw Error(ErrorCode::IoError, "write failed for '" + csv_path + "'");
}

/// Reads a KB. When expected_fingerprint is non-empty (strict mode) a KB
/// built from another model is rejected with FingerprintMismatch.
inline DeltaTable read_kb(std::istream& csv_in, std::istream& meta_in, std::string_view expected_fingerprint = {}) {
  DeltaTable kb;
  try {
    nlohmann::json meta;
    meta_in >> meta;
    if (meta.at("format").get<std::string>() != "delta-recourse-kb" ||
        meta.at("version").get<int>() != kKbFormatVersion)
      throw Error(ErrorCode::FormatError, "not a knowledge-base metadata document");
    kb.model_fingerprint = meta.at("model_fingerprint").get<std::string>();
    kb.positive_label = meta.at("positive_label").get<std::string>();
    kb.variable_names = meta.at("variables").get<std::vector<std::string>>();
    for (const auto& c : meta.at("columns")) {
      KbColumn col{c.at("variable").get<std::size_t>(), c.at("cell").get<int>()};
      if (col.variable >= kb.variable_names.size()) throw Error(ErrorCode::FormatError, "column variable out of range");
      kb.columns.push_back(col);
    }
    for (const auto& f : meta.at("factual_cells")) kb.factual_cells.push_back({f.get<std::vector<int>>()});
    kb.base_logit = meta.at("base_logits").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("knowledge-base metadata: ") + e.what());
  }
  if (!expected_fingerprint.empty() && expected_fingerprint != kb.model_fingerprint)
    throw Error(ErrorCode::FingerprintMismatch, "knowledge base fingerprint " + kb.model_fingerprint +
                                                    " does not match model " + std::string(expected_fingerprint));

  csv::Record rec;
  if (!csv::read_record(csv_in, rec) || rec.size() != kb.cols() + 1 || rec[0] != "id")
    throw Error(ErrorCode::FormatError, "knowledge-base header is malformed");
  for (std::size_t c = 0; c < kb.cols(); ++c)
    if (rec[c + 1] != kb.column_name(c))
      throw Error(ErrorCode::FormatError, "header column " + std::to_string(c + 1) + " is '" + rec[c + 1] +
                                              "', expected '" + kb.column_name(c) + "'");
  std::size_t line = 1;
  while (csv::read_record(csv_in, rec)) {
    ++line;
    if (rec.size() == 1 && rec[0].empty()) continue;
    if (rec.size() != kb.cols() + 1)
      throw Error(ErrorCode::FormatError, "line " + std::to_string(line) + " has " + std::to_string(rec.size()) + " fields");
    kb.row_ids.push_back(rec[0]);
    for (std::size_t c = 1; c < rec.size(); ++c) {
      auto v = parse_double(rec[c]);
      if (!v) throw Error(ErrorCode::FormatError, "line " + std::to_string(line) + " field " + std::to_string(c));
      kb.values.push_back(*v);
    }
  }
  if (kb.rows() != kb.factual_cells.size() || kb.rows() != kb.base_logit.size())
    throw Error(ErrorCode::FormatError, "row count differs between CSV and metadata");
  for (std::size_t r = 0; r < kb.rows(); ++r) {
    const auto& x = kb.factual_cells[r];
    if (x.size() != kb.variable_names.size()) throw Error(ErrorCode::FormatError, "factual row " + std::to_string(r));
    for (std::size_t c = 0; c < kb.cols(); ++c)
      if (kb.columns[c].cell == x[kb.columns[c].variable] && kb.values[r * kb.cols() + c] != 0.0)
        throw Error(ErrorCode::FormatError, "row '" + kb.row_ids[r] + "' is not zero at its factual cell");
  }
  return kb;
}

inline DeltaTable load_kb(const std::string& csv_path, std::string_view expected_fingerprint = {}) {
  std::ifstream csv_in(csv_path, std::ios::binary);
  std::ifstream meta_in(kb_metadata_path(csv_path), std::ios::binary);
  if (!csv_in || !meta_in) throw Error(ErrorCode::IoError, "cannot open knowledge base '" + csv_path + "'");
  return read_kb(csv_in, meta_in, expected_fingerprint);
}

}  // namespace delta_recourse
