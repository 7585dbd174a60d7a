#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"
#include "text.hpp"

namespace delta_recourse {

enum class VariableKind { Numeric, Categorical };

inline std::string_view to_string(VariableKind kind) {
  return kind == VariableKind::Numeric ? "numeric" : "categorical";
}

struct VariableSpec {
  std::string name;
  VariableKind kind = VariableKind::Categorical;
  bool actionable = true;

  bool operator==(const VariableSpec&) const = default;
};

/// Two-class tabular schema. class_labels[0] is the configured positive
/// label; class_labels[1] is the other label, either given up front or
/// discovered while loading data.
struct Schema {
  std::vector<VariableSpec> variables;
  std::string target;
  std::array<std::string, 2> class_labels;
  std::string id_column;  // optional; empty means "use the row number"

  const std::string& positive_label() const { return class_labels[0]; }

  std::size_t size() const { return variables.size(); }

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < variables.size(); ++i)
      if (variables[i].name == name) return i;
    return std::nullopt;
  }

  /// Throws InvalidArgument when the structural invariants do not hold.
  void validate() const {
    if (variables.empty()) throw Error(ErrorCode::InvalidArgument, "schema has no variables");
    if (target.empty()) throw Error(ErrorCode::InvalidArgument, "schema has no target");
    if (class_labels[0].empty())
      throw Error(ErrorCode::InvalidArgument, "schema has no positive_label");
    if (class_labels[0] == class_labels[1])
      throw Error(ErrorCode::InvalidArgument, "the two class labels must differ");
    std::set<std::string> seen;
    for (const auto& v : variables) {
      if (v.name.empty()) throw Error(ErrorCode::InvalidArgument, "empty variable name");
      if (v.name == target)
        throw Error(ErrorCode::InvalidArgument, "variable '" + v.name + "' equals the target name");
      if (!seen.insert(v.name).second)
        throw Error(ErrorCode::InvalidArgument, "duplicate variable '" + v.name + "'");
    }
  }

  bool operator==(const Schema&) const = default;
};

inline void to_json(nlohmann::json& j, const Schema& schema) {
  j = nlohmann::json::object();
  j["target"] = schema.target;
  j["positive_label"] = schema.class_labels[0];
  j["negative_label"] = schema.class_labels[1];
  if (!schema.id_column.empty()) j["id_column"] = schema.id_column;
  auto vars = nlohmann::json::array();
  for (const auto& v : schema.variables)
    vars.push_back({{"name", v.name}, {"kind", to_string(v.kind)}, {"actionable", v.actionable}});
  j["variables"] = std::move(vars);
}

inline Schema schema_from_json(const nlohmann::json& j) {
  Schema schema;
  try {
    schema.target = j.at("target").get<std::string>();
    schema.class_labels[0] = j.at("positive_label").get<std::string>();
    if (j.contains("negative_label")) schema.class_labels[1] = j["negative_label"].get<std::string>();
    if (j.contains("id_column")) schema.id_column = j["id_column"].get<std::string>();
    for (const auto& v : j.at("variables")) {
      VariableSpec spec;
      spec.name = v.at("name").get<std::string>();
      const auto kind = v.at("kind").get<std::string>();
      if (kind == "numeric") {
        spec.kind = VariableKind::Numeric;
      } else if (kind == "categorical") {
        spec.kind = VariableKind::Categorical;
      } else {
        throw Error(ErrorCode::FormatError, "variable '" + spec.name + "' has unknown kind '" + kind + "'");
      }
      spec.actionable = v.value("actionable", true);
      schema.variables.push_back(std::move(spec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("schema: ") + e.what());
  }
  schema.validate();
  return schema;
}

inline Schema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open schema '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, "schema '" + path + "': " + e.what());
  }
  return schema_from_json(j);
}

/// A raw cell: missing, numeric, or a categorical modality.
using RawValue = std::variant<std::monostate, double, std::string>;

inline bool is_missing(const RawValue& v) { return std::holds_alternative<std::monostate>(v); }

struct Dataset {
  Schema schema;
  std::vector<std::string> ids;
  std::vector<std::vector<RawValue>> rows;
  std::vector<int> labels;  // index into schema.class_labels

  std::size_t size() const { return rows.size(); }
};

/// Parses a CSV stream against the schema. Empty fields become missing
/// values. Numeric parsing is locale independent.
inline Dataset load_csv(std::istream& in, Schema schema) {
  schema.validate();
  csv::Record header;
  if (!csv::read_record(in, header)) throw Error(ErrorCode::MissingColumn, schema.target);
  if (!header.empty() && header[0].starts_with("\xEF\xBB\xBF")) header[0].erase(0, 3);

  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t c = 0; c < header.size(); ++c) position.emplace(header[c], c);
  auto column = [&](const std::string& name) {
    auto it = position.find(name);
    if (it == position.end()) throw Error(ErrorCode::MissingColumn, name);
    return it->second;
  };

  std::vector<std::size_t> var_cols;
  for (const auto& v : schema.variables) var_cols.push_back(column(v.name));
  const std::size_t target_col = column(schema.target);
  const std::optional<std::size_t> id_col =
      schema.id_column.empty() ? std::nullopt : std::optional(column(schema.id_column));

  Dataset ds;
  csv::Record record;
  std::size_t row = 0;
  while (csv::read_record(in, record)) {
    ++row;
    if (record.size() == 1 && record[0].empty()) continue;  // blank line
    if (record.size() != header.size())
      throw Error(ErrorCode::ParseError, "row " + std::to_string(row) + ": expected " +
                                              std::to_string(header.size()) + " fields, got " +
                                              std::to_string(record.size()));
    std::vector<RawValue> values;
    values.reserve(var_cols.size());
    for (std::size_t i = 0; i < var_cols.size(); ++i) {
      const std::string& field = record[var_cols[i]];
      const bool blank = field.find_first_not_of(" \t") == std::string::npos;
      if (blank) {
        values.emplace_back(std::monostate{});
      } else if (schema.variables[i].kind == VariableKind::Numeric) {
        auto parsed = parse_double(field);
        if (!parsed || !std::isfinite(*parsed))
          throw Error(ErrorCode::ParseError,
                      "row " + std::to_string(row) + ", column " + schema.variables[i].name);
        values.emplace_back(*parsed);
      } else {
        values.emplace_back(field);
      }
    }
    const std::string& label = record[target_col];
    int cls = -1;
    if (label == schema.class_labels[0]) {
      cls = 0;
    } else if (!label.empty() && label == schema.class_labels[1]) {
      cls = 1;
    } else if (!label.empty() && schema.class_labels[1].empty()) {
      schema.class_labels[1] = label;
      cls = 1;
    }
    if (cls < 0)
      throw Error(ErrorCode::UnknownLabel, "row " + std::to_string(row) + ": '" + label + "'");
    ds.rows.push_back(std::move(values));
    ds.labels.push_back(cls);
    ds.ids.push_back(id_col ? record[*id_col] : std::to_string(row));
  }
  ds.schema = std::move(schema);
  return ds;
}

inline Dataset load_csv(const std::string& path, Schema schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  return load_csv(in, std::move(schema));
}

inline Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.schema = ds.schema;
  out.ids.reserve(indices.size());
  out.rows.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (auto i : indices) {
    out.ids.push_back(ds.ids[i]);
    out.rows.push_back(ds.rows[i]);
    out.labels.push_back(ds.labels[i]);
  }
  return out;
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Shuffles row indices with Rng(seed) and takes the first
/// round(fraction * N) as training rows; each part is returned in file
/// order. With stratify, the rounding is applied per class.
inline SplitIndices split_indices(const Dataset& ds, double train_fraction, std::uint64_t seed,
                                  bool stratify = false) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw Error(ErrorCode::InvalidFraction, format_double(train_fraction) + " is outside (0,1)");
  const std::size_t n = ds.size();
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "split needs at least 2 rows");

  Rng rng(seed);
  SplitIndices out;
  auto take = [&](std::vector<std::size_t> pool) {
    rng.shuffle(std::span<std::size_t>(pool));
    const auto n_train = static_cast<std::size_t>(
        std::llround(train_fraction * static_cast<double>(pool.size())));
    out.train.insert(out.train.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test.insert(out.test.end(), pool.begin() + static_cast<std::ptrdiff_t>(n_train), pool.end());
  };
  if (stratify) {
    for (int cls = 0; cls < 2; ++cls) {
      std::vector<std::size_t> pool;
      for (std::size_t i = 0; i < n; ++i)
        if (ds.labels[i] == cls) pool.push_back(i);
      take(std::move(pool));
    }
  } else {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    take(std::move(pool));
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

inline std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed,
                                         bool stratify = false) {
  const auto idx = split_indices(ds, train_fraction, seed, stratify);
  return {subset(ds, idx.train), subset(ds, idx.test)};
}

}  // namespace delta_recourse
