#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <queue>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "error.hpp"
#include "text.hpp"

namespace delta_recourse {

/// Intervals of a numeric variable. Cell q covers (cut[q-1], cut[q]]; the
/// missing cell, when present, is the last one.
struct BinSpec {
  std::string variable;
  std::vector<double> cut_points;
  bool has_missing_cell = false;
  // Display only; containment never looks at these.
  double observed_min = 0.0;
  double observed_max = 0.0;
  // Cell for a missing value when no missing cell was learned.
  int fallback_cell = 0;

  int cells() const { return static_cast<int>(cut_points.size()) + 1 + (has_missing_cell ? 1 : 0); }
  int missing_cell() const { return has_missing_cell ? cells() - 1 : fallback_cell; }

  int cell_of(double value) const {
    auto it = std::lower_bound(cut_points.begin(), cut_points.end(), value);
    return static_cast<int>(it - cut_points.begin());
  }

  bool operator==(const BinSpec&) const = default;
};

/// Groups of categorical modalities. The missing modality is the empty string.
struct GroupSpec {
  std::string variable;
  std::vector<std::vector<std::string>> groups;
  int fallback_group = 0;

  int cells() const { return static_cast<int>(groups.size()); }

  int cell_of(std::string_view modality) const {
    for (std::size_t g = 0; g < groups.size(); ++g)
      for (const auto& m : groups[g])
        if (m == modality) return static_cast<int>(g);
    return fallback_group;
  }

  bool operator==(const GroupSpec&) const = default;
};

using CellSpec = std::variant<BinSpec, GroupSpec>;

/// One cell index per schema variable.
struct EncodedInstance {
  std::vector<int> cells;

  std::size_t size() const { return cells.size(); }
  int operator[](std::size_t i) const { return cells[i]; }
  int& operator[](std::size_t i) { return cells[i]; }
  bool operator==(const EncodedInstance&) const = default;
};

struct PreprocessOptions {
  int max_bins = 8;
  int min_support = 16;
  double merge_tolerance = 0.02;
};

class Preprocessor {
 public:
  Preprocessor() = default;
  explicit Preprocessor(std::vector<CellSpec> specs) : specs_(std::move(specs)) {}

  std::size_t size() const { return specs_.size(); }
  const CellSpec& spec(std::size_t i) const { return specs_[i]; }
  const std::vector<CellSpec>& specs() const { return specs_; }

  const std::string& variable(std::size_t i) const {
    return std::visit([](const auto& s) -> const std::string& { return s.variable; }, specs_[i]);
  }
  bool is_numeric(std::size_t i) const { return std::holds_alternative<BinSpec>(specs_[i]); }

  int cells(std::size_t i) const {
    return std::visit([](const auto& s) { return s.cells(); }, specs_[i]);
  }
  int total_cells() const {
    int total = 0;
    for (std::size_t i = 0; i < specs_.size(); ++i) total += cells(i);
    return total;
  }

  /// Human-readable cell label: "]17.5-42.5]" for intervals, "[DSL]" for groups.
  std::string cell_label(std::size_t i, int cell) const {
    if (const auto* bin = std::get_if<BinSpec>(&specs_[i])) {
      const int n_cuts = static_cast<int>(bin->cut_points.size());
      if (bin->has_missing_cell && cell == bin->cells() - 1) return "missing";
      const std::string lo = cell == 0 ? "[" + format_short(bin->observed_min)
                                       : "]" + format_short(bin->cut_points[cell - 1]);
      const std::string hi =
          cell == n_cuts ? format_short(bin->observed_max) : format_short(bin->cut_points[cell]);
      return lo + "-" + hi + "]";
    }
    const auto& group = std::get<GroupSpec>(specs_[i]).groups.at(static_cast<std::size_t>(cell));
    std::string out = "[";
    for (std::size_t k = 0; k < group.size(); ++k) {
      if (k) out += ", ";
      out += group[k].empty() ? "(missing)" : group[k];
    }
    return out + "]";
  }

  /// Throws SchemaMismatch unless the specs line up with the schema.
  void check_schema(const Schema& schema) const {
    if (schema.size() != specs_.size())
      throw Error(ErrorCode::SchemaMismatch, "preprocessor covers " + std::to_string(specs_.size()) +
                                                 " variables, schema has " + std::to_string(schema.size()));
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      const auto& v = schema.variables[i];
      if (v.name != variable(i) || (v.kind == VariableKind::Numeric) != is_numeric(i))
        throw Error(ErrorCode::SchemaMismatch, "variable " + std::to_string(i) + " ('" + v.name +
                                                   "') does not match the preprocessor");
    }
  }

  EncodedInstance encode_row(std::span<const RawValue> values) const {
    if (values.size() != specs_.size())
      throw Error(ErrorCode::SchemaMismatch, "record has " + std::to_string(values.size()) +
                                                 " values, expected " + std::to_string(specs_.size()));
    EncodedInstance x;
    x.cells.resize(specs_.size());
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      const RawValue& v = values[i];
      if (const auto* bin = std::get_if<BinSpec>(&specs_[i])) {
        if (is_missing(v)) {
          x.cells[i] = bin->missing_cell();
        } else if (const auto* d = std::get_if<double>(&v)) {
          x.cells[i] = bin->cell_of(*d);
        } else {
          auto parsed = parse_double(std::get<std::string>(v));
          if (!parsed) throw Error(ErrorCode::ParseError, "variable " + bin->variable);
          x.cells[i] = bin->cell_of(*parsed);
        }
      } else {
        const auto& grp = std::get<GroupSpec>(specs_[i]);
        if (is_missing(v)) {
          x.cells[i] = grp.cell_of("");
        } else if (const auto* s = std::get_if<std::string>(&v)) {
          x.cells[i] = grp.cell_of(*s);
        } else {
          x.cells[i] = grp.cell_of(format_double(std::get<double>(v)));
        }
      }
    }
    return x;
  }

  bool operator==(const Preprocessor&) const = default;

 private:
  std::vector<CellSpec> specs_;
};

namespace detail {

inline double entropy2(double a, double b) {
  const double n = a + b;
  double h = 0.0;
  if (a > 0) h -= a / n * std::log2(a / n);
  if (b > 0) h -= b / n * std::log2(b / n);
  return h;
}

struct MdlpCandidate {
  std::size_t lo = 0, hi = 0;  // half-open range of the sorted sample
  std::size_t cut = 0;         // first index of the right part; 0 = no accepted cut
  double gain = 0.0;
};

/// Best binary split of sorted[lo, hi) under the Fayyad-Irani MDL criterion.
inline MdlpCandidate mdlp_best_split(const std::vector<std::pair<double, int>>& sorted,
                                     std::size_t lo, std::size_t hi) {
  MdlpCandidate best{lo, hi, 0, 0.0};
  const std::size_t n = hi - lo;
  if (n < 2) return best;
  double total[2] = {0, 0};
  for (std::size_t p = lo; p < hi; ++p) total[sorted[p].second] += 1;
  const double ent = entropy2(total[0], total[1]);
  if (ent == 0.0) return best;

  double left[2] = {0, 0};
  double best_e = std::numeric_limits<double>::infinity();
  std::size_t best_cut = 0;
  double best_l[2] = {0, 0};
  for (std::size_t p = lo + 1; p < hi; ++p) {
    left[sorted[p - 1].second] += 1;
    if (!(sorted[p - 1].first < sorted[p].first)) continue;
    const double nl = static_cast<double>(p - lo), nr = static_cast<double>(hi - p);
    const double e = (nl * entropy2(left[0], left[1]) +
                      nr * entropy2(total[0] - left[0], total[1] - left[1])) / static_cast<double>(n);
    if (e < best_e) {
      best_e = e;
      best_cut = p;
      best_l[0] = left[0];
      best_l[1] = left[1];
    }
  }
  if (best_cut == 0) return best;

  const double right[2] = {total[0] - best_l[0], total[1] - best_l[1]};
  auto classes = [](const double* c) { return (c[0] > 0 ? 1 : 0) + (c[1] > 0 ? 1 : 0); };
  const double k = classes(total), k1 = classes(best_l), k2 = classes(right);
  const double gain = ent - best_e;
  const double delta = std::log2(std::pow(3.0, k) - 2.0) -
                       (k * ent - k1 * entropy2(best_l[0], best_l[1]) - k2 * entropy2(right[0], right[1]));
  const double nn = static_cast<double>(n);
  const double threshold = (std::log2(nn - 1.0) + delta) / nn;
  if (gain > threshold) {
    best.cut = best_cut;
    best.gain = gain;
  }
  return best;
}

}  // namespace detail

/// Supervised discretization: recursive entropy minimization with the
/// Fayyad-Irani MDL stopping rule. Accepted splits are applied best-gain
/// first so that at most max_bins - 1 cuts are kept.
inline BinSpec discretize_numeric(std::span<const double> values, std::span<const int> labels,
                                  int max_bins) {
  if (values.size() != labels.size())
    throw Error(ErrorCode::LengthMismatch, "values and labels differ in length");
  if (max_bins < 1) throw Error(ErrorCode::InvalidArgument, "max_bins must be >= 1");

  BinSpec spec;
  if (values.empty()) return spec;
  std::vector<std::pair<double, int>> sorted(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) sorted[i] = {values[i], labels[i] == 0 ? 0 : 1};
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  spec.observed_min = sorted.front().first;
  spec.observed_max = sorted.back().first;

  auto cmp = [](const detail::MdlpCandidate& a, const detail::MdlpCandidate& b) {
    if (a.gain != b.gain) return a.gain < b.gain;
    return a.lo > b.lo;
  };
  std::priority_queue<detail::MdlpCandidate, std::vector<detail::MdlpCandidate>, decltype(cmp)> queue(cmp);
  auto consider = [&](std::size_t lo, std::size_t hi) {
    auto c = detail::mdlp_best_split(sorted, lo, hi);
    if (c.cut != 0) queue.push(c);
  };
  consider(0, sorted.size());

  std::vector<double> cuts;
  while (!queue.empty() && static_cast<int>(cuts.size()) < max_bins - 1) {
    const auto c = queue.top();
    queue.pop();
    const double a = sorted[c.cut - 1].first, b = sorted[c.cut].first;
    double mid = a + (b - a) / 2.0;
    if (!(mid < b)) mid = a;
    cuts.push_back(mid);
    consider(c.lo, c.cut);
    consider(c.cut, c.hi);
  }
  std::sort(cuts.begin(), cuts.end());
  spec.cut_points = std::move(cuts);

  std::vector<std::size_t> counts(spec.cut_points.size() + 1, 0);
  for (const auto& [v, _] : sorted) ++counts[static_cast<std::size_t>(spec.cell_of(v))];
  spec.fallback_cell = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  return spec;
}

/// Supervised grouping of categorical modalities.
///
/// Modalities seen at least min_support times start as singleton groups;
/// the closest pair of groups by positive-class rate is merged while the
/// gap is within merge_tolerance. Rarer modalities then join the group
/// with the nearest rate. Groups and their members are ordered
/// lexicographically; the most populated group receives unseen modalities.
inline GroupSpec group_categorical(std::span<const std::string> values, std::span<const int> labels,
                                   int min_support, double merge_tolerance = 0.02) {
  if (values.size() != labels.size())
    throw Error(ErrorCode::LengthMismatch, "values and labels differ in length");
  if (min_support < 1) throw Error(ErrorCode::InvalidArgument, "min_support must be >= 1");

  struct Stats {
    double count = 0, positive = 0;
    double rate() const { return count > 0 ? positive / count : 0.0; }
  };
  std::map<std::string, Stats> per_modality;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& s = per_modality[values[i]];
    s.count += 1;
    if (labels[i] == 0) s.positive += 1;
  }

  struct Group {
    std::vector<std::string> members;
    Stats stats;
  };
  std::vector<Group> groups;
  std::vector<std::string> rare;
  for (const auto& [name, s] : per_modality) {
    if (s.count >= min_support) {
      groups.push_back({{name}, s});
    } else {
      rare.push_back(name);
    }
  }

  for (;;) {
    std::size_t bi = 0, bj = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < groups.size(); ++i)
      for (std::size_t j = i + 1; j < groups.size(); ++j) {
        const double gap = std::abs(groups[i].stats.rate() - groups[j].stats.rate());
        if (gap < best) {
          best = gap;
          bi = i;
          bj = j;
        }
      }
    if (groups.size() < 2 || best > merge_tolerance) break;
    auto& into = groups[bi];
    into.members.insert(into.members.end(), groups[bj].members.begin(), groups[bj].members.end());
    into.stats.count += groups[bj].stats.count;
    into.stats.positive += groups[bj].stats.positive;
    groups.erase(groups.begin() + static_cast<std::ptrdiff_t>(bj));
  }

  if (groups.empty()) {
    Group all;
    for (const auto& [name, s] : per_modality) {
      all.members.push_back(name);
      all.stats.count += s.count;
    }
    rare.clear();
    if (!all.members.empty()) groups.push_back(std::move(all));
  }

  // Rates are frozen before assigning rare modalities so the result does
  // not depend on assignment order.
  std::vector<double> rates;
  for (const auto& g : groups) rates.push_back(g.stats.rate());
  for (const auto& name : rare) {
    const double r = per_modality[name].rate();
    std::size_t target = 0;
    for (std::size_t g = 1; g < groups.size(); ++g)
      if (std::abs(rates[g] - r) < std::abs(rates[target] - r)) target = g;
    groups[target].members.push_back(name);
    groups[target].stats.count += per_modality[name].count;
  }

  for (auto& g : groups) std::sort(g.members.begin(), g.members.end());
  std::sort(groups.begin(), groups.end(),
            [](const Group& a, const Group& b) { return a.members.front() < b.members.front(); });

  GroupSpec spec;
  double most = -1;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].stats.count > most) {
      most = groups[g].stats.count;
      spec.fallback_group = static_cast<int>(g);
    }
    spec.groups.push_back(std::move(groups[g].members));
  }
  if (spec.groups.empty()) spec.groups.push_back({});
  return spec;
}

/// Fits one BinSpec or GroupSpec per schema variable on a labelled dataset.
inline Preprocessor fit_preprocessor(const Dataset& ds, const PreprocessOptions& opt = {}) {
  std::vector<CellSpec> specs;
  for (std::size_t i = 0; i < ds.schema.size(); ++i) {
    const auto& var = ds.schema.variables[i];
    if (var.kind == VariableKind::Numeric) {
      std::vector<double> values;
      std::vector<int> labels;
      bool missing = false;
      for (std::size_t r = 0; r < ds.size(); ++r) {
        if (const auto* d = std::get_if<double>(&ds.rows[r][i])) {
          values.push_back(*d);
          labels.push_back(ds.labels[r]);
        } else {
          missing = true;
        }
      }
      BinSpec spec = discretize_numeric(values, labels, opt.max_bins);
      spec.variable = var.name;
      spec.has_missing_cell = missing;
      specs.emplace_back(std::move(spec));
    } else {
      std::vector<std::string> values;
      values.reserve(ds.size());
      for (std::size_t r = 0; r < ds.size(); ++r) {
        const auto& v = ds.rows[r][i];
        if (const auto* s = std::get_if<std::string>(&v)) {
          values.push_back(*s);
        } else if (const auto* d = std::get_if<double>(&v)) {
          values.push_back(format_double(*d));
        } else {
          values.emplace_back();
        }
      }
      GroupSpec spec = group_categorical(values, ds.labels, opt.min_support, opt.merge_tolerance);
      spec.variable = var.name;
      specs.emplace_back(std::move(spec));
    }
  }
  return Preprocessor(std::move(specs));
}

inline std::vector<EncodedInstance> encode(const Dataset& ds, const Preprocessor& pre) {
  pre.check_schema(ds.schema);
  std::vector<EncodedInstance> out;
  out.reserve(ds.size());
  for (const auto& row : ds.rows) out.push_back(pre.encode_row(row));
  return out;
}

inline void to_json(nlohmann::json& j, const Preprocessor& pre) {
  j = nlohmann::json::array();
  for (const auto& spec : pre.specs()) {
    if (const auto* bin = std::get_if<BinSpec>(&spec)) {
      j.push_back({{"variable", bin->variable},
                   {"type", "bins"},
                   {"cut_points", bin->cut_points},
                   {"has_missing_cell", bin->has_missing_cell},
                   {"observed_min", bin->observed_min},
                   {"observed_max", bin->observed_max},
                   {"fallback_cell", bin->fallback_cell}});
    } else {
      const auto& grp = std::get<GroupSpec>(spec);
      j.push_back({{"variable", grp.variable},
                   {"type", "groups"},
                   {"groups", grp.groups},
                   {"fallback_group", grp.fallback_group}});
    }
  }
}

inline Preprocessor preprocessor_from_json(const nlohmann::json& j) {
  std::vector<CellSpec> specs;
  for (const auto& s : j) {
    const auto type = s.at("type").get<std::string>();
    if (type == "bins") {
      BinSpec bin;
      bin.variable = s.at("variable").get<std::string>();
      bin.cut_points = s.at("cut_points").get<std::vector<double>>();
      bin.has_missing_cell = s.at("has_missing_cell").get<bool>();
      bin.observed_min = s.at("observed_min").get<double>();
      bin.observed_max = s.at("observed_max").get<double>();
      bin.fallback_cell = s.at("fallback_cell").get<int>();
      if (!std::is_sorted(bin.cut_points.begin(), bin.cut_points.end()) ||
          std::adjacent_find(bin.cut_points.begin(), bin.cut_points.end()) != bin.cut_points.end())
        throw Error(ErrorCode::FormatError, "cut points of '" + bin.variable + "' are not strictly ascending");
      specs.emplace_back(std::move(bin));
    } else if (type == "groups") {
      GroupSpec grp;
      grp.variable = s.at("variable").get<std::string>();
      grp.groups = s.at("groups").get<std::vector<std::vector<std::string>>>();
      grp.fallback_group = s.at("fallback_group").get<int>();
      specs.emplace_back(std::move(grp));
    } else {
      throw Error(ErrorCode::FormatError, "unknown cell spec type '" + type + "'");
    }
  }
  return Preprocessor(std::move(specs));
}

}  // namespace delta_recourse
