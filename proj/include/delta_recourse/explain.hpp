#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "delta.hpp"
#include "error.hpp"
#include "nbmodel.hpp"
#include "text.hpp"

namespace delta_recourse {

/// Business constraints on which changes a search may propose.
struct ConstraintSet {
  std::set<std::size_t> frozen;          // never changed (non-actionable)
  std::set<std::size_t> adjacency_only;  // numeric variables may only move one interval
  ChangeSet forced;                      // applied first, in order
  std::set<std::pair<std::size_t, int>> forbidden;
  std::optional<int> max_changes;

  bool operator==(const ConstraintSet&) const = default;
};

/// Freezes every variable the schema marks as non-actionable.
inline ConstraintSet constraints_from_schema(const Schema& schema) {
  ConstraintSet cs;
  for (std::size_t i = 0; i < schema.size(); ++i)
    if (!schema.variables[i].actionable) cs.frozen.insert(i);
  return cs;
}

/// Whether moving variable i from cell `from` to cell `to` is allowed.
/// Adjacency is only meaningful over the interval order of numeric
/// variables; the missing cell has no neighbours.
inline bool admissible(const NBModel& model, const ConstraintSet& cs, std::size_t i, int from, int to) {
  if (to == from || cs.frozen.contains(i) || cs.forbidden.contains({i, to})) return false;
  if (cs.adjacency_only.contains(i) && model.preprocessor.is_numeric(i)) {
    const auto& bin = std::get<BinSpec>(model.preprocessor.spec(i));
    const int missing = bin.has_missing_cell ? bin.cells() - 1 : -1;
    if (from == missing || to == missing || std::abs(to - from) != 1) return false;
  }
  return true;
}

struct TrajectoryStep {
  std::size_t variable = 0;
  int from_cell = 0;
  int to_cell = 0;
  double delta = 0.0;
  double prob_after = 0.0;
  bool forced = false;

  bool operator==(const TrajectoryStep&) const = default;
};

enum class CfStatus { CounterfactualFound, SemiFactualOnly, NoChangePossible };

inline std::string_view to_string(CfStatus s) {
  switch (s) {
    case CfStatus::CounterfactualFound: return "counterfactual_found";
    case CfStatus::SemiFactualOnly: return "semi_factual_only";
    case CfStatus::NoChangePossible: return "no_change_possible";
  }
  return "unknown";
}

struct CfResult {
  CfStatus status = CfStatus::NoChangePossible;
  std::vector<TrajectoryStep> steps;
  EncodedInstance initial_instance;
  EncodedInstance final_instance;
  double initial_prob = 0.0;
  double final_prob = 0.0;
  double plausibility_initial = 0.0;
  double plausibility_final = 0.0;
  double threshold = 0.5;
};

namespace detail {

struct SearchState {
  const NBModel& model;
  const KbRow& row;
  const ConstraintSet& cs;
  CfResult result;
  EncodedInstance current;
  std::vector<bool> changed;
};

inline SearchState start_search(const NBModel& model, const KbRow& row, const EncodedInstance& x,
                                 const ConstraintSet& cs, double threshold) {
  require_same_model(row, model);
  model.check(x);
  if (row.factual == nullptr || *row.factual != x)
    throw Error(ErrorCode::SchemaMismatch, "knowledge-base row does not describe this instance");
  if (!(threshold > 0.0 && threshold < 1.0))
    throw Error(ErrorCode::InvalidArgument, "threshold must lie in (0,1)");

  std::set<std::size_t> seen;
  for (const auto& c : cs.forced) {
    if (c.variable >= model.variables() || c.cell < 0 || c.cell >= model.cells(c.variable))
      throw Error(ErrorCode::InfeasibleConstraints, "forced change outside the model");
    if (cs.frozen.contains(c.variable))
      throw Error(ErrorCode::InfeasibleConstraints,
                  "forced change on frozen variable '" + model.schema.variables[c.variable].name + "'");
    if (cs.forbidden.contains({c.variable, c.cell}))
      throw Error(ErrorCode::InfeasibleConstraints, "forced change to a forbidden cell");
    if (!seen.insert(c.variable).second)
      throw Error(ErrorCode::InfeasibleConstraints, "two forced changes on one variable");
  }
  if (cs.max_changes && static_cast<int>(cs.forced.size()) > *cs.max_changes)
    throw Error(ErrorCode::InfeasibleConstraints, "more forced changes than max_changes");

  SearchState st{model, row, cs, {}, x, std::vector<bool>(model.variables(), false)};
  st.result.threshold = threshold;
  st.result.initial_instance = x;
  st.result.initial_prob = predict_proba(model, x);
  st.result.plausibility_initial = plausibility(model, x);
  return st;
}

inline double kb_delta(const KbRow& row, std::size_t variable, int cell) {
  for (std::size_t c = 0; c < row.columns.size(); ++c)
    if (row.columns[c].variable == variable && row.columns[c].cell == cell) return row.values[c];
  return 0.0;  // variable carries no weight
}

inline void apply_step(SearchState& st, std::size_t variable, int cell, double delta, bool forced) {
  TrajectoryStep step{variable, st.current[variable], cell, delta, 0.0, forced};
  st.current[variable] = cell;
  st.changed[variable] = true;
  step.prob_after = predict_proba(st.model, st.current);
  st.result.steps.push_back(step);
}

inline void apply_forced(SearchState& st) {
  for (const auto& c : st.cs.forced) {
    st.changed[c.variable] = true;
    if (st.current[c.variable] == c.cell) continue;
    apply_step(st, c.variable, c.cell, kb_delta(st.row, c.variable, c.cell), true);
  }
}

/// Best admissible column on an unchanged variable. sign > 0 picks the
/// largest positive delta, sign < 0 the most negative one. Columns are
/// ordered by (variable, cell), so the first strict improvement wins ties.
inline std::optional<std::size_t> pick(const SearchState& st, int sign) {
  std::optional<std::size_t> best;
  double best_value = 0.0;
  for (std::size_t c = 0; c < st.row.columns.size(); ++c) {
    const auto& col = st.row.columns[c];
    if (st.changed[col.variable]) continue;
    const double v = sign * st.row.values[c];
    if (!(v > 0.0)) continue;
    if (!admissible(st.model, st.cs, col.variable, st.current[col.variable], col.cell)) continue;
    if (!best || v > best_value) {
      best = c;
      best_value = v;
    }
  }
  return best;
}

inline bool budget_left(const SearchState& st) {
  return !st.cs.max_changes || static_cast<int>(st.result.steps.size()) < *st.cs.max_changes;
}

inline CfResult finish(SearchState& st) {
  st.result.final_instance = st.current;
  st.result.final_prob = predict_proba(st.model, st.current);
  st.result.plausibility_final = plausibility(st.model, st.current);
  return std::move(st.result);
}

}  // namespace detail

/// Sparse counterfactual search over a knowledge-base row.
///
/// Forced changes are applied first. Then the admissible change with the
/// largest positive delta on a not-yet-changed variable is applied, one
/// variable at a time, until the positive-class posterior exceeds the
/// threshold or no admissible positive move remains. Because deltas are
/// additive this yields the fewest changes among unconstrained searches.
inline CfResult greedy_counterfactual(const NBModel& model, const KbRow& row, const EncodedInstance& x,
                                      const ConstraintSet& constraints = {}, double threshold = 0.5) {
  auto st = detail::start_search(model, row, x, constraints, threshold);
  detail::apply_forced(st);
  while (!(predict_proba(model, st.current) > threshold) && detail::budget_left(st)) {
    const auto c = detail::pick(st, +1);
    if (!c) break;
    const auto& col = row.columns[*c];
    detail::apply_step(st, col.variable, col.cell, row.values[*c], false);
  }
  auto result = detail::finish(st);
  if (result.final_prob > threshold) {
    result.status = CfStatus::CounterfactualFound;
  } else {
    result.status = result.steps.empty() ? CfStatus::NoChangePossible : CfStatus::SemiFactualOnly;
  }
  return result;
}

/// Preventive search: applies the most negative admissible deltas, at most
/// `steps` of them, moving the instance away from the frontier.
inline CfResult negative_semifactual(const NBModel& model, const KbRow& row, const EncodedInstance& x,
                                     const ConstraintSet& constraints, int steps, double threshold = 0.5) {
  if (steps < 1) throw Error(ErrorCode::InvalidArgument, "steps must be >= 1");
  auto st = detail::start_search(model, row, x, constraints, threshold);
  detail::apply_forced(st);
  for (int taken = 0; taken < steps && detail::budget_left(st); ++taken) {
    const auto c = detail::pick(st, -1);
    if (!c) break;
    const auto& col = row.columns[*c];
    detail::apply_step(st, col.variable, col.cell, row.values[*c], false);
  }
  auto result = detail::finish(st);
  result.status = result.steps.empty() ? CfStatus::NoChangePossible : CfStatus::SemiFactualOnly;
  return result;
}

/// The positive semi-factual of a greedy trajectory: its longest prefix
/// that has not yet crossed the threshold.
inline CfResult positive_semifactual(const NBModel& model, CfResult result) {
  if (result.status == CfStatus::CounterfactualFound && !result.steps.empty()) {
    const auto last = result.steps.back();
    result.steps.pop_back();
    result.final_instance[last.variable] = last.from_cell;
    result.final_prob = predict_proba(model, result.final_instance);
    result.plausibility_final = plausibility(model, result.final_instance);
  }
  if (result.final_prob > result.threshold) {
    result.status = CfStatus::CounterfactualFound;
  } else {
    result.status = result.steps.empty() ? CfStatus::NoChangePossible : CfStatus::SemiFactualOnly;
  }
  return result;
}

/// Fewest single-variable changes (best cell per variable, largest first)
/// needed to push the log-odds above logit(threshold). nullopt when even
/// all positive moves together fall short.
inline std::optional<int> frontier_distance(const KbRow& row, double base_logit, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error(ErrorCode::InvalidArgument, "threshold must lie in (0,1)");
  const double target = logit_of(threshold);
  if (base_logit > target) return 0;
  std::vector<double> best;
  for (std::size_t c = 0; c < row.columns.size(); ++c) {
    const bool new_var = c == 0 || row.columns[c].variable != row.columns[c - 1].variable;
    if (new_var) best.push_back(0.0);
    best.back() = std::max(best.back(), row.values[c]);
  }
  std::sort(best.begin(), best.end(), std::greater<>());
  double sum = base_logit;
  for (std::size_t k = 0; k < best.size() && best[k] > 0.0; ++k) {
    sum += best[k];
    if (sum > target) return static_cast<int>(k + 1);
  }
  return std::nullopt;
}

// ---- rendering ---------------------------------------------------------

/// Initial profile followed by one row per step; `changed` marks cells
/// that differ from the initial profile.
struct TrajectoryTable {
  std::vector<std::string> headers;  // variable names, then the probability column
  struct Row {
    std::vector<std::string> cells;
    std::vector<bool> changed;
    double prob = 0.0;
  };
  std::vector<Row> rows;
};

struct RenderOptions {
  std::vector<std::size_t> variables;  // empty: every schema variable
  bool complement = false;             // show the other class's probability
};

inline TrajectoryTable render_trajectory(const CfResult& result, const NBModel& model,
                                         const RenderOptions& opt = {}) {
  std::vector<std::size_t> vars = opt.variables;
  if (vars.empty())
    for (std::size_t i = 0; i < model.variables(); ++i) vars.push_back(i);

  TrajectoryTable t;
  for (auto i : vars) t.headers.push_back(model.schema.variables.at(i).name);
  const int shown_class = opt.complement ? model.negative_class() : model.positive_class;
  t.headers.push_back("P(" + model.schema.class_labels[shown_class] + ")");

  auto shown = [&](double p) { return opt.complement ? 1.0 - p : p; };
  EncodedInstance cur = result.initial_instance;
  auto emit = [&](double prob) {
    TrajectoryTable::Row row;
    for (auto i : vars) {
      row.cells.push_back(model.preprocessor.cell_label(i, cur[i]));
      row.changed.push_back(cur[i] != result.initial_instance[i]);
    }
    row.prob = shown(prob);
    t.rows.push_back(std::move(row));
  };
  emit(result.initial_prob);
  for (const auto& s : result.steps) {
    cur[s.variable] = s.to_cell;
    emit(s.prob_after);
  }
  return t;
}

inline std::string marked(const TrajectoryTable::Row& row, std::size_t c) {
  return row.changed[c] ? row.cells[c] + "*" : row.cells[c];
}

inline void write_trajectory_csv(const TrajectoryTable& t, std::ostream& out) {
  csv::write_record(out, t.headers);
  for (const auto& row : t.rows) {
    csv::Record rec;
    for (std::size_t c = 0; c < row.cells.size(); ++c) rec.push_back(marked(row, c));
    rec.push_back(format_double(row.prob));
    csv::write_record(out, rec);
  }
}

/// Markdown-style table; probabilities printed with 6 decimals.
inline void write_trajectory_text(const TrajectoryTable& t, std::ostream& out) {
  std::vector<std::vector<std::string>> grid{t.headers};
  for (const auto& row : t.rows) {
    std::vector<std::string> line;
    for (std::size_t c = 0; c < row.cells.size(); ++c) line.push_back(marked(row, c));
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", row.prob);
    line.emplace_back(buf);
    grid.push_back(std::move(line));
  }
  std::vector<std::size_t> width(t.headers.size(), 3);
  for (const auto& line : grid)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  auto print = [&](const std::vector<std::string>& line) {
    out << "|";
    for (std::size_t c = 0; c < line.size(); ++c) out << " " << line[c] << std::string(width[c] - line[c].size(), ' ') << " |";
    out << "\n";
  };
  print(grid[0]);
  out << "|";
  for (auto w : width) out << std::string(w + 2, '-') << "|";
  out << "\n";
  for (std::size_t r = 1; r < grid.size(); ++r) print(grid[r]);
}

// ---- JSON --------------------------------------------------------------

inline nlohmann::json to_json(const CfResult& r, const NBModel& model) {
  nlohmann::json j;
  j["status"] = to_string(r.status);
  j["threshold"] = r.threshold;
  j["initial_cells"] = r.initial_instance.cells;
  j["final_cells"] = r.final_instance.cells;
  j["initial_prob"] = r.initial_prob;
  j["final_prob"] = r.final_prob;
  j["plausibility_initial"] = r.plausibility_initial;
  j["plausibility_final"] = r.plausibility_final;
  auto steps = nlohmann::json::array();
  for (const auto& s : r.steps)
    steps.push_back({{"var", s.variable},
                     {"name", model.schema.variables[s.variable].name},
                     {"from_cell", s.from_cell},
                     {"to_cell", s.to_cell},
                     {"delta", s.delta},
                     {"prob_after", s.prob_after},
                     {"forced", s.forced}});
  j["steps"] = std::move(steps);
  return j;
}

/// Parses {"frozen": [...], "adjacency_only": [...] | true, "forced":
/// [{"var", "cell"}], "forbidden": [{"var", "cell"}], "max_changes": n}.
/// Variables may be given by index or by name.
inline ConstraintSet constraints_from_json(const nlohmann::json& j, const NBModel& model) {
  auto var_of = [&](const nlohmann::json& v) -> std::size_t {
    if (v.is_number_integer()) {
      const auto i = v.get<long long>();
      if (i < 0 || static_cast<std::size_t>(i) >= model.variables())
        throw Error(ErrorCode::InvalidArgument, "variable index " + std::to_string(i) + " out of range");
      return static_cast<std::size_t>(i);
    }
    if (v.is_string()) {
      if (auto i = model.schema.index_of(v.get<std::string>())) return *i;
      throw Error(ErrorCode::InvalidArgument, "unknown variable '" + v.get<std::string>() + "'");
    }
    throw Error(ErrorCode::InvalidArgument, "variable must be an index or a name");
  };
  auto change_of = [&](const nlohmann::json& c) {
    if (!c.is_object() || !c.contains("var") || !c.contains("cell") || !c["cell"].is_number_integer())
      throw Error(ErrorCode::InvalidArgument, "a change needs integer 'cell' and a 'var'");
    return Change{var_of(c["var"]), c["cell"].get<int>()};
  };
  ConstraintSet cs;
  if (j.is_null()) return cs;
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "constraints must be an object");
  if (j.contains("frozen"))
    for (const auto& v : j["frozen"]) cs.frozen.insert(var_of(v));
  if (j.contains("adjacency_only")) {
    const auto& a = j["adjacency_only"];
    if (a.is_boolean()) {
      if (a.get<bool>())
        for (std::size_t i = 0; i < model.variables(); ++i)
          if (model.preprocessor.is_numeric(i)) cs.adjacency_only.insert(i);
    } else {
      for (const auto& v : a) cs.adjacency_only.insert(var_of(v));
    }
  }
  if (j.contains("forced"))
    for (const auto& c : j["forced"]) cs.forced.push_back(change_of(c));
  if (j.contains("forbidden"))
    for (const auto& c : j["forbidden"]) {
      const auto ch = change_of(c);
      cs.forbidden.insert({ch.variable, ch.cell});
    }
  if (j.contains("max_changes") && !j["max_changes"].is_null()) {
    if (!j["max_changes"].is_number_integer() || j["max_changes"].get<int>() < 0)
      throw Error(ErrorCode::InvalidArgument, "max_changes must be a non-negative integer");
    cs.max_changes = j["max_changes"].get<int>();
  }
  return cs;
}

}  // namespace delta_recourse
