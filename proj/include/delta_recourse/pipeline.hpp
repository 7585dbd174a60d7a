#pragma once

// Batch commands behind the CLI. Each command reads and writes only
// persisted artifacts, so train -> kb -> explain/cluster compose across
// processes.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "cluster.hpp"
#include "data.hpp"
#include "delta.hpp"
#include "error.hpp"
#include "explain.hpp"
#include "nbmodel.hpp"
#include "preprocess.hpp"

namespace delta_recourse {

enum class WeightMode { Select, Uniform, Fixed };

struct RunConfig {
  std::string data;
  std::string schema;
  std::string out_dir = ".";
  std::string model;        // default <out_dir>/model.json
  std::string kb;           // default <out_dir>/kb.csv
  std::string split_file;   // default <out_dir>/split.json
  std::string clusters;     // default <out_dir>/clusters.json
  std::string constraints;  // optional constraint JSON file

  double train_fraction = 0.8;
  std::uint64_t seed = 42;
  bool stratify = false;
  double validation_fraction = 0.25;

  double smoothing = 1.0;
  int max_bins = 8;
  int min_support = 16;
  double merge_tolerance = 0.02;
  WeightMode weight_mode = WeightMode::Select;
  std::vector<double> fixed_weights;
  std::string positive;  // overrides the schema's positive label

  double threshold = 0.5;
  std::string slice = "test";  // test | train | all

  int k_min = 2;
  int k_max = 12;
  std::uint64_t cluster_seed = 7;
  int restarts = 8;
  bool cluster_all_columns = false;

  std::string id;
  std::string record;  // JSON object of raw values by variable name
  bool preventive = false;
  int steps = 1;
  bool semifactual = false;
  bool ignore_actionability = false;
  std::string format = "text";  // text | csv

  std::string host = "127.0.0.1";
  int port = 8080;
  std::string cors_origin = "*";

  std::string model_path() const { return model.empty() ? out_dir + "/model.json" : model; }
  std::string kb_path() const { return kb.empty() ? out_dir + "/kb.csv" : kb; }
  std::string split_path() const { return split_file.empty() ? out_dir + "/split.json" : split_file; }
  std::string clusters_path() const { return clusters.empty() ? out_dir + "/clusters.json" : clusters; }

  /// Throws InvalidArgument when a parameter is outside its documented range.
  void validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); };
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw Error(ErrorCode::InvalidFraction, "train_fraction");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
      throw Error(ErrorCode::InvalidFraction, "validation_fraction");
    if (!(smoothing > 0.0)) fail("smoothing must be > 0");
    if (max_bins < 1) fail("max_bins must be >= 1");
    if (min_support < 1) fail("min_support must be >= 1");
    if (!(merge_tolerance >= 0.0)) fail("merge_tolerance must be >= 0");
    if (!(threshold > 0.0 && threshold < 1.0)) fail("threshold must lie in (0,1)");
    if (slice != "test" && slice != "train" && slice != "all") fail("slice must be test, train or all");
    if (k_min < 1 || k_max < k_min) fail("need 1 <= k_min <= k_max");
    if (restarts < 1) fail("restarts must be >= 1");
    if (steps < 1) fail("steps must be >= 1");
    if (format != "text" && format != "csv") fail("format must be text or csv");
    if (port < 0 || port > 65535) fail("port out of range");
  }
};

inline std::string_view to_string(WeightMode m) {
  switch (m) {
    case WeightMode::Select: return "select";
    case WeightMode::Uniform: return "uniform";
    case WeightMode::Fixed: return "fixed";
  }
  return "select";
}

/// "select", "uniform", or "fixed:0.67,0.78,..." (one weight per variable).
inline void set_weight_mode(RunConfig& cfg, std::string_view text) {
  if (text == "select") {
    cfg.weight_mode = WeightMode::Select;
  } else if (text == "uniform") {
    cfg.weight_mode = WeightMode::Uniform;
  } else if (text.starts_with("fixed:")) {
    cfg.weight_mode = WeightMode::Fixed;
    cfg.fixed_weights.clear();
    std::string_view rest = text.substr(6);
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      auto w = parse_double(rest.substr(0, comma));
      if (!w) throw Error(ErrorCode::InvalidArgument, "bad weight in '" + std::string(text) + "'");
      cfg.fixed_weights.push_back(*w);
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    }
  } else {
    throw Error(ErrorCode::InvalidArgument, "weight mode must be select, uniform or fixed:<list>");
  }
}

/// Applies the keys of a JSON config document; unknown keys are rejected.
inline void apply_config_json(RunConfig& cfg, const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::FormatError, "config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "data") cfg.data = v.get<std::string>();
      else if (key == "schema") cfg.schema = v.get<std::string>();
      else if (key == "out_dir") cfg.out_dir = v.get<std::string>();
      else if (key == "model") cfg.model = v.get<std::string>();
      else if (key == "kb") cfg.kb = v.get<std::string>();
      else if (key == "split_file") cfg.split_file = v.get<std::string>();
      else if (key == "clusters") cfg.clusters = v.get<std::string>();
      else if (key == "constraints") cfg.constraints = v.get<std::string>();
      else if (key == "train_fraction") cfg.train_fraction = v.get<double>();
      else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
      else if (key == "stratify") cfg.stratify = v.get<bool>();
      else if (key == "validation_fraction") cfg.validation_fraction = v.get<double>();
      else if (key == "smoothing") cfg.smoothing = v.get<double>();
      else if (key == "max_bins") cfg.max_bins = v.get<int>();
      else if (key == "min_support") cfg.min_support = v.get<int>();
      else if (key == "merge_tolerance") cfg.merge_tolerance = v.get<double>();
      else if (key == "weights") set_weight_mode(cfg, v.get<std::string>());
      else if (key == "positive") cfg.positive = v.get<std::string>();
      else if (key == "threshold") cfg.threshold = v.get<double>();
      else if (key == "slice") cfg.slice = v.get<std::string>();
      else if (key == "k_min") cfg.k_min = v.get<int>();
      else if (key == "k_max") cfg.k_max = v.get<int>();
      else if (key == "cluster_seed") cfg.cluster_seed = v.get<std::uint64_t>();
      else if (key == "restarts") cfg.restarts = v.get<int>();
      else if (key == "cluster_all_columns") cfg.cluster_all_columns = v.get<bool>();
      else if (key == "id") cfg.id = v.get<std::string>();
      else if (key == "record") cfg.record = v.is_string() ? v.get<std::string>() : v.dump();
      else if (key == "preventive") cfg.preventive = v.get<bool>();
      else if (key == "steps") cfg.steps = v.get<int>();
      else if (key == "semifactual") cfg.semifactual = v.get<bool>();
      else if (key == "ignore_actionability") cfg.ignore_actionability = v.get<bool>();
      else if (key == "format") cfg.format = v.get<std::string>();
      else if (key == "host") cfg.host = v.get<std::string>();
      else if (key == "port") cfg.port = v.get<int>();
      else if (key == "cors_origin") cfg.cors_origin = v.get<std::string>();
      else throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("config: ") + e.what());
  }
}

/// Runs fn and maps failures to exit codes: 2 input error, 3 consistency
/// error between artifacts, 4 anything unexpected.
inline int run_guarded(const std::function<void()>& fn, std::ostream& err = std::cerr) {
  try {
    fn();
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return is_consistency_error(e.code()) ? 3 : 2;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 4;
  }
}

namespace detail {

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, "'" + path + "': " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
  out << text;
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create '" + dir + "': " + ec.message());
}

inline void ensure_parent(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
}

inline Schema schema_for_run(const RunConfig& cfg) {
  Schema schema = load_schema(cfg.schema);
  if (!cfg.positive.empty() && cfg.positive != schema.class_labels[0]) {
    if (cfg.positive == schema.class_labels[1]) {
      std::swap(schema.class_labels[0], schema.class_labels[1]);
    } else {
      schema.class_labels[1] = schema.class_labels[0];
      schema.class_labels[0] = cfg.positive;
    }
  }
  return schema;
}

}  // namespace detail

struct TrainReport {
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double test_auc = 0.0;
  double test_accuracy = 0.0;
  nlohmann::json document;
};

/// Fits preprocessing and the weighted model on the training split and
/// writes model.json, split.json and train_report.json.
inline TrainReport cmd_train(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const Schema schema = detail::schema_for_run(cfg);
  Dataset ds = load_csv(cfg.data, schema);
  if (ds.size() == 0) throw Error(ErrorCode::EmptyDataset, "'" + cfg.data + "' has no rows");
  {
    std::set<std::string> ids(ds.ids.begin(), ds.ids.end());
    if (ids.size() != ds.ids.size()) throw Error(ErrorCode::DuplicateId, "row identifiers in '" + cfg.data + "'");
  }

  const auto parts = split_indices(ds, cfg.train_fraction, cfg.seed, cfg.stratify);
  const Dataset train = subset(ds, parts.train);
  const Dataset test = subset(ds, parts.test);

  const Preprocessor pre = fit_preprocessor(train, {cfg.max_bins, cfg.min_support, cfg.merge_tolerance});
  const auto train_x = encode(train, pre);
  NBModel model = fit(train.schema, pre, train_x, train.labels, cfg.smoothing);

  switch (cfg.weight_mode) {
    case WeightMode::Uniform:
      break;
    case WeightMode::Fixed:
      if (cfg.fixed_weights.size() != model.variables())
        throw Error(ErrorCode::InvalidArgument, "fixed weights: expected " + std::to_string(model.variables()) +
                                                    " values, got " + std::to_string(cfg.fixed_weights.size()));
      for (double w : cfg.fixed_weights)
        if (!(w >= 0.0 && w <= 1.0)) throw Error(ErrorCode::InvalidArgument, "fixed weights must lie in [0,1]");
      model.weights = cfg.fixed_weights;
      break;
    case WeightMode::Select: {
      // Counts from an inner training part, weights chosen on the held-out
      // validation part, then counts refit on the whole training split.
      const auto inner = split_indices(train, 1.0 - cfg.validation_fraction, derive_seed(cfg.seed, 1), cfg.stratify);
      const Dataset fit_part = subset(train, inner.train);
      const Dataset val_part = subset(train, inner.test);
      const auto fit_x = encode(fit_part, pre);
      const auto val_x = encode(val_part, pre);
      NBModel inner_model = fit(train.schema, pre, fit_x, fit_part.labels, cfg.smoothing);
      inner_model = select_weights(std::move(inner_model), val_x, val_part.labels);
      model.weights = inner_model.weights;
      break;
    }
  }

  const auto test_x = encode(test, pre);
  TrainReport report;
  report.n_train = train.size();
  report.n_test = test.size();
  report.test_auc = model_auc(model, test_x, test.labels);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < test_x.size(); ++r) {
    const bool predicted = predict_proba(model, test_x[r]) > cfg.threshold;
    correct += predicted == (test.labels[r] == model.positive_class);
  }
  report.test_accuracy = test_x.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(test_x.size());

  detail::ensure_dir(cfg.out_dir);
  detail::ensure_parent(cfg.model_path());
  save_model(model, cfg.model_path());

  nlohmann::json split_doc{{"data_rows", ds.size()},
                           {"train_fraction", cfg.train_fraction},
                           {"seed", cfg.seed},
                           {"stratify", cfg.stratify},
                           {"train_ids", subset(ds, parts.train).ids},
                           {"test_ids", subset(ds, parts.test).ids}};
  detail::ensure_parent(cfg.split_path());
  detail::write_text_file(cfg.split_path(), split_doc.dump(2) + "\n");

  nlohmann::json retained = nlohmann::json::array();
  int total_cells = 0, included = 0;
  for (std::size_t i = 0; i < model.variables(); ++i) {
    if (!model.included(i)) continue;
    ++included;
    total_cells += model.cells(i);
    std::vector<std::string> labels;
    for (int q = 0; q < model.cells(i); ++q) labels.push_back(pre.cell_label(i, q));
    retained.push_back({{"index", i},
                        {"name", model.schema.variables[i].name},
                        {"weight", model.weights[i]},
                        {"actionable", model.schema.variables[i].actionable},
                        {"cells", labels}});
  }
  report.document = {{"model_fingerprint", fingerprint(model)},
                     {"positive_label", model.positive_label()},
                     {"weight_mode", to_string(cfg.weight_mode)},
                     {"n_rows", ds.size()},
                     {"n_train", report.n_train},
                     {"n_test", report.n_test},
                     {"test_auc", report.test_auc},
                     {"test_accuracy", report.test_accuracy},
                     {"threshold", cfg.threshold},
                     {"retained_variables", retained},
                     {"kb_total_cells", total_cells},
                     {"kb_candidates_per_row", total_cells - included}};
  detail::write_text_file(cfg.out_dir + "/train_report.json", report.document.dump(2) + "\n");

  out << "rows: " << ds.size() << " (train " << report.n_train << ", test " << report.n_test << ")\n";
  out << "test AUC: " << format_double(report.test_auc) << "  accuracy: " << format_double(report.test_accuracy) << "\n";
  out << "retained variables (" << included << ", " << total_cells << " cells, " << total_cells - included
      << " deltas per row):\n";
  for (const auto& r : retained)
    out << "  " << r["index"].get<std::size_t>() + 1 << " - " << r["name"].get<std::string>()
        << " (W=" << format_double(r["weight"].get<double>()) << "): " << r["cells"].size() << " cells\n";
  out << "model written to " << cfg.model_path() << "\n";
  return report;
}

/// Builds the knowledge base over the configured slice of the data.
inline DeltaTable cmd_kb(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const NBModel model = load_model(cfg.model_path());
  Dataset ds = load_csv(cfg.data, model.schema);

  std::vector<std::size_t> rows;
  if (cfg.slice == "all") {
    for (std::size_t r = 0; r < ds.size(); ++r) rows.push_back(r);
  } else {
    const auto split_doc = detail::read_json_file(cfg.split_path());
    if (split_doc.value("data_rows", std::size_t{0}) != ds.size())
      throw Error(ErrorCode::SchemaMismatch, "split file was written for a dataset of " +
                                                 split_doc.value("data_rows", nlohmann::json()).dump() + " rows");
    std::unordered_map<std::string, std::size_t> position;
    for (std::size_t r = 0; r < ds.size(); ++r) position.emplace(ds.ids[r], r);
    for (const auto& id : split_doc.at(cfg.slice + "_ids")) {
      auto it = position.find(id.get<std::string>());
      if (it == position.end()) throw Error(ErrorCode::SchemaMismatch, "split id '" + id.get<std::string>() + "' not in data");
      rows.push_back(it->second);
    }
  }
  const Dataset part = subset(ds, rows);
  const auto xs = encode(part, model.preprocessor);
  DeltaTable kb = build_kb(model, xs, part.ids);
  detail::ensure_parent(cfg.kb_path());
  save_kb(kb, cfg.kb_path());
  out << "knowledge base: " << kb.rows() << " rows x " << kb.cols() << " columns -> " << cfg.kb_path() << "\n";
  return kb;
}

namespace detail {

inline EncodedInstance encode_record(const NBModel& model, const std::string& record_text) {
  nlohmann::json rec;
  try {
    rec = nlohmann::json::parse(record_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("record: ") + e.what());
  }
  if (!rec.is_object()) throw Error(ErrorCode::FormatError, "record must be a JSON object");
  std::vector<RawValue> values;
  for (const auto& v : model.schema.variables) {
    if (!rec.contains(v.name) || rec[v.name].is_null()) {
      values.emplace_back(std::monostate{});
    } else if (rec[v.name].is_number()) {
      if (v.kind == VariableKind::Numeric) {
        values.emplace_back(rec[v.name].get<double>());
      } else {
        values.emplace_back(rec[v.name].dump());
      }
    } else if (rec[v.name].is_string()) {
      values.emplace_back(rec[v.name].get<std::string>());
    } else {
      throw Error(ErrorCode::ParseError, "record field '" + v.name + "'");
    }
  }
  for (const auto& [key, _] : rec.items())
    if (!model.schema.index_of(key)) throw Error(ErrorCode::MissingColumn, "record field '" + key + "' is not a variable");
  return model.preprocessor.encode_row(values);
}

}  // namespace detail

/// Explains one individual: a KB row by id, or a raw record.
inline CfResult cmd_explain(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const NBModel model = load_model(cfg.model_path());
  const std::string fp = fingerprint(model);

  std::optional<DeltaTable> kb;
  KbRow row;
  if (!cfg.id.empty()) {
    kb = load_kb(cfg.kb_path(), fp);
    const auto r = kb->find(cfg.id);
    if (!r) throw Error(ErrorCode::UnknownRowId, "'" + cfg.id + "'");
    row = kb->row(*r);
  } else if (!cfg.record.empty()) {
    kb = kb_for_instance(model, detail::encode_record(model, cfg.record), "record");
    row = kb->row(0);
  } else {
    throw Error(ErrorCode::InvalidArgument, "explain needs --id or --record");
  }

  ConstraintSet cs;
  if (!cfg.constraints.empty()) cs = constraints_from_json(detail::read_json_file(cfg.constraints), model);
  if (!cfg.ignore_actionability) {
    const auto base = constraints_from_schema(model.schema);
    cs.frozen.insert(base.frozen.begin(), base.frozen.end());
  }

  CfResult result = cfg.preventive ? negative_semifactual(model, row, *row.factual, cs, cfg.steps, cfg.threshold)
                                   : greedy_counterfactual(model, row, *row.factual, cs, cfg.threshold);
  if (cfg.semifactual && !cfg.preventive) result = positive_semifactual(model, std::move(result));

  // Variables the model ignores never move, so they are left out.
  RenderOptions view;
  for (std::size_t i = 0; i < model.variables(); ++i)
    if (model.included(i)) view.variables.push_back(i);
  const auto table = render_trajectory(result, model, view);
  if (cfg.format == "csv") {
    write_trajectory_csv(table, out);
  } else {
    out << "id: " << row.id << "\n";
    out << "mode: " << (cfg.preventive ? "preventive" : cfg.semifactual ? "semifactual" : "counterfactual") << "\n";
    out << "status: " << to_string(result.status) << "\n";
    out << "plausibility: " << format_double(result.plausibility_initial) << " -> "
        << format_double(result.plausibility_final) << "\n";
    write_trajectory_text(table, out);
  }
  return result;
}

struct ClusterRun {
  ElbowResult elbow;
  std::vector<ClusterProfile> profiles;
  nlohmann::json document;
};

/// Elbow sweep over KB rows, then per-cluster profiles of the chosen k.
inline ClusterRun cmd_cluster(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const NBModel model = load_model(cfg.model_path());
  const DeltaTable kb = load_kb(cfg.kb_path(), fingerprint(model));

  std::vector<std::size_t> cols;
  if (!cfg.cluster_all_columns) {
    cols = actionable_columns(kb, model.schema);
    if (cols.empty()) throw Error(ErrorCode::InvalidArgument, "no actionable KB columns; pass --all-columns");
  }
  const Matrix x = kb_matrix(kb, cols);

  ClusterRun run;
  run.elbow = elbow_select(x, cfg.k_min, cfg.k_max, cfg.cluster_seed, cfg.restarts);
  std::vector<bool> predicted(kb.rows());
  const double cut = logit_of(cfg.threshold);
  for (std::size_t r = 0; r < kb.rows(); ++r) predicted[r] = kb.base_logit[r] > cut;
  run.profiles = profiles(run.elbow.chosen(), kb, predicted);

  std::vector<std::string> cell_labels;
  for (const auto& c : kb.columns) cell_labels.push_back(model.preprocessor.cell_label(c.variable, c.cell));
  run.document = profiles_to_json(run.profiles, kb, &run.elbow, cell_labels);
  std::vector<std::string> clustered;
  for (auto c : cols) clustered.push_back(kb.column_name(c));
  run.document["clustered_columns"] = clustered;

  detail::ensure_dir(cfg.out_dir);
  detail::ensure_parent(cfg.clusters_path());
  detail::write_text_file(cfg.clusters_path(), run.document.dump(2) + "\n");
  {
    std::ofstream csv_out(cfg.out_dir + "/profiles.csv", std::ios::binary);
    if (!csv_out) throw Error(ErrorCode::IoError, "cannot write profiles.csv");
    write_profiles_csv(run.profiles, kb, csv_out);
    std::ofstream elbow_out(cfg.out_dir + "/elbow.csv", std::ios::binary);
    if (!elbow_out) throw Error(ErrorCode::IoError, "cannot write elbow.csv");
    elbow_out << "k,inertia\n";
    for (std::size_t t = 0; t < run.elbow.ks.size(); ++t)
      elbow_out << run.elbow.ks[t] << "," << format_double(run.elbow.inertia[t]) << "\n";
  }

  out << "chosen k: " << run.elbow.chosen_k << (run.elbow.low_confidence ? " (low confidence)" : "") << "\n";
  out << "inertia:";
  for (std::size_t t = 0; t < run.elbow.ks.size(); ++t)
    out << " k=" << run.elbow.ks[t] << ":" << format_double(run.elbow.inertia[t]);
  out << "\n";
  for (const auto& p : run.profiles) {
    char line[160];
    std::snprintf(line, sizeof(line), "cluster %d: %.1f%% of rows, %.1f%% predicted ", p.cluster + 1,
                  p.size_fraction * 100.0, p.predicted_positive_fraction * 100.0);
    out << line << kb.positive_label << "\n";
  }
  return run;
}

}  // namespace delta_recourse
