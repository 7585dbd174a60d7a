#pragma once

// Read-only HTTP API over a loaded model, knowledge base and (optionally)
// cluster profiles. Every handler is a pure function of the shared state
// and the request, so the same functions back the HTTP routes and tests.

#include <optional>
#include <string>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "delta.hpp"
#include "error.hpp"
#include "explain.hpp"
#include "nbmodel.hpp"

namespace delta_recourse::service {

using nlohmann::json;

struct ServiceState {
  NBModel model;
  DeltaTable kb;
  std::optional<json> clusters;
  std::string fingerprint;
};

/// Checks that the KB (and cluster document) belong to the model.
inline ServiceState make_state(NBModel model, DeltaTable kb, std::optional<json> clusters = std::nullopt) {
  ServiceState st{std::move(model), std::move(kb), std::move(clusters), {}};
  st.fingerprint = fingerprint(st.model);
  if (st.kb.model_fingerprint != st.fingerprint)
    throw Error(ErrorCode::FingerprintMismatch, "knowledge base was built from another model");
  if (st.clusters && st.clusters->value("model_fingerprint", st.fingerprint) != st.fingerprint)
    throw Error(ErrorCode::FingerprintMismatch, "cluster profiles were built from another model");
  return st;
}

struct Response {
  int status = 200;
  json body;
};

inline Response error_response(int status, std::string_view code, const std::string& message,
                               std::optional<std::string> field = std::nullopt) {
  json body{{"error", code}, {"message", message}};
  if (field) body["field"] = *field;
  return {status, std::move(body)};
}

namespace detail {

struct BadRequest {
  Response response;
};

inline json parse_body(const std::string& body) {
  try {
    auto j = json::parse(body);
    if (!j.is_object()) throw BadRequest{error_response(400, "InvalidArgument", "request body must be a JSON object")};
    return j;
  } catch (const json::parse_error& e) {
    throw BadRequest{error_response(400, "FormatError", std::string("invalid JSON: ") + e.what())};
  }
}

inline EncodedInstance parse_cells(const ServiceState& st, const json& j, const char* key = "cells") {
  if (!j.contains(key) || !j[key].is_array())
    throw BadRequest{error_response(400, "InvalidArgument", std::string("'") + key + "' must be an array", key)};
  const auto& arr = j[key];
  if (arr.size() != st.model.variables())
    throw BadRequest{error_response(400, "CellOutOfRange",
                                    "expected " + std::to_string(st.model.variables()) + " cells, got " +
                                        std::to_string(arr.size()),
                                    key)};
  EncodedInstance x;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string field = std::string(key) + "[" + std::to_string(i) + "]";
    if (!arr[i].is_number_integer())
      throw BadRequest{error_response(400, "InvalidArgument", field + " must be an integer", field)};
    const auto q = arr[i].get<long long>();
    if (q < 0 || q >= st.model.cells(i))
      throw BadRequest{error_response(400, "CellOutOfRange",
                                      field + ": cell " + std::to_string(q) + " not in [0," +
                                          std::to_string(st.model.cells(i)) + ") for '" +
                                          st.model.schema.variables[i].name + "'",
                                      field)};
    x.cells.push_back(static_cast<int>(q));
  }
  return x;
}

inline ChangeSet parse_changes(const ServiceState& st, const json& j) {
  ChangeSet changes;
  if (!j.contains("changes")) return changes;
  if (!j["changes"].is_array())
    throw BadRequest{error_response(400, "InvalidArgument", "'changes' must be an array", "changes")};
  for (std::size_t n = 0; n < j["changes"].size(); ++n) {
    const auto& c = j["changes"][n];
    const std::string field = "changes[" + std::to_string(n) + "]";
    if (!c.is_object() || !c.contains("var") || !c.contains("cell") || !c["cell"].is_number_integer())
      throw BadRequest{error_response(400, "InvalidArgument", field + " needs 'var' and integer 'cell'", field)};
    std::size_t var = 0;
    if (c["var"].is_number_integer() && c["var"].get<long long>() >= 0) {
      var = c["var"].get<std::size_t>();
    } else if (c["var"].is_string() && st.model.schema.index_of(c["var"].get<std::string>())) {
      var = *st.model.schema.index_of(c["var"].get<std::string>());
    } else {
      throw BadRequest{error_response(400, "InvalidArgument", field + ": unknown variable", field)};
    }
    changes.push_back({var, c["cell"].get<int>()});
  }
  try {
    validate_changes(st.model, changes);
  } catch (const Error& e) {
    throw BadRequest{error_response(400, to_string(e.code()), e.detail(), "changes")};
  }
  return changes;
}

inline double parse_threshold(const json& j) {
  if (!j.contains("threshold") || j["threshold"].is_null()) return 0.5;
  if (!j["threshold"].is_number())
    throw BadRequest{error_response(400, "InvalidArgument", "'threshold' must be a number", "threshold")};
  const double t = j["threshold"].get<double>();
  if (!(t > 0.0 && t < 1.0))
    throw BadRequest{error_response(400, "InvalidArgument", "'threshold' must lie in (0,1)", "threshold")};
  return t;
}

template <typename Fn>
Response guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const BadRequest& b) {
    return b.response;
  } catch (const Error& e) {
    const int status = e.code() == ErrorCode::InfeasibleConstraints ? 422
                       : e.code() == ErrorCode::UnknownRowId       ? 404
                                                                   : 400;
    return error_response(status, to_string(e.code()), e.detail());
  } catch (const std::exception& e) {
    return error_response(500, "Internal", e.what());
  }
}

}  // namespace detail

/// GET /schema
inline Response handle_schema(const ServiceState& st) {
  const auto& m = st.model;
  json vars = json::array();
  for (std::size_t i = 0; i < m.variables(); ++i) {
    const auto& v = m.schema.variables[i];
    json cells = json::array();
    for (int q = 0; q < m.cells(i); ++q) cells.push_back({{"cell", q}, {"label", m.preprocessor.cell_label(i, q)}});
    vars.push_back({{"index", i},
                    {"name", v.name},
                    {"kind", to_string(v.kind)},
                    {"actionable", v.actionable},
                    {"weight", m.weights[i]},
                    {"included", m.included(i)},
                    {"cells", std::move(cells)}});
  }
  return {200,
          {{"target", m.schema.target},
           {"class_labels", m.schema.class_labels},
           {"positive_label", m.positive_label()},
           {"model_fingerprint", st.fingerprint},
           {"kb_rows", st.kb.rows()},
           {"variables", std::move(vars)}}};
}

/// POST /predict {cells}
inline Response handle_predict(const ServiceState& st, const std::string& body) {
  return detail::guarded([&]() -> Response {
    const auto j = detail::parse_body(body);
    const auto x = detail::parse_cells(st, j);
    return {200,
            {{"prob", predict_proba(st.model, x)},
             {"logit", score_logit(st.model, x)},
             {"plausibility", plausibility(st.model, x)}}};
  });
}

/// POST /whatif {cells, changes}
inline Response handle_whatif(const ServiceState& st, const std::string& body) {
  return detail::guarded([&]() -> Response {
    const auto j = detail::parse_body(body);
    const auto x = detail::parse_cells(st, j);
    const auto changes = detail::parse_changes(st, j);
    json per_change = json::array();
    for (const auto& c : changes)
      per_change.push_back({{"var", c.variable}, {"cell", c.cell}, {"delta", delta_univariate(st.model, x, c.variable, c.cell)}});
    const auto after = apply_changes(x, changes);
    return {200,
            {{"delta", delta_set(st.model, x, changes)},
             {"prob_before", predict_proba(st.model, x)},
             {"prob_after", predict_proba(st.model, after)},
             {"logit_before", score_logit(st.model, x)},
             {"logit_after", score_logit(st.model, after)},
             {"plausibility_before", plausibility(st.model, x)},
             {"plausibility_after", plausibility(st.model, after)},
             {"cells_after", after.cells},
             {"per_change", std::move(per_change)}}};
  });
}

/// POST /counterfactual {row_id | cells, constraints, threshold, mode, steps}
/// mode "preventive" runs the negative semi-factual search instead.
inline Response handle_counterfactual(const ServiceState& st, const std::string& body) {
  return detail::guarded([&]() -> Response {
    const auto j = detail::parse_body(body);
    const double threshold = detail::parse_threshold(j);

    std::optional<DeltaTable> adhoc;
    KbRow row;
    if (j.contains("row_id") && !j["row_id"].is_null()) {
      const std::string id = j["row_id"].is_string() ? j["row_id"].get<std::string>() : j["row_id"].dump();
      const auto r = st.kb.find(id);
      if (!r) return error_response(404, "UnknownRowId", "no knowledge-base row '" + id + "'");
      row = st.kb.row(*r);
    } else {
      adhoc = kb_for_instance(st.model, detail::parse_cells(st, j));
      row = adhoc->row(0);
    }

    ConstraintSet cs;
    try {
      cs = constraints_from_json(j.value("constraints", json()), st.model);
    } catch (const Error& e) {
      return error_response(400, to_string(e.code()), e.detail(), "constraints");
    }
    if (j.value("respect_actionability", false)) {
      const auto base = constraints_from_schema(st.model.schema);
      cs.frozen.insert(base.frozen.begin(), base.frozen.end());
    }

    const std::string mode = j.value("mode", "counterfactual");
    CfResult result;
    if (mode == "counterfactual") {
      result = greedy_counterfactual(st.model, row, *row.factual, cs, threshold);
    } else if (mode == "preventive") {
      const int steps = j.value("steps", 1);
      if (steps < 1) return error_response(400, "InvalidArgument", "'steps' must be >= 1", "steps");
      result = negative_semifactual(st.model, row, *row.factual, cs, steps, threshold);
    } else {
      return error_response(400, "InvalidArgument", "mode must be 'counterfactual' or 'preventive'", "mode");
    }
    auto out = to_json(result, st.model);
    out["row_id"] = std::string(row.id);
    out["mode"] = mode;
    return {200, std::move(out)};
  });
}

/// GET /kb/row/{id}
inline Response handle_kb_row(const ServiceState& st, const std::string& id) {
  const auto r = st.kb.find(id);
  if (!r) return error_response(404, "UnknownRowId", "no knowledge-base row '" + id + "'");
  json cols = json::array();
  for (const auto& c : st.kb.columns)
    cols.push_back({{"var", c.variable},
                    {"cell", c.cell},
                    {"name", st.model.schema.variables[c.variable].name},
                    {"label", st.model.preprocessor.cell_label(c.variable, c.cell)}});
  const auto values = st.kb.row_values(*r);
  return {200,
          {{"id", id},
           {"positive_label", st.kb.positive_label},
           {"base_logit", st.kb.base_logit[*r]},
           {"prob", sigmoid(st.kb.base_logit[*r])},
           {"factual_cells", st.kb.factual_cells[*r].cells},
           {"columns", std::move(cols)},
           {"values", std::vector<double>(values.begin(), values.end())},
           {"probability_deltas_non_additive", probability_deltas(st.kb, *r)}}};
}

/// GET /kb/frontier?max_steps=k[&threshold=t]
inline Response handle_frontier(const ServiceState& st, const std::optional<std::string>& max_steps,
                                 const std::optional<std::string>& threshold_text) {
  int k = 1;
  if (max_steps) {
    auto v = parse_int(*max_steps);
    if (!v || *v < 0) return error_response(400, "InvalidArgument", "max_steps must be a non-negative integer", "max_steps");
    k = static_cast<int>(*v);
  }
  double threshold = 0.5;
  if (threshold_text) {
    auto v = parse_double(*threshold_text);
    if (!v || !(*v > 0.0 && *v < 1.0))
      return error_response(400, "InvalidArgument", "threshold must lie in (0,1)", "threshold");
    threshold = *v;
  }
  json ids = json::array(), distances = json::array();
  for (std::size_t r = 0; r < st.kb.rows(); ++r) {
    const auto d = frontier_distance(st.kb.row(r), st.kb.base_logit[r], threshold);
    if (d && *d <= k) {
      ids.push_back(st.kb.row_ids[r]);
      distances.push_back(*d);
    }
  }
  return {200, {{"max_steps", k}, {"threshold", threshold}, {"ids", std::move(ids)}, {"distances", std::move(distances)}}};
}

/// GET /clusters
inline Response handle_clusters(const ServiceState& st) {
  if (!st.clusters)
    return error_response(404, "NotFound",
                          "no cluster profiles are loaded; run the 'cluster' command and restart with --clusters");
  return {200, *st.clusters};
}

/// Binds every endpoint on `server`. Responses carry CORS headers for
/// `cors_origin` so a browser UI on another origin can call the API.
inline void register_routes(httplib::Server& server, const ServiceState& st, std::string cors_origin = "*") {
  auto send = [cors_origin](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_header("Access-Control-Allow-Origin", cors_origin);
    res.set_content(r.body.dump(), "application/json");
  };
  auto param = [](const httplib::Request& req, const char* name) -> std::optional<std::string> {
    if (!req.has_param(name)) return std::nullopt;
    return req.get_param_value(name);
  };
  server.Options(".*", [cors_origin](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", cors_origin);
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  server.Get("/schema", [&st, send](const httplib::Request&, httplib::Response& res) { send(res, handle_schema(st)); });
  server.Post("/predict", [&st, send](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_predict(st, req.body));
  });
  server.Post("/whatif", [&st, send](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_whatif(st, req.body));
  });
  server.Post("/counterfactual", [&st, send](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_counterfactual(st, req.body));
  });
  server.Get(R"(/kb/row/(.+))", [&st, send](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_kb_row(st, httplib::detail::decode_url(req.matches[1], false)));
  });
  server.Get("/kb/frontier", [&st, send, param](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_frontier(st, param(req, "max_steps"), param(req, "threshold")));
  });
  server.Get("/clusters", [&st, send](const httplib::Request&, httplib::Response& res) { send(res, handle_clusters(st)); });
  server.set_error_handler([cors_origin](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    res.set_header("Access-Control-Allow-Origin", cors_origin);
    res.set_content(json{{"error", "NotFound"}, {"message", "no such endpoint"}}.dump(), "application/json");
  });
}

}  // namespace delta_recourse::service
