#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "data.hpp"
#include "error.hpp"
#include "preprocess.hpp"

namespace delta_recourse {

/// Weighted naive Bayes over discretized cells, two classes.
///
/// Per variable i, cell q and class k the model stores
/// log P(X_i in I_q | C_k); the posterior is
///
///   P(C_k | x) = P(C_k) prod_i P(x_i | C_k)^W_i / sum_j P(C_j) prod_i P(x_i | C_j)^W_i
///
/// and every evaluator is oriented toward positive_class.
struct NBModel {
  Schema schema;
  Preprocessor preprocessor;
  std::array<double, 2> log_priors{};
  // cond_logp[i][q][k]
  std::vector<std::vector<std::array<double, 2>>> cond_logp;
  std::vector<double> weights;
  int positive_class = 0;
  double smoothing = 1.0;

  int negative_class() const { return 1 - positive_class; }
  std::size_t variables() const { return cond_logp.size(); }
  int cells(std::size_t i) const { return static_cast<int>(cond_logp[i].size()); }
  const std::string& positive_label() const { return schema.class_labels[positive_class]; }

  /// Per-variable log-odds contribution of cell q, before weighting.
  double log_ratio(std::size_t i, int q) const {
    const auto& c = cond_logp[i][static_cast<std::size_t>(q)];
    return c[positive_class] - c[negative_class()];
  }

  bool included(std::size_t i) const { return weights[i] > 0.0; }

  void check(const EncodedInstance& x) const {
    if (x.size() != cond_logp.size())
      throw Error(ErrorCode::CellOutOfRange, "instance has " + std::to_string(x.size()) +
                                                 " cells, model has " + std::to_string(cond_logp.size()) +
                                                 " variables");
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] < 0 || x[i] >= cells(i))
        throw Error(ErrorCode::CellOutOfRange, "variable " + std::to_string(i) + " cell " +
                                                   std::to_string(x[i]) + " not in [0," +
                                                   std::to_string(cells(i)) + ")");
  }

  bool operator==(const NBModel&) const = default;
};

/// Builds a model from explicit probabilities (cond[i][q][k] = P(I_q | C_k)).
/// Mostly useful for fixtures and fractional-weight emulation.
inline NBModel model_from_probabilities(Schema schema, Preprocessor pre, std::array<double, 2> priors,
                                        const std::vector<std::vector<std::array<double, 2>>>& cond,
                                        std::vector<double> weights, int positive_class = 0) {
  NBModel m;
  m.schema = std::move(schema);
  m.preprocessor = std::move(pre);
  m.log_priors = {std::log(priors[0]), std::log(priors[1])};
  m.cond_logp.resize(cond.size());
  for (std::size_t i = 0; i < cond.size(); ++i)
    for (const auto& p : cond[i]) m.cond_logp[i].push_back({std::log(p[0]), std::log(p[1])});
  if (weights.size() != cond.size())
    throw Error(ErrorCode::LengthMismatch, "one weight per variable is required");
  for (double w : weights)
    if (!(w >= 0.0 && w <= 1.0)) throw Error(ErrorCode::InvalidArgument, "weights must lie in [0,1]");
  m.weights = std::move(weights);
  m.positive_class = positive_class;
  return m;
}

/// Same model, oriented toward the other class.
inline NBModel with_positive_class(NBModel model, int positive_class) {
  if (positive_class != 0 && positive_class != 1)
    throw Error(ErrorCode::InvalidArgument, "positive class must be 0 or 1");
  model.positive_class = positive_class;
  return model;
}

inline NBModel with_positive_label(NBModel model, const std::string& label) {
  for (int k = 0; k < 2; ++k)
    if (model.schema.class_labels[k] == label) return with_positive_class(std::move(model), k);
  throw Error(ErrorCode::UnknownLabel, "'" + label + "' is not a class label");
}

/// Laplace-smoothed maximum likelihood fit with all weights set to 1.
inline NBModel fit(const Schema& schema, const Preprocessor& pre, std::span<const EncodedInstance> encoded,
                   std::span<const int> labels, double smoothing = 1.0) {
  if (!(smoothing > 0.0)) throw Error(ErrorCode::InvalidArgument, "smoothing must be > 0");
  if (encoded.size() != labels.size()) throw Error(ErrorCode::LengthMismatch, "encoded rows vs labels");
  if (encoded.empty()) throw Error(ErrorCode::EmptyDataset, "cannot fit on zero rows");
  pre.check_schema(schema);

  const std::size_t d = pre.size();
  std::array<double, 2> class_count{0, 0};
  std::vector<std::vector<std::array<double, 2>>> counts(d);
  for (std::size_t i = 0; i < d; ++i) counts[i].assign(static_cast<std::size_t>(pre.cells(i)), {0, 0});
  for (std::size_t r = 0; r < encoded.size(); ++r) {
    const int k = labels[r];
    if (k != 0 && k != 1) throw Error(ErrorCode::UnknownLabel, "row " + std::to_string(r));
    class_count[k] += 1;
    if (encoded[r].size() != d) throw Error(ErrorCode::CellOutOfRange, "row " + std::to_string(r));
    for (std::size_t i = 0; i < d; ++i) {
      const int q = encoded[r][i];
      if (q < 0 || q >= pre.cells(i))
        throw Error(ErrorCode::CellOutOfRange, "row " + std::to_string(r) + " variable " + std::to_string(i));
      counts[i][static_cast<std::size_t>(q)][k] += 1;
    }
  }
  if (class_count[0] == 0 || class_count[1] == 0)
    throw Error(ErrorCode::SingleClass, "training data contains a single class");

  NBModel m;
  m.schema = schema;
  m.preprocessor = pre;
  m.smoothing = smoothing;
  const double n = static_cast<double>(encoded.size());
  for (int k = 0; k < 2; ++k) m.log_priors[k] = std::log((class_count[k] + smoothing) / (n + 2.0 * smoothing));
  m.cond_logp.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double cells = static_cast<double>(pre.cells(i));
    for (const auto& c : counts[i]) {
      std::array<double, 2> lp{};
      for (int k = 0; k < 2; ++k) lp[k] = std::log((c[k] + smoothing) / (class_count[k] + smoothing * cells));
      m.cond_logp[i].push_back(lp);
    }
  }
  m.weights.assign(d, 1.0);
  return m;
}

/// Log-odds of the positive class.
inline double score_logit(const NBModel& m, const EncodedInstance& x) {
  m.check(x);
  double s = m.log_priors[m.positive_class] - m.log_priors[m.negative_class()];
  for (std::size_t i = 0; i < x.size(); ++i)
    if (m.weights[i] != 0.0) s += m.weights[i] * m.log_ratio(i, x[i]);
  return s;
}

inline double sigmoid(double logit) { return 1.0 / (1.0 + std::exp(-logit)); }

inline double logit_of(double p) { return std::log(p) - std::log1p(-p); }

/// Posterior probability of the positive class.
inline double predict_proba(const NBModel& m, const EncodedInstance& x) { return sigmoid(score_logit(m, x)); }

/// Unnormalized joint of class k: log P(C_k) + sum_i W_i log P(x_i | C_k).
inline double log_joint(const NBModel& m, const EncodedInstance& x, int k) {
  m.check(x);
  double s = m.log_priors[k];
  for (std::size_t i = 0; i < x.size(); ++i)
    if (m.weights[i] != 0.0) s += m.weights[i] * m.cond_logp[i][static_cast<std::size_t>(x[i])][k];
  return s;
}

/// P(X) = sum_j P(C_j) prod_i P(x_i | C_j)^W_i, the denominator of the
/// posterior. Low values flag instances outside the training density.
inline double plausibility(const NBModel& m, const EncodedInstance& x) {
  const double a = log_joint(m, x, 0), b = log_joint(m, x, 1);
  const double hi = std::max(a, b);
  return std::exp(hi) * (std::exp(a - hi) + std::exp(b - hi));
}

/// Rank-based (Mann-Whitney) AUC with tied scores sharing their mean rank.
/// Returns 0.5 when one of the classes is absent.
inline double auc(std::span<const double> scores, const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0, n_pos = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mean_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t)
      if (positive[order[t]]) {
        rank_sum += mean_rank;
        n_pos += 1;
      }
    i = j;
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) return 0.5;
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

inline double model_auc(const NBModel& m, std::span<const EncodedInstance> xs, std::span<const int> labels) {
  std::vector<double> scores;
  std::vector<bool> positive;
  scores.reserve(xs.size());
  for (std::size_t r = 0; r < xs.size(); ++r) {
    scores.push_back(score_logit(m, xs[r]));
    positive.push_back(labels[r] == m.positive_class);
  }
  return auc(scores, positive);
}

/// Greedy forward selection of binary weights on validation AUC.
///
/// Starts from all-zero weights and repeatedly switches on the variable
/// whose activation raises validation AUC the most (lowest index on ties),
/// stopping once the best gain is not above min_gain.
inline NBModel select_weights(NBModel model, std::span<const EncodedInstance> validation,
                              std::span<const int> labels, double min_gain = 1e-4) {
  if (validation.empty()) throw Error(ErrorCode::EmptyDataset, "validation set is empty");
  if (validation.size() != labels.size()) throw Error(ErrorCode::LengthMismatch, "validation rows vs labels");
  for (const auto& x : validation) model.check(x);

  const std::size_t d = model.variables(), n = validation.size();
  std::vector<bool> positive(n);
  for (std::size_t r = 0; r < n; ++r) positive[r] = labels[r] == model.positive_class;

  std::vector<double> base(n, 0.0), trial(n);
  std::vector<bool> active(d, false);
  double current = auc(base, positive);
  for (;;) {
    double best_auc = current;
    std::size_t best_var = d;
    for (std::size_t i = 0; i < d; ++i) {
      if (active[i]) continue;
      for (std::size_t r = 0; r < n; ++r) trial[r] = base[r] + model.log_ratio(i, validation[r][i]);
      const double a = auc(trial, positive);
      if (a > best_auc) {
        best_auc = a;
        best_var = i;
      }
    }
    if (best_var == d || best_auc - current <= min_gain) break;
    active[best_var] = true;
    for (std::size_t r = 0; r < n; ++r) base[r] += model.log_ratio(best_var, validation[r][best_var]);
    current = best_auc;
  }
  for (std::size_t i = 0; i < d; ++i) model.weights[i] = active[i] ? 1.0 : 0.0;
  return model;
}

// ---- persistence -------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json model_to_json(const NBModel& m) {
  nlohmann::json j;
  j["format"] = "delta-recourse-model";
  j["version"] = kModelFormatVersion;
  j["schema"] = m.schema;
  j["preprocessor"] = m.preprocessor;
  j["positive_class"] = m.positive_class;
  j["smoothing"] = m.smoothing;
  j["log_priors"] = m.log_priors;
  j["cond_logp"] = m.cond_logp;
  j["weights"] = m.weights;
  return j;
}

inline NBModel model_from_json(const nlohmann::json& j) {
  NBModel m;
  try {
    if (j.at("format").get<std::string>() != "delta-recourse-model")
      throw Error(ErrorCode::FormatError, "not a model document");
    if (j.at("version").get<int>() != kModelFormatVersion)
      throw Error(ErrorCode::FormatError, "unsupported model version");
    m.schema = schema_from_json(j.at("schema"));
    m.preprocessor = preprocessor_from_json(j.at("preprocessor"));
    m.positive_class = j.at("positive_class").get<int>();
    m.smoothing = j.at("smoothing").get<double>();
    m.log_priors = j.at("log_priors").get<std::array<double, 2>>();
    m.cond_logp = j.at("cond_logp").get<std::vector<std::vector<std::array<double, 2>>>>();
    m.weights = j.at("weights").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("model: ") + e.what());
  }
  m.preprocessor.check_schema(m.schema);
  if (m.positive_class != 0 && m.positive_class != 1)
    throw Error(ErrorCode::FormatError, "positive_class must be 0 or 1");
  if (m.cond_logp.size() != m.schema.size() || m.weights.size() != m.schema.size())
    throw Error(ErrorCode::FormatError, "model arrays do not match the schema");
  for (std::size_t i = 0; i < m.cond_logp.size(); ++i)
    if (m.cells(i) != m.preprocessor.cells(i))
      throw Error(ErrorCode::FormatError, "cell count mismatch for '" + m.schema.variables[i].name + "'");
  return m;
}

inline std::string model_to_string(const NBModel& m) { return model_to_json(m).dump(2) + "\n"; }

inline void save_model(const NBModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
  out << model_to_string(m);
  if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path + "'");
}

inline NBModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open model '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, "model '" + path + "': " + e.what());
  }
  return model_from_json(j);
}

/// FNV-1a 64 of the compact model document, as 16 hex digits.
inline std::string fingerprint(const NBModel& m) {
  const std::string text = model_to_json(m).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace delta_recourse
