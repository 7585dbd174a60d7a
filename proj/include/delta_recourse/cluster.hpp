#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "delta.hpp"
#include "error.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "text.hpp"

namespace delta_recourse {

/// Dense row-major matrix of points.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t r) const { return std::span<const double>(data).subspan(r * cols, cols); }
  std::span<double> row(std::size_t r) { return std::span<double>(data).subspan(r * cols, cols); }
};

/// Points for clustering: KB rows restricted to the given column indices
/// (all columns when empty). Deltas share the log-odds unit, so no scaling.
inline Matrix kb_matrix(const DeltaTable& kb, std::span<const std::size_t> columns = {}) {
  std::vector<std::size_t> cols(columns.begin(), columns.end());
  if (cols.empty())
    for (std::size_t c = 0; c < kb.cols(); ++c) cols.push_back(c);
  Matrix m{kb.rows(), cols.size(), {}};
  m.data.reserve(m.rows * m.cols);
  for (std::size_t r = 0; r < kb.rows(); ++r) {
    const auto values = kb.row_values(r);
    for (auto c : cols) m.data.push_back(values[c]);
  }
  return m;
}

/// KB column indices whose variable is actionable.
inline std::vector<std::size_t> actionable_columns(const DeltaTable& kb, const Schema& schema) {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < kb.cols(); ++c)
    if (schema.variables.at(kb.columns[c].variable).actionable) out.push_back(c);
  return out;
}

struct KMeansResult {
  int k = 0;
  Matrix centroids;
  std::vector<int> assignments;
  double inertia = 0.0;
  std::uint64_t seed = 0;
  int iterations = 0;
  std::vector<double> inertia_trace;  // after each assignment pass
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

/// Nearest centroid per row (lowest index on ties). Returns whether any
/// assignment changed.
inline bool assign(const Matrix& x, const Matrix& centroids, std::vector<int>& assignments,
                   std::vector<double>& distances) {
  std::vector<char> changed(x.rows, 0);
  parallel_for(x.rows, [&](std::size_t r) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.rows; ++c) {
      const double d = sq_dist(x.row(r), centroids.row(c));
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    changed[r] = assignments[r] != best;
    assignments[r] = best;
    distances[r] = best_d;
  });
  return std::any_of(changed.begin(), changed.end(), [](char c) { return c != 0; });
}

inline double total(const std::vector<double>& v) {
  double s = 0.0;
  for (double d : v) s += d;
  return s;
}

}  // namespace detail

/// Lloyd iterations from the given initial centroids until the assignment
/// is a fixpoint or max_iter updates were made. An empty cluster is
/// re-seeded at the point farthest from its current centroid.
inline KMeansResult lloyd(const Matrix& x, Matrix centroids, int max_iter) {
  KMeansResult res;
  res.k = static_cast<int>(centroids.rows);
  res.assignments.assign(x.rows, -1);
  std::vector<double> dist(x.rows);
  detail::assign(x, centroids, res.assignments, dist);
  res.inertia_trace.push_back(detail::total(dist));

  for (int it = 0; it < max_iter; ++it) {
    std::vector<double> sums(centroids.rows * x.cols, 0.0);
    std::vector<std::size_t> counts(centroids.rows, 0);
    for (std::size_t r = 0; r < x.rows; ++r) {
      const auto c = static_cast<std::size_t>(res.assignments[r]);
      ++counts[c];
      const auto p = x.row(r);
      for (std::size_t j = 0; j < x.cols; ++j) sums[c * x.cols + j] += p[j];
    }
    std::vector<std::size_t> empty;
    for (std::size_t c = 0; c < centroids.rows; ++c) {
      if (counts[c] == 0) {
        empty.push_back(c);
        continue;
      }
      auto row = centroids.row(c);
      for (std::size_t j = 0; j < x.cols; ++j) row[j] = sums[c * x.cols + j] / static_cast<double>(counts[c]);
    }
    if (!empty.empty()) {
      std::vector<double> own(x.rows);
      for (std::size_t r = 0; r < x.rows; ++r)
        own[r] = detail::sq_dist(x.row(r), centroids.row(static_cast<std::size_t>(res.assignments[r])));
      std::vector<bool> used(x.rows, false);
      for (auto c : empty) {
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t r = 0; r < x.rows; ++r)
          if (!used[r] && own[r] > far_d) {
            far_d = own[r];
            far = r;
          }
        used[far] = true;
        std::copy(x.row(far).begin(), x.row(far).end(), centroids.row(c).begin());
      }
    }
    ++res.iterations;
    const bool changed = detail::assign(x, centroids, res.assignments, dist);
    res.inertia_trace.push_back(detail::total(dist));
    if (!changed && empty.empty()) break;
  }
  res.inertia = res.inertia_trace.back();
  res.centroids = std::move(centroids);
  return res;
}

/// k-means++ seeding under Rng(seed), then Lloyd iterations.
inline KMeansResult fit_kmeans(const Matrix& x, int k, std::uint64_t seed, int max_iter = 300) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  if (x.rows < static_cast<std::size_t>(k))
    throw Error(ErrorCode::TooFewRows, std::to_string(x.rows) + " rows for k=" + std::to_string(k));

  Rng rng(seed);
  Matrix centroids{static_cast<std::size_t>(k), x.cols, {}};
  centroids.data.reserve(centroids.rows * x.cols);
  std::size_t first = static_cast<std::size_t>(rng.uniform_index(x.rows));
  centroids.data.insert(centroids.data.end(), x.row(first).begin(), x.row(first).end());
  std::vector<double> d2(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r) d2[r] = detail::sq_dist(x.row(r), x.row(first));
  for (int c = 1; c < k; ++c) {
    const double sum = detail::total(d2);
    std::size_t pick = 0;
    if (sum > 0.0) {
      const double u = rng.uniform() * sum;
      double acc = 0.0;
      pick = x.rows - 1;
      for (std::size_t r = 0; r < x.rows; ++r) {
        acc += d2[r];
        if (acc > u && d2[r] > 0.0) {
          pick = r;
          break;
        }
      }
    } else {
      pick = static_cast<std::size_t>(rng.uniform_index(x.rows));
    }
    centroids.data.insert(centroids.data.end(), x.row(pick).begin(), x.row(pick).end());
    for (std::size_t r = 0; r < x.rows; ++r) d2[r] = std::min(d2[r], detail::sq_dist(x.row(r), x.row(pick)));
  }
  auto res = lloyd(x, std::move(centroids), max_iter);
  res.seed = seed;
  return res;
}

inline KMeansResult fit_kmeans(const DeltaTable& kb, int k, std::uint64_t seed, int max_iter = 300) {
  return fit_kmeans(kb_matrix(kb), k, seed, max_iter);
}

struct ElbowResult {
  int chosen_k = 0;
  bool low_confidence = false;
  double max_second_difference = 0.0;
  std::vector<int> ks;
  std::vector<double> inertia;
  std::vector<KMeansResult> fits;  // best fit per k, aligned with ks

  const KMeansResult& chosen() const { return fits[static_cast<std::size_t>(chosen_k - ks.front())]; }
};

/// Fits every k in [k_min, k_max], keeping the best of `restarts` seeded
/// runs per k, and picks the k maximizing the second difference
/// inertia(k-1) - 2 inertia(k) + inertia(k+1) over interior k.
///
/// For k > k_min one extra run starts from the best (k-1) centroids plus
/// the worst-fitted point, so the best inertia never increases with k.
/// The choice is flagged low-confidence when the largest second
/// difference is below 5% of inertia(k_min), or when the range has no
/// interior k (the smaller-inertia end is returned then).
inline ElbowResult elbow_select(const Matrix& x, int k_min, int k_max, std::uint64_t seed, int restarts = 8,
                                int max_iter = 300) {
  if (k_min < 1 || k_max < k_min) throw Error(ErrorCode::InvalidArgument, "need 1 <= k_min <= k_max");
  if (x.rows < static_cast<std::size_t>(k_max))
    throw Error(ErrorCode::TooFewRows, std::to_string(x.rows) + " rows for k=" + std::to_string(k_max));
  if (restarts < 1) throw Error(ErrorCode::InvalidArgument, "restarts must be >= 1");

  ElbowResult out;
  for (int k = k_min; k <= k_max; ++k) {
    std::optional<KMeansResult> best;
    for (int r = 0; r < restarts; ++r) {
      auto fit = fit_kmeans(x, k, derive_seed(seed, static_cast<std::uint64_t>(k) * 1000 + static_cast<std::uint64_t>(r)), max_iter);
      if (!best || fit.inertia < best->inertia) best = std::move(fit);
    }
    if (!out.fits.empty()) {
      const auto& prev = out.fits.back();
      Matrix init = prev.centroids;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t r = 0; r < x.rows; ++r) {
        const double d = detail::sq_dist(x.row(r), prev.centroids.row(static_cast<std::size_t>(prev.assignments[r])));
        if (d > far_d) {
          far_d = d;
          far = r;
        }
      }
      init.data.insert(init.data.end(), x.row(far).begin(), x.row(far).end());
      ++init.rows;
      auto grown = lloyd(x, std::move(init), max_iter);
      grown.seed = seed;
      if (grown.inertia < best->inertia) best = std::move(grown);
    }
    out.ks.push_back(k);
    out.inertia.push_back(best->inertia);
    out.fits.push_back(std::move(*best));
  }

  if (out.ks.size() < 3) {
    out.chosen_k = out.inertia.back() < out.inertia.front() ? out.ks.back() : out.ks.front();
    out.low_confidence = true;
    return out;
  }
  double best_sd = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 1; t + 1 < out.ks.size(); ++t) {
    const double sd = out.inertia[t - 1] - 2.0 * out.inertia[t] + out.inertia[t + 1];
    if (sd > best_sd) {
      best_sd = sd;
      out.chosen_k = out.ks[t];
    }
  }
  out.max_second_difference = best_sd;
  out.low_confidence = best_sd < 0.05 * out.inertia.front();
  return out;
}

inline ElbowResult elbow_select(const DeltaTable& kb, int k_min, int k_max, std::uint64_t seed, int restarts = 8) {
  return elbow_select(kb_matrix(kb), k_min, k_max, seed, restarts);
}

struct ClusterProfile {
  int cluster = 0;
  std::size_t size = 0;
  double size_fraction = 0.0;
  double predicted_positive_fraction = 0.0;
  std::vector<double> mean_delta;  // one per KB column
  std::vector<std::string> members;
};

/// Per-cluster size, share of rows predicted positive, and mean delta of
/// every KB column.
inline std::vector<ClusterProfile> profiles(const KMeansResult& result, const DeltaTable& kb,
                                            const std::vector<bool>& predicted_positive) {
  if (result.assignments.size() != kb.rows() || predicted_positive.size() != kb.rows())
    throw Error(ErrorCode::LengthMismatch, "assignments, predictions and KB rows must align");
  std::vector<ClusterProfile> out(static_cast<std::size_t>(result.k));
  std::vector<std::size_t> positives(out.size(), 0);
  for (std::size_t c = 0; c < out.size(); ++c) {
    out[c].cluster = static_cast<int>(c);
    out[c].mean_delta.assign(kb.cols(), 0.0);
  }
  for (std::size_t r = 0; r < kb.rows(); ++r) {
    auto& p = out[static_cast<std::size_t>(result.assignments[r])];
    ++p.size;
    p.members.push_back(kb.row_ids[r]);
    if (predicted_positive[r]) ++positives[static_cast<std::size_t>(p.cluster)];
    const auto v = kb.row_values(r);
    for (std::size_t j = 0; j < v.size(); ++j) p.mean_delta[j] += v[j];
  }
  const double n = static_cast<double>(kb.rows());
  for (std::size_t c = 0; c < out.size(); ++c) {
    auto& p = out[c];
    if (p.size == 0) continue;
    const double s = static_cast<double>(p.size);
    p.size_fraction = s / n;
    p.predicted_positive_fraction = static_cast<double>(positives[c]) / s;
    for (double& m : p.mean_delta) m /= s;
  }
  return out;
}

/// Short column label: "3I2" is the third KB variable, second cell (1-based).
inline std::vector<std::string> short_column_labels(const DeltaTable& kb) {
  std::vector<std::string> out;
  int var_no = 0;
  for (std::size_t c = 0; c < kb.cols(); ++c) {
    if (c == 0 || kb.columns[c].variable != kb.columns[c - 1].variable) ++var_no;
    out.push_back(std::to_string(var_no) + "I" + std::to_string(kb.columns[c].cell + 1));
  }
  return out;
}

inline void write_profiles_csv(const std::vector<ClusterProfile>& ps, const DeltaTable& kb, std::ostream& out) {
  csv::Record rec{"cluster", "size_fraction", "positive_fraction"};
  for (std::size_t c = 0; c < kb.cols(); ++c) rec.push_back(kb.column_name(c));
  csv::write_record(out, rec);
  for (const auto& p : ps) {
    rec = {std::to_string(p.cluster), format_double(p.size_fraction), format_double(p.predicted_positive_fraction)};
    for (double m : p.mean_delta) rec.push_back(format_double(m));
    csv::write_record(out, rec);
  }
}

/// Plot-ready document consumed by the service and the UI.
inline nlohmann::json profiles_to_json(const std::vector<ClusterProfile>& ps, const DeltaTable& kb,
                                       const ElbowResult* elbow = nullptr,
                                       const std::vector<std::string>& cell_labels = {}) {
  nlohmann::json j;
  j["format"] = "delta-recourse-clusters";
  j["model_fingerprint"] = kb.model_fingerprint;
  j["positive_label"] = kb.positive_label;
  const auto short_labels = short_column_labels(kb);
  auto cols = nlohmann::json::array();
  for (std::size_t c = 0; c < kb.cols(); ++c) {
    nlohmann::json col{{"name", kb.column_name(c)},
                       {"label", short_labels[c]},
                       {"var", kb.columns[c].variable},
                       {"variable", kb.variable_names[kb.columns[c].variable]},
                       {"cell", kb.columns[c].cell}};
    if (c < cell_labels.size()) col["cell_label"] = cell_labels[c];
    cols.push_back(std::move(col));
  }
  j["columns"] = std::move(cols);
  auto clusters = nlohmann::json::array();
  for (const auto& p : ps)
    clusters.push_back({{"cluster", p.cluster},
                        {"size", p.size},
                        {"size_fraction", p.size_fraction},
                        {"positive_fraction", p.predicted_positive_fraction},
                        {"mean_delta", p.mean_delta},
                        {"members", p.members}});
  j["clusters"] = std::move(clusters);
  if (elbow) {
    j["k"] = elbow->chosen_k;
    j["low_confidence"] = elbow->low_confidence;
    j["elbow"] = {{"ks", elbow->ks}, {"inertia", elbow->inertia}};
  } else {
    j["k"] = ps.size();
  }
  return j;
}

}  // namespace delta_recourse
