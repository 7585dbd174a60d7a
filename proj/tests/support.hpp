#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <delta_recourse/delta_recourse.hpp>

namespace dr_test {

namespace dr = delta_recourse;

// A model held as raw probability tables. The oracles below evaluate the
// posterior by multiplying probabilities directly, without going through
// the library's log-space evaluators.
struct ProbModel {
  std::array<double, 2> priors{0.5, 0.5};
  std::vector<std::vector<std::array<double, 2>>> cond;  // cond[i][q][k]
  std::vector<double> weights;
  int positive = 0;

  std::size_t vars() const { return cond.size(); }
  int cells(std::size_t i) const { return static_cast<int>(cond[i].size()); }
};

inline double joint(const ProbModel& pm, const std::vector<int>& x, int k) {
  double p = pm.priors[k];
  for (std::size_t i = 0; i < x.size(); ++i) p *= std::pow(pm.cond[i][x[i]][k], pm.weights[i]);
  return p;
}

inline double oracle_posterior(const ProbModel& pm, const std::vector<int>& x) {
  const double a = joint(pm, x, pm.positive);
  const double b = joint(pm, x, 1 - pm.positive);
  return a / (a + b);
}

inline double oracle_logit(const ProbModel& pm, const std::vector<int>& x) {
  return std::log(joint(pm, x, pm.positive) / joint(pm, x, 1 - pm.positive));
}

inline double oracle_plausibility(const ProbModel& pm, const std::vector<int>& x) {
  return joint(pm, x, 0) + joint(pm, x, 1);
}

inline dr::Schema categorical_schema(std::size_t vars, const std::vector<std::string>& names = {}) {
  dr::Schema s;
  for (std::size_t i = 0; i < vars; ++i)
    s.variables.push_back({names.empty() ? "X" + std::to_string(i + 1) : names[i], dr::VariableKind::Categorical, true});
  s.target = "class";
  s.class_labels = {"C1", "C2"};
  return s;
}

inline dr::Preprocessor categorical_preprocessor(const dr::Schema& s, const std::vector<int>& cells,
                                                  const std::vector<std::vector<std::string>>& names = {}) {
  std::vector<dr::CellSpec> specs;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    dr::GroupSpec g;
    g.variable = s.variables[i].name;
    for (int q = 0; q < cells[i]; ++q)
      g.groups.push_back({names.empty() ? "v" + std::to_string(q) : names[i][static_cast<std::size_t>(q)]});
    specs.emplace_back(std::move(g));
  }
  return dr::Preprocessor(std::move(specs));
}

inline dr::NBModel to_model(const ProbModel& pm) {
  std::vector<int> cells;
  for (std::size_t i = 0; i < pm.vars(); ++i) cells.push_back(pm.cells(i));
  auto schema = categorical_schema(pm.vars());
  auto pre = categorical_preprocessor(schema, cells);
  return dr::model_from_probabilities(schema, pre, pm.priors, pm.cond, pm.weights, pm.positive);
}

// Two classes C1/C2, variables A {a1,a2} and B {b1,b2}.
inline ProbModel m0_tables(int positive = 0) {
  ProbModel pm;
  pm.priors = {0.5, 0.5};
  pm.cond = {{{0.8, 0.2}, {0.2, 0.8}}, {{0.6, 0.4}, {0.4, 0.6}}};
  pm.weights = {1.0, 1.0};
  pm.positive = positive;
  return pm;
}

inline dr::NBModel m0(int positive = 0) {
  const ProbModel pm = m0_tables(positive);
  auto schema = categorical_schema(2, {"A", "B"});
  auto pre = categorical_preprocessor(schema, {2, 2}, {{"a1", "a2"}, {"b1", "b2"}});
  return dr::model_from_probabilities(schema, pre, pm.priors, pm.cond, pm.weights, pm.positive);
}

inline dr::EncodedInstance cells(std::vector<int> c) { return dr::EncodedInstance{std::move(c)}; }

// Random probability model. Weights are a mix of 0, 1 and fractions when
// `fractional` is set, else all 1.
inline ProbModel random_tables(std::mt19937_64& gen, int max_vars, int max_cells, bool fractional = true) {
  std::uniform_int_distribution<int> nv(1, max_vars);
  std::uniform_int_distribution<int> nc(2, max_cells);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::uniform_real_distribution<double> prior(0.1, 0.9);
  ProbModel pm;
  const double p0 = prior(gen);
  pm.priors = {p0, 1.0 - p0};
  const int d = nv(gen);
  for (int i = 0; i < d; ++i) {
    const int c = nc(gen);
    std::vector<std::array<double, 2>> table(static_cast<std::size_t>(c));
    for (int k = 0; k < 2; ++k) {
      double sum = 0.0;
      for (auto& t : table) sum += (t[k] = u(gen));
      for (auto& t : table) t[k] /= sum;
    }
    pm.cond.push_back(std::move(table));
    double w = 1.0;
    if (fractional) {
      const int kind = std::uniform_int_distribution<int>(0, 3)(gen);
      w = kind == 0 ? 0.0 : kind == 1 ? 1.0 : std::uniform_real_distribution<double>(0.0, 1.0)(gen);
    }
    pm.weights.push_back(w);
  }
  pm.positive = std::uniform_int_distribution<int>(0, 1)(gen);
  return pm;
}

inline std::vector<int> random_instance(std::mt19937_64& gen, const ProbModel& pm) {
  std::vector<int> x;
  for (std::size_t i = 0; i < pm.vars(); ++i) x.push_back(std::uniform_int_distribution<int>(0, pm.cells(i) - 1)(gen));
  return x;
}

// Random change set: each variable is changed with probability 1/2, to a
// different cell; order is shuffled.
inline dr::ChangeSet random_changes(std::mt19937_64& gen, const ProbModel& pm, const std::vector<int>& x) {
  dr::ChangeSet cs;
  for (std::size_t i = 0; i < pm.vars(); ++i) {
    if (std::uniform_int_distribution<int>(0, 1)(gen) == 0) continue;
    int m = std::uniform_int_distribution<int>(0, pm.cells(i) - 2)(gen);
    if (m >= x[i]) ++m;
    cs.push_back({i, m});
  }
  std::shuffle(cs.begin(), cs.end(), gen);
  return cs;
}

// One (model, instance, change set) triple of the fuzz corpus.
struct FuzzCase {
  ProbModel pm;
  dr::NBModel model;
  std::vector<int> x;
  dr::ChangeSet changes;
};

inline std::vector<FuzzCase> fuzz_corpus(std::uint64_t seed, int n, int max_vars = 8, int max_cells = 6) {
  std::mt19937_64 gen(seed);
  std::vector<FuzzCase> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    FuzzCase c;
    c.pm = random_tables(gen, max_vars, max_cells);
    c.model = to_model(c.pm);
    c.x = random_instance(gen, c.pm);
    c.changes = random_changes(gen, c.pm, c.x);
    out.push_back(std::move(c));
  }
  return out;
}

inline std::vector<int> applied(std::vector<int> x, const dr::ChangeSet& cs) {
  for (const auto& c : cs) x[c.variable] = c.cell;
  return x;
}

// Fewest changes that lift the oracle posterior above `threshold`, by
// exhaustive enumeration of every target profile. -1 when unreachable.
inline int brute_force_min_changes(const ProbModel& pm, const std::vector<int>& x, double threshold = 0.5) {
  std::vector<int> y(pm.vars(), 0);
  int best = -1;
  for (;;) {
    int changes = 0;
    for (std::size_t i = 0; i < y.size(); ++i) changes += y[i] != x[i];
    if ((best < 0 || changes < best) && oracle_posterior(pm, y) > threshold) best = changes;
    std::size_t i = 0;
    while (i < y.size() && ++y[i] == pm.cells(i)) y[i++] = 0;
    if (i == y.size()) break;
  }
  return best;
}

// Four blobs of `per_blob` points around 10*e_j (j = 0..3) in `dims`
// dimensions (dims >= 4). Offsets come in +/- pairs, so each blob's mean
// is its center.
struct Blobs {
  dr::Matrix points;
  std::vector<int> blob;                    // generating blob per row
  std::vector<std::vector<double>> centers;
};

inline Blobs four_blobs(std::uint64_t seed, std::size_t dims = 6, int per_blob = 40, double radius = 0.5) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-radius, radius);
  Blobs b;
  b.points.cols = dims;
  for (int j = 0; j < 4; ++j) {
    std::vector<double> c(dims, 0.0);
    c[static_cast<std::size_t>(j)] = 10.0;
    b.centers.push_back(c);
    for (int p = 0; p < per_blob / 2; ++p) {
      std::vector<double> off(dims);
      for (auto& o : off) o = u(gen);
      for (int sign : {+1, -1}) {
        for (std::size_t t = 0; t < dims; ++t) b.points.data.push_back(c[t] + sign * off[t]);
        b.blob.push_back(j);
        ++b.points.rows;
      }
    }
  }
  return b;
}

// A KB with the given model fingerprint whose rows are the blob points.
// The model has `dims`/2 categorical variables of 3 cells; every factual
// profile is all-zeros so cell 0 columns stay 0 and blob coordinates fill
// cells 1 and 2.
struct BlobKb {
  dr::NBModel model;
  dr::DeltaTable kb;
  Blobs blobs;
};

inline BlobKb blob_kb(std::uint64_t seed, int per_blob = 40) {
  BlobKb out;
  const std::size_t vars = 3;
  out.blobs = four_blobs(seed, vars * 2, per_blob);
  ProbModel pm;
  for (std::size_t i = 0; i < vars; ++i) pm.cond.push_back({{0.5, 0.2}, {0.3, 0.3}, {0.2, 0.5}});
  pm.weights.assign(vars, 1.0);
  out.model = to_model(pm);
  auto& kb = out.kb;
  kb.model_fingerprint = dr::fingerprint(out.model);
  kb.positive_label = out.model.positive_label();
  for (const auto& v : out.model.schema.variables) kb.variable_names.push_back(v.name);
  kb.columns = dr::kb_columns(out.model);
  for (std::size_t r = 0; r < out.blobs.points.rows; ++r) {
    kb.row_ids.push_back("r" + std::to_string(r + 1));
    kb.factual_cells.push_back(dr::EncodedInstance{std::vector<int>(vars, 0)});
    kb.base_logit.push_back(r % 2 == 0 ? 0.5 : -0.5);
    const auto p = out.blobs.points.row(r);
    for (std::size_t i = 0; i < vars; ++i) {
      kb.values.push_back(0.0);
      kb.values.push_back(p[2 * i]);
      kb.values.push_back(p[2 * i + 1]);
    }
  }
  return out;
}

// Columns of a BlobKb that carry blob coordinates, in point order.
inline std::vector<std::size_t> blob_columns() { return {1, 2, 4, 5, 7, 8}; }

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("dr_test_" + std::to_string(rd()) + "_" + std::to_string(++counter));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace dr_test
