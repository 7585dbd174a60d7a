#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <gtest/gtest.h>

#include "support.hpp"
#include "telco_like.hpp"

namespace dr = delta_recourse;
using dr_test::TempDir;

namespace {

const std::string kSchema = std::string(DR_SOURCE_DIR) + "/data/telco_schema.json";

struct Cli {
  int code = -1;
  std::string output;
};

Cli run_cli(const std::string& args) {
  const std::string cmd = std::string(DR_CLI) + " " + args + " 2>&1";
  Cli r;
  FILE* p = popen(cmd.c_str(), "r");
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), p)) r.output.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string write_synthetic(const TempDir& dir, std::size_t rows = 7043) {
  const std::string path = dir.file("telco_like.csv");
  std::ofstream out(path, std::ios::binary);
  dr::synth::write_telco_like(out, rows);
  return path;
}

dr::RunConfig base_config(const TempDir& dir, const std::string& data) {
  dr::RunConfig cfg;
  cfg.data = data;
  cfg.schema = kSchema;
  cfg.out_dir = dir.file("out");
  return cfg;
}

// M0 artifacts on disk: model, and a KB holding (a1,b1) as "m0" and
// (a2,b2) as "m0b".
dr::RunConfig m0_artifacts(const TempDir& dir) {
  const auto model = dr_test::m0(1);
  dr::RunConfig cfg;
  cfg.out_dir = dir.str();
  dr::save_model(model, cfg.model_path());
  const std::vector<dr::EncodedInstance> xs = {dr_test::cells({0, 0}), dr_test::cells({1, 1})};
  const std::vector<std::string> ids = {"m0", "m0b"};
  dr::save_kb(dr::build_kb(model, xs, ids), cfg.kb_path());
  return cfg;
}

}  // namespace

class SyntheticRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    data_ = write_synthetic(*dir_);
    cfg_ = base_config(*dir_, data_);
    std::ostringstream log;
    report_ = dr::cmd_train(cfg_, log);
    kb_ = dr::cmd_kb(cfg_, log);
  }
  static void TearDownTestSuite() { delete dir_; }

  static TempDir* dir_;
  static std::string data_;
  static dr::RunConfig cfg_;
  static dr::TrainReport report_;
  static dr::DeltaTable kb_;
};

TempDir* SyntheticRun::dir_ = nullptr;
std::string SyntheticRun::data_;
dr::RunConfig SyntheticRun::cfg_;
dr::TrainReport SyntheticRun::report_;
dr::DeltaTable SyntheticRun::kb_;

TEST_F(SyntheticRun, ReportMatchesRecomputation) {
  EXPECT_EQ(report_.n_train, 5634u);
  EXPECT_EQ(report_.n_test, 1409u);
  const auto model = dr::load_model(cfg_.model_path());
  const auto ds = dr::load_csv(data_, model.schema);
  const auto split = nlohmann::json::parse(dr_test::read_file(cfg_.split_path()));
  std::vector<std::size_t> test_rows;
  for (const auto& id : split["test_ids"])
    for (std::size_t r = 0; r < ds.size(); ++r)
      if (ds.ids[r] == id.get<std::string>()) test_rows.push_back(r);
  const auto test = dr::subset(ds, test_rows);
  const auto xs = dr::encode(test, model.preprocessor);
  EXPECT_EQ(dr::model_auc(model, xs, test.labels), report_.test_auc);

  const auto& doc = report_.document;
  EXPECT_EQ(doc["model_fingerprint"], dr::fingerprint(model));
  std::size_t included = 0;
  int cells = 0;
  for (std::size_t i = 0; i < model.variables(); ++i)
    if (model.included(i)) ++included, cells += model.cells(i);
  ASSERT_EQ(doc["retained_variables"].size(), included);
  for (const auto& v : doc["retained_variables"])
    EXPECT_EQ(v["weight"].get<double>(), model.weights[v["index"].get<std::size_t>()]);
  EXPECT_EQ(doc["kb_total_cells"], cells);
  EXPECT_EQ(doc["kb_candidates_per_row"], cells - static_cast<int>(included));
}

TEST_F(SyntheticRun, KbCoversTestSlice) {
  EXPECT_EQ(kb_.rows(), 1409u);
  const auto split = nlohmann::json::parse(dr_test::read_file(cfg_.split_path()));
  EXPECT_EQ(kb_.row_ids, split["test_ids"].get<std::vector<std::string>>());
  const auto model = dr::load_model(cfg_.model_path());
  EXPECT_EQ(kb_.cols(), dr::kb_columns(model).size());
}

TEST_F(SyntheticRun, ExplainEveryStepIsConsistent) {
  const auto model = dr::load_model(cfg_.model_path());
  int found = 0;
  for (std::size_t r = 0; r < 40; ++r) {
    auto cfg = cfg_;
    cfg.id = kb_.row_ids[r];
    std::ostringstream out;
    const auto res = dr::cmd_explain(cfg, out);
    EXPECT_NEAR(res.final_prob, dr::predict_proba(model, res.final_instance), 1e-9);
    for (const auto& s : res.steps) EXPECT_TRUE(model.schema.variables[s.variable].actionable);
    found += res.status == dr::CfStatus::CounterfactualFound && !res.steps.empty();
  }
  EXPECT_GT(found, 0);
}

TEST_F(SyntheticRun, Deterministic) {
  TempDir again;
  auto cfg = base_config(again, data_);
  std::ostringstream log;
  dr::cmd_train(cfg, log);
  EXPECT_EQ(dr_test::read_file(cfg.model_path()), dr_test::read_file(cfg_.model_path()));
  EXPECT_EQ(dr_test::read_file(cfg.split_path()), dr_test::read_file(cfg_.split_path()));
}

TEST_F(SyntheticRun, ClusterProfiles) {
  auto cfg = cfg_;
  cfg.k_min = 2;
  cfg.k_max = 6;
  cfg.restarts = 2;
  std::ostringstream log;
  const auto run = dr::cmd_cluster(cfg, log);
  EXPECT_GE(run.elbow.chosen_k, 2);
  EXPECT_LE(run.elbow.chosen_k, 6);
  double total = 0.0;
  for (const auto& p : run.profiles) total += p.size_fraction;
  EXPECT_NEAR(total, 1.0, 1e-12);
  const auto model = dr::load_model(cfg.model_path());
  for (const auto& name : run.document["clustered_columns"]) {
    const auto var = name.get<std::string>().substr(0, name.get<std::string>().rfind(':'));
    EXPECT_TRUE(model.schema.variables[*model.schema.index_of(var)].actionable) << var;
  }
  EXPECT_TRUE(std::ifstream(cfg.out_dir + "/profiles.csv").good());
  EXPECT_TRUE(std::ifstream(cfg.out_dir + "/elbow.csv").good());
}

TEST(Pipeline, UniformWeightsRetainAll) {
  TempDir dir;
  auto cfg = base_config(dir, write_synthetic(dir, 600));
  cfg.weight_mode = dr::WeightMode::Uniform;
  std::ostringstream log;
  const auto report = dr::cmd_train(cfg, log);
  EXPECT_EQ(report.document["retained_variables"].size(), 19u);
}

TEST(Pipeline, FixedWeights) {
  dr::RunConfig cfg;
  dr::set_weight_mode(cfg, "fixed:0.5,1,0");
  EXPECT_EQ(cfg.weight_mode, dr::WeightMode::Fixed);
  EXPECT_EQ(cfg.fixed_weights, (std::vector<double>{0.5, 1.0, 0.0}));
  EXPECT_THROW(dr::set_weight_mode(cfg, "fixed:0.5,x"), dr::Error);
  EXPECT_THROW(dr::set_weight_mode(cfg, "best"), dr::Error);

  TempDir dir;
  auto run = base_config(dir, write_synthetic(dir, 300));
  dr::set_weight_mode(run, "fixed:1,0");
  std::ostringstream log;
  EXPECT_THROW(dr::cmd_train(run, log), dr::Error);
}

TEST(Pipeline, ConfigJson) {
  dr::RunConfig cfg;
  dr::apply_config_json(cfg, nlohmann::json::parse(R"({"seed": 5, "k_max": 9, "weights": "uniform",
                                                     "record": {"A": "a1"}})"));
  EXPECT_EQ(cfg.seed, 5u);
  EXPECT_EQ(cfg.k_max, 9);
  EXPECT_EQ(cfg.weight_mode, dr::WeightMode::Uniform);
  EXPECT_EQ(cfg.record, R"({"A":"a1"})");
  try {
    dr::apply_config_json(cfg, nlohmann::json::parse(R"({"sed": 5})"));
    FAIL();
  } catch (const dr::Error& e) {
    EXPECT_EQ(e.code(), dr::ErrorCode::InvalidArgument);
  }
  EXPECT_THROW(dr::apply_config_json(cfg, nlohmann::json::parse(R"({"seed": "five"})")), dr::Error);
  EXPECT_THROW(dr::apply_config_json(cfg, nlohmann::json::parse("[1]")), dr::Error);

  cfg = {};
  cfg.threshold = 1.0;
  EXPECT_THROW(cfg.validate(), dr::Error);
  cfg = {};
  cfg.slice = "validation";
  EXPECT_THROW(cfg.validate(), dr::Error);
}

TEST(Pipeline, M0ExplainById) {
  TempDir dir;
  auto cfg = m0_artifacts(dir);
  cfg.id = "m0";
  cfg.format = "csv";
  std::ostringstream out;
  const auto r = dr::cmd_explain(cfg, out);
  EXPECT_EQ(r.status, dr::CfStatus::CounterfactualFound);
  EXPECT_EQ(out.str(), "A,B,P(C2)\n[a1],[b1]," + dr::format_double(1.0 / 7.0) + "\n[a2]*,[b1]," +
                           dr::format_double(8.0 / 11.0) + "\n");
  EXPECT_NEAR(r.final_prob, 8.0 / 11.0, 1e-12);

  cfg.id.clear();
  cfg.record = R"({"A": "a1", "B": "b1"})";
  std::ostringstream again;
  dr::cmd_explain(cfg, again);
  EXPECT_EQ(again.str(), out.str());

  cfg.record = R"({"A": "a1", "C": "c"})";
  try {
    dr::cmd_explain(cfg, again);
    FAIL();
  } catch (const dr::Error& e) {
    EXPECT_EQ(e.code(), dr::ErrorCode::MissingColumn);
  }

  cfg.record.clear();
  cfg.id = "nobody";
  try {
    dr::cmd_explain(cfg, again);
    FAIL();
  } catch (const dr::Error& e) {
    EXPECT_EQ(e.code(), dr::ErrorCode::UnknownRowId);
  }
}

TEST(Pipeline, FrozenAllAndPreventive) {
  TempDir dir;
  auto cfg = m0_artifacts(dir);
  cfg.id = "m0";
  cfg.constraints = dir.file("frozen.json");
  dr_test::write_file(cfg.constraints, R"({"frozen": ["A", "B"]})");
  std::ostringstream out;
  EXPECT_EQ(dr::cmd_explain(cfg, out).status, dr::CfStatus::NoChangePossible);

  cfg.constraints.clear();
  cfg.id = "m0b";
  cfg.preventive = true;
  cfg.steps = 2;
  const auto r = dr::cmd_explain(cfg, out);
  ASSERT_EQ(r.steps.size(), 2u);
  const auto pm = dr_test::m0_tables(1);
  EXPECT_NEAR(r.steps[0].prob_after, dr_test::oracle_posterior(pm, {0, 1}), 1e-12);
  EXPECT_NEAR(r.final_prob, dr_test::oracle_posterior(pm, {0, 0}), 1e-12);
  EXPECT_LT(r.steps[0].prob_after, r.initial_prob);
  EXPECT_LT(r.final_prob, r.steps[0].prob_after);
}

TEST(Pipeline, ClusterBlobKb) {
  TempDir dir;
  const auto bk = dr_test::blob_kb(11);
  dr::RunConfig cfg;
  cfg.out_dir = dir.str();
  dr::save_model(bk.model, cfg.model_path());
  dr::save_kb(bk.kb, cfg.kb_path());
  std::ostringstream log;
  const auto run = dr::cmd_cluster(cfg, log);
  EXPECT_EQ(run.elbow.chosen_k, 4);
  EXPECT_FALSE(run.elbow.low_confidence);
  const auto doc = nlohmann::json::parse(dr_test::read_file(cfg.clusters_path()));
  EXPECT_EQ(doc["k"], 4);
  EXPECT_NE(log.str().find("chosen k: 4\n"), std::string::npos);

  cfg.k_min = cfg.k_max = 2;
  const auto single = dr::cmd_cluster(cfg, log);
  EXPECT_EQ(single.elbow.ks.size(), 1u);
  EXPECT_TRUE(single.elbow.low_confidence);
  EXPECT_EQ(nlohmann::json::parse(dr_test::read_file(cfg.clusters_path()))["low_confidence"], true);
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  const auto data = write_synthetic(dir, 400);
  const std::string out = dir.file("out");
  const std::string common = " --data " + data + " --schema " + kSchema + " --out-dir " + out;

  EXPECT_EQ(run_cli("train --data " + dir.file("absent.csv") + " --schema " + kSchema + " --out-dir " + out).code, 2);
  EXPECT_EQ(run_cli("train --data " + data + " --schema " + dir.file("absent.json") + " --out-dir " + out).code, 2);
  EXPECT_EQ(run_cli("train --bogus").code, 2);
  EXPECT_EQ(run_cli("train --weights uniform --threshold 2" + common).code, 2);

  const std::string other = dir.file("other");
  dr_test::write_file(dir.file("schema_extra.json"),
                      R"({"target": "Churn", "positive_label": "Yes", "negative_label": "No",
                          "id_column": "customerID",
                          "variables": [{"name": "NoSuchColumn", "kind": "categorical"}]})");
  const auto missing = run_cli("train --data " + data + " --schema " + dir.file("schema_extra.json") + " --out-dir " + other);
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.output.find("NoSuchColumn"), std::string::npos) << missing.output;

  ASSERT_EQ(run_cli("train --weights uniform" + common).code, 0);
  ASSERT_EQ(run_cli("kb --data " + data + " --out-dir " + out).code, 0);
  ASSERT_EQ(run_cli("train --weights uniform --smoothing 2" + common + " --model " + dir.file("m2.json")).code, 0);
  EXPECT_EQ(run_cli("explain --out-dir " + out + " --model " + dir.file("m2.json") + " --id x").code, 3);
  EXPECT_EQ(run_cli("cluster --out-dir " + out + " --model " + dir.file("m2.json")).code, 3);
  EXPECT_EQ(run_cli("explain --out-dir " + out + " --id nobody").code, 2);
}

TEST(Cli, FlagsWinOverConfig) {
  TempDir dir;
  const auto data = write_synthetic(dir, 300);
  dr_test::write_file(dir.file("cfg.json"), nlohmann::json{{"data", data},
                                                           {"schema", kSchema},
                                                           {"out_dir", dir.file("out")},
                                                           {"weights", "uniform"},
                                                           {"seed", 5}}
                                                .dump());
  ASSERT_EQ(run_cli("train --config " + dir.file("cfg.json") + " --seed 9").code, 0);
  const auto split = nlohmann::json::parse(dr_test::read_file(dir.file("out/split.json")));
  EXPECT_EQ(split["seed"], 9);
  ASSERT_EQ(run_cli("train --config " + dir.file("cfg.json")).code, 0);
  EXPECT_EQ(nlohmann::json::parse(dr_test::read_file(dir.file("out/split.json")))["seed"], 5);

  dr_test::write_file(dir.file("bad.json"), R"({"sed": 1})");
  EXPECT_EQ(run_cli("train --config " + dir.file("bad.json")).code, 2);
}

TEST(Cli, EmptySliceGivesEmptyKb) {
  TempDir dir;
  const auto data = write_synthetic(dir, 2);
  const std::string common = " --data " + data + " --schema " + kSchema + " --out-dir " + dir.file("out");
  ASSERT_EQ(run_cli("train --weights uniform" + common).code, 0);
  const auto split = nlohmann::json::parse(dr_test::read_file(dir.file("out/split.json")));
  ASSERT_TRUE(split["test_ids"].empty());
  const auto r = run_cli("kb --data " + data + " --out-dir " + dir.file("out"));
  EXPECT_EQ(r.code, 0) << r.output;
  const auto kb = dr::load_kb(dir.file("out/kb.csv"));
  EXPECT_EQ(kb.rows(), 0u);
}

TEST(Cli, ExplainCsvOnM0) {
  TempDir dir;
  const auto cfg = m0_artifacts(dir);
  const auto r = run_cli("explain --out-dir " + cfg.out_dir + " --id m0 --format csv");
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.output, "A,B,P(C2)\n[a1],[b1]," + dr::format_double(1.0 / 7.0) + "\n[a2]*,[b1]," +
                          dr::format_double(8.0 / 11.0) + "\n");
}
