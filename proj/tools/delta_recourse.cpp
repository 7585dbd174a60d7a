#include <functional>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>

#include <delta_recourse/delta_recourse.hpp>
#include <delta_recourse/service.hpp>

namespace dr = delta_recourse;

namespace {

/// Binds CLI options to a scratch RunConfig and remembers which ones the
/// user actually passed, so they can be layered over a --config file.
class Binder {
 public:
  template <typename T>
  void option(CLI::App* app, const std::string& name, T dr::RunConfig::*field, const std::string& help) {
    auto* opt = app->add_option(name, flags_.*field, help);
    setters_.emplace_back(opt, [this, field](dr::RunConfig& c) { c.*field = flags_.*field; });
  }

  void flag(CLI::App* app, const std::string& name, bool dr::RunConfig::*field, const std::string& help) {
    auto* opt = app->add_flag(name, flags_.*field, help);
    setters_.emplace_back(opt, [this, field](dr::RunConfig& c) { c.*field = flags_.*field; });
  }

  void weights(CLI::App* app) {
    auto* opt = app->add_option("--weights", weights_, "Weight mode: select | uniform | fixed:w1,w2,...");
    setters_.emplace_back(opt, [this](dr::RunConfig& c) { dr::set_weight_mode(c, weights_); });
  }

  void config(CLI::App* app) { app->add_option("--config", config_path_, "JSON config; flags override its keys"); }

  dr::RunConfig resolve() const {
    dr::RunConfig cfg;
    if (!config_path_.empty()) {
      std::ifstream in(config_path_);
      if (!in) throw dr::Error(dr::ErrorCode::IoError, "cannot open config '" + config_path_ + "'");
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw dr::Error(dr::ErrorCode::FormatError, std::string("config: ") + e.what());
      }
      dr::apply_config_json(cfg, j);
    }
    for (const auto& [opt, set] : setters_)
      if (opt->count() > 0) set(cfg);
    return cfg;
  }

 private:
  dr::RunConfig flags_;
  std::string weights_;
  std::string config_path_;
  std::vector<std::pair<CLI::Option*, std::function<void(dr::RunConfig&)>>> setters_;
};

void common_paths(Binder& b, CLI::App* cmd) {
  b.config(cmd);
  b.option(cmd, "--out-dir", &dr::RunConfig::out_dir, "Directory for written artifacts");
  b.option(cmd, "--model", &dr::RunConfig::model, "Model JSON (default <out-dir>/model.json)");
  b.option(cmd, "--threshold", &dr::RunConfig::threshold, "Decision threshold on the positive-class posterior");
}

int serve(const dr::RunConfig& cfg) {
  dr::NBModel model = dr::load_model(cfg.model_path());
  dr::DeltaTable kb = dr::load_kb(cfg.kb_path());
  std::optional<nlohmann::json> clusters;
  if (!cfg.clusters.empty()) {
    std::ifstream in(cfg.clusters);
    if (!in) throw dr::Error(dr::ErrorCode::IoError, "cannot open clusters '" + cfg.clusters + "'");
    clusters = nlohmann::json::parse(in);
  }
  const auto state = dr::service::make_state(std::move(model), std::move(kb), std::move(clusters));
  httplib::Server server;
  dr::service::register_routes(server, state, cfg.cors_origin);
  std::cout << "serving " << state.kb.rows() << " knowledge-base rows on http://" << cfg.host << ":" << cfg.port
            << std::endl;
  if (!server.listen(cfg.host, cfg.port)) throw dr::Error(dr::ErrorCode::IoError, "cannot listen on port " + std::to_string(cfg.port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual knowledge base for weighted naive Bayes classifiers"};
  app.require_subcommand(1);
  Binder b;

  auto* train = app.add_subcommand("train", "Discretize, fit the weighted naive Bayes model and report metrics");
  common_paths(b, train);
  b.option(train, "--data", &dr::RunConfig::data, "Input CSV");
  b.option(train, "--schema", &dr::RunConfig::schema, "Schema JSON");
  b.option(train, "--split-file", &dr::RunConfig::split_file, "Where to write the split (default <out-dir>/split.json)");
  b.option(train, "--train-fraction", &dr::RunConfig::train_fraction, "Training share of the rows");
  b.option(train, "--seed", &dr::RunConfig::seed, "Split seed");
  b.flag(train, "--stratify", &dr::RunConfig::stratify, "Stratify the split by class");
  b.option(train, "--validation-fraction", &dr::RunConfig::validation_fraction, "Held-out share used for weight selection");
  b.option(train, "--smoothing", &dr::RunConfig::smoothing, "Laplace smoothing");
  b.option(train, "--max-bins", &dr::RunConfig::max_bins, "Maximum intervals per numeric variable");
  b.option(train, "--min-support", &dr::RunConfig::min_support, "Minimum count for a modality to stay on its own");
  b.option(train, "--merge-tolerance", &dr::RunConfig::merge_tolerance, "Positive-rate gap under which groups merge");
  b.option(train, "--positive", &dr::RunConfig::positive, "Class of interest (overrides the schema)");
  b.weights(train);

  auto* kb = app.add_subcommand("kb", "Build the delta knowledge base over a data slice");
  common_paths(b, kb);
  b.option(kb, "--data", &dr::RunConfig::data, "Input CSV");
  b.option(kb, "--kb", &dr::RunConfig::kb, "KB CSV to write (default <out-dir>/kb.csv)");
  b.option(kb, "--split-file", &dr::RunConfig::split_file, "Split written by train");
  b.option(kb, "--slice", &dr::RunConfig::slice, "test | train | all");

  auto* explain = app.add_subcommand("explain", "Trajectory for one individual");
  common_paths(b, explain);
  b.option(explain, "--kb", &dr::RunConfig::kb, "KB CSV");
  b.option(explain, "--id", &dr::RunConfig::id, "KB row id");
  b.option(explain, "--record", &dr::RunConfig::record, "Raw record as a JSON object");
  b.option(explain, "--constraints", &dr::RunConfig::constraints, "Constraint JSON file");
  b.flag(explain, "--preventive", &dr::RunConfig::preventive, "Move away from the frontier (negative semi-factual)");
  b.option(explain, "--steps", &dr::RunConfig::steps, "Changes for --preventive");
  b.flag(explain, "--semifactual", &dr::RunConfig::semifactual, "Stop just before crossing the frontier");
  b.flag(explain, "--ignore-actionability", &dr::RunConfig::ignore_actionability, "Allow changes to non-actionable variables");
  b.option(explain, "--format", &dr::RunConfig::format, "text | csv");

  auto* cluster = app.add_subcommand("cluster", "k-means profiles of the knowledge base with elbow selection");
  common_paths(b, cluster);
  b.option(cluster, "--kb", &dr::RunConfig::kb, "KB CSV");
  b.option(cluster, "--clusters", &dr::RunConfig::clusters, "Profile JSON to write (default <out-dir>/clusters.json)");
  b.option(cluster, "--k-min", &dr::RunConfig::k_min, "Smallest k");
  b.option(cluster, "--k-max", &dr::RunConfig::k_max, "Largest k");
  b.option(cluster, "--cluster-seed", &dr::RunConfig::cluster_seed, "k-means seed");
  b.option(cluster, "--restarts", &dr::RunConfig::restarts, "Restarts per k");
  b.flag(cluster, "--all-columns", &dr::RunConfig::cluster_all_columns, "Cluster on every KB column, not only actionable ones");

  auto* srv = app.add_subcommand("serve", "Read-only HTTP API");
  common_paths(b, srv);
  b.option(srv, "--kb", &dr::RunConfig::kb, "KB CSV");
  b.option(srv, "--clusters", &dr::RunConfig::clusters, "Cluster profile JSON");
  b.option(srv, "--host", &dr::RunConfig::host, "Bind address");
  b.option(srv, "--port", &dr::RunConfig::port, "Port");
  b.option(srv, "--cors-origin", &dr::RunConfig::cors_origin, "Allowed CORS origin");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  int rc = 0;
  const int status = dr::run_guarded([&] {
    const dr::RunConfig cfg = b.resolve();
    if (train->parsed()) dr::cmd_train(cfg, std::cout);
    else if (kb->parsed()) dr::cmd_kb(cfg, std::cout);
    else if (explain->parsed()) dr::cmd_explain(cfg, std::cout);
    else if (cluster->parsed()) dr::cmd_cluster(cfg, std::cout);
    else if (srv->parsed()) {
      cfg.validate();
      rc = serve(cfg);
    }
  });
  return status != 0 ? status : rc;
}
