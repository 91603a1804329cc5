// Command-line front end: data generation, graph queries, training,
// estimation and full experiment runs.  All failures exit nonzero with a
// one-line JSON error object on standard error.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "civest/dag.hpp"
#include "civest/dataset.hpp"
#include "civest/error.hpp"
#include "civest/estimators.hpp"
#include "civest/harness.hpp"
#include "civest/jsonio.hpp"
#include "civest/model.hpp"

namespace {

using nlohmann::json;

int emit_error(const std::string& type, const std::string& message, int code) {
  json j;
  j["error"] = {{"type", type}, {"message", message}, {"exit_code", code}};
  std::cerr << j.dump() << "\n";
  return code;
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(csv);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

civest::Dag load_dag(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw civest::DataError("cannot open '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return civest::parse_dag(text.str());
}

// Renders a trail with edge directions, e.g. "S -> C <- F".
std::string format_trail(const civest::Dag& g, const std::vector<std::string>& trail) {
  if (trail.empty()) return "";
  std::string out = trail[0];
  for (std::size_t i = 1; i < trail.size(); ++i) {
    out += g.has_edge(trail[i - 1], trail[i]) ? " -> " : " <- ";
    out += trail[i];
  }
  return out;
}

const char* yes_no(bool b) { return b ? "yes" : "no"; }

struct GenArgs {
  long n = 2000;
  std::uint64_t seed = 0;
  std::string out;
};

int run_gen(const GenArgs& args) {
  civest::SynthConfig cfg;
  cfg.n = args.n;
  cfg.seed = args.seed;
  const civest::Dataset data = civest::generate_synthetic(cfg);
  civest::write_csv(args.out, data);
  const std::string schema_path = args.out + ".schema.json";
  civest::write_schema(schema_path, civest::DataSchema{});
  std::cout << "wrote " << data.rows() << " rows to " << args.out << " (schema " << schema_path
            << ")\n";
  return 0;
}

struct DsepArgs {
  std::string dag, a, b, given;
};

int run_dsep(const DsepArgs& args) {
  const civest::Dag g = load_dag(args.dag);
  std::set<std::string> z;
  for (const auto& name : split_list(args.given)) z.insert(name);
  const civest::ActiveTrail trail = civest::find_active_trail(g, args.a, args.b, z);
  if (trail.connected) {
    std::cout << "d-connected: " << format_trail(g, trail.trail) << "\n";
  } else {
    std::cout << "d-separated\n";
  }
  return 0;
}

struct CivCheckArgs {
  std::string dag, iv, cond, treatment, outcome;
};

int run_civ_check(const CivCheckArgs& args) {
  const civest::Dag g = load_dag(args.dag);
  std::set<std::string> z;
  for (const auto& name : split_list(args.cond)) z.insert(name);
  const civest::CivVerdict v = civest::is_valid_civ(g, args.iv, z, args.treatment, args.outcome);
  std::cout << "relevant: " << yes_no(v.relevant) << "\n";
  if (v.witness_relevance) std::cout << "  " << *v.witness_relevance << "\n";
  std::cout << "exogenous_in_manipulated_graph: " << yes_no(v.exogenous_given_z) << "\n";
  if (v.witness_open_path) {
    std::cout << "  open path: " << format_trail(g, *v.witness_open_path) << "\n";
  }
  std::cout << "conditioning_set_clean: " << yes_no(v.z_clean) << "\n";
  if (v.witness_descendant) {
    std::cout << "  descendant of outcome in conditioning set: " << *v.witness_descendant << "\n";
  }
  std::cout << "valid: " << yes_no(v.valid) << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, schema, config, out, history;
};

int run_train(const TrainArgs& args) {
  civest::DataSchema schema;
  if (!args.schema.empty()) schema = civest::load_schema(args.schema);
  const civest::Dataset ds = civest::load_csv_with_schema(args.data, schema);

  civest::ModelConfig cfg;
  if (!args.config.empty()) {
    cfg = civest::ModelConfig::from_json(civest::jsonio::load_json_file(args.config));
  } else if (schema.binary_outcome) {
    cfg.outcome = civest::OutcomeKind::binary;
  }
  civest::TrainedModel model = civest::train(ds, cfg);
  civest::save_checkpoint(args.out, model);
  const std::string history_path = args.history.empty() ? args.out + ".history.json" : args.history;
  civest::save_history(history_path, model.history);
  std::cout << "trained " << cfg.epochs << " epochs on " << ds.rows() << " rows";
  if (!model.history.epochs.empty()) {
    std::cout << "; final loss " << model.history.epochs.back().loss;
  }
  std::cout << "; checkpoint " << args.out << "\n";
  return 0;
}

struct EstimateArgs {
  std::string data, schema, checkpoint, estimators = "dvae_civ,naive";
  std::string stage_config;
  std::string wald_instrument;
  std::string wald_conditioning;
  std::uint64_t seed = 0;
  std::string out;
};

int run_estimate(const EstimateArgs& args) {
  civest::DataSchema schema;
  if (!args.schema.empty()) schema = civest::load_schema(args.schema);
  const civest::Dataset ds = civest::load_csv_with_schema(args.data, schema);
  const std::vector<std::string> tags = split_list(args.estimators);
  if (tags.empty()) throw civest::UsageError("--estimators must name at least one estimator");

  civest::TwoStageConfig stage;
  if (!args.stage_config.empty()) {
    stage = civest::TwoStageConfig::from_json(civest::jsonio::load_json_file(args.stage_config));
  }
  stage.seed = args.seed;

  json rows = json::array();
  for (const auto& tag : tags) {
    civest::EffectEstimate est;
    if (tag == "dvae_civ") {
      if (args.checkpoint.empty()) {
        throw civest::UsageError("estimator dvae_civ needs --checkpoint");
      }
      civest::TrainedModel model = civest::load_checkpoint(args.checkpoint);
      if (model.feature_names != ds.x_names) {
        throw civest::DataError("checkpoint features do not match the data columns");
      }
      auto [s, zrep] = civest::extract_representations(model, ds.x);
      civest::TwoStageModel ts = civest::fit_two_stage(s, zrep, ds.w, ds.y, stage);
      est = civest::estimate_from_model(ts, zrep, tag);
    } else if (tag == "naive") {
      est = civest::naive_regression_ace(ds);
    } else if (tag == "oracle_civ") {
      est = civest::oracle_civ_estimate(ds, stage);
    } else if (tag == "wald") {
      if (args.wald_instrument.empty()) {
        throw civest::UsageError("estimator wald needs --wald-instrument");
      }
      est = civest::wald_conditional(ds, args.wald_instrument,
                                     split_list(args.wald_conditioning));
    } else {
      throw civest::UsageError("unknown estimator '" + tag + "'");
    }
    json row;
    row["estimator"] = est.estimator;
    row["ace"] = est.ace;
    if (ds.has_potentials()) {
      row["ace_error"] = civest::metric_ace_error(est.ace, (ds.y1 - ds.y0).mean());
      row["pehe"] = civest::metric_pehe(est.cace, ds.y1, ds.y0);
    }
    rows.push_back(std::move(row));
    std::cout << est.estimator << ": ace = " << est.ace << "\n";
  }

  json doc;
  doc["schema_version"] = 1;
  doc["data"] = args.data;
  doc["rows"] = ds.rows();
  doc["fold"] = "within_sample";
  doc["estimates"] = std::move(rows);
  std::ofstream out(args.out);
  if (!out) throw civest::DataError("cannot open '" + args.out + "' for writing");
  out << doc.dump(2) << '\n';
  if (!out) throw civest::DataError("write to '" + args.out + "' failed");
  return 0;
}

int run_experiment_cmd(const std::string& config_path) {
  const civest::ExperimentConfig cfg = civest::ExperimentConfig::load(config_path);
  const civest::EffectReport report = civest::run_experiment(cfg);
  const std::string out_dir = civest::resolve_out_dir(cfg);
  auto [report_path, csv_path] = civest::write_report(report, out_dir);
  if (report.failed == static_cast<long>(report.replications.size())) {
    throw civest::NumericError("all " + std::to_string(report.failed) +
                               " replications failed; first error: " +
                               report.replications.front().error);
  }
  std::cout << "report: " << report_path << "\n";
  std::cout << "rows:   " << csv_path << "\n";
  for (const auto& agg : report.aggregates) {
    if (agg.fold != "out_of_sample" || agg.metric != "ace_error") continue;
    std::cout << agg.estimator << " out-of-sample ace_error: " << agg.mean << " +/- "
              << agg.stddev << " (n=" << agg.count << ")\n";
  }
  if (report.failed > 0) {
    std::cout << report.failed << " replication(s) failed; see report for details\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional-instrument effect estimation toolkit"};
  app.require_subcommand(1);

  GenArgs gen_args;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic benchmark CSV");
  gen->add_option("--n", gen_args.n, "Sample count")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_args.seed, "Generator seed");
  gen->add_option("--out", gen_args.out, "Output CSV path")->required();

  DsepArgs dsep_args;
  auto* dsep = app.add_subcommand("dsep", "d-separation query on a DAG file");
  dsep->add_option("--dag", dsep_args.dag, "DAG file")->required();
  dsep->add_option("--a", dsep_args.a, "First node")->required();
  dsep->add_option("--b", dsep_args.b, "Second node")->required();
  dsep->add_option("--given", dsep_args.given, "Comma-separated conditioning nodes");

  CivCheckArgs civ_args;
  auto* civ = app.add_subcommand("civ-check", "Conditional-instrument validity check");
  civ->add_option("--dag", civ_args.dag, "DAG file")->required();
  civ->add_option("--iv", civ_args.iv, "Candidate instrument node")->required();
  civ->add_option("--cond", civ_args.cond, "Comma-separated conditioning nodes");
  civ->add_option("--treatment", civ_args.treatment, "Treatment node")->required();
  civ->add_option("--outcome", civ_args.outcome, "Outcome node")->required();

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train the representation model on a CSV");
  train->add_option("--data", train_args.data, "Input CSV")->required();
  train->add_option("--schema", train_args.schema, "Schema sidecar JSON");
  train->add_option("--config", train_args.config, "Model config JSON");
  train->add_option("--out", train_args.out, "Checkpoint output path")->required();
  train->add_option("--history", train_args.history,
                    "Training-history output path (default: <out>.history.json)");

  EstimateArgs est_args;
  auto* est = app.add_subcommand("estimate", "In-sample effect estimates on a CSV");
  est->add_option("--data", est_args.data, "Input CSV")->required();
  est->add_option("--schema", est_args.schema, "Schema sidecar JSON");
  est->add_option("--checkpoint", est_args.checkpoint, "Model checkpoint (for dvae_civ)");
  est->add_option("--estimators", est_args.estimators,
                  "Comma-separated tags: dvae_civ,naive,oracle_civ,wald");
  est->add_option("--stage-config", est_args.stage_config, "Two-stage config JSON");
  est->add_option("--wald-instrument", est_args.wald_instrument, "Binary instrument column");
  est->add_option("--wald-conditioning", est_args.wald_conditioning,
                  "Comma-separated conditioning columns for wald");
  est->add_option("--seed", est_args.seed, "Estimator seed");
  est->add_option("--out", est_args.out, "Output JSON path")->required();

  std::string experiment_config;
  auto* exp = app.add_subcommand("experiment", "Replicated experiment from a config file");
  exp->add_option("--config", experiment_config, "Experiment config JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    return emit_error("usage", e.what(), 1);
  }

  try {
    if (gen->parsed()) return run_gen(gen_args);
    if (dsep->parsed()) return run_dsep(dsep_args);
    if (civ->parsed()) return run_civ_check(civ_args);
    if (train->parsed()) return run_train(train_args);
    if (est->parsed()) return run_estimate(est_args);
    if (exp->parsed()) return run_experiment_cmd(experiment_config);
    return emit_error("usage", "no subcommand given", 1);
  } catch (const civest::UsageError& e) {
    return emit_error("usage", e.what(), 1);
  } catch (const civest::DataError& e) {
    return emit_error("data", e.what(), 2);
  } catch (const civest::Error& e) {
    return emit_error("numeric", e.what(), 3);
  } catch (const std::exception& e) {
    return emit_error("internal", e.what(), 3);
  }
}
