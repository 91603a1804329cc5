#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "civest/dataset.hpp"
#include "civest/error.hpp"
#include "civest/harness.hpp"
#include "civest/model.hpp"
#include "doctest.h"
#include "json.hpp"

using civest::DataError;
using civest::Dataset;
using civest::EffectReport;
using civest::ExperimentConfig;
using Eigen::VectorXd;

namespace {

std::string scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "civest_tests" / name;
  std::filesystem::create_directories(dir);
  return dir.string();
}

ExperimentConfig fast_config(const std::string& out_name) {
  ExperimentConfig cfg;
  cfg.n = 200;
  cfg.replications = 2;
  cfg.train_frac = 0.7;
  cfg.model.hidden = {8};
  cfg.model.epochs = 3;
  cfg.model.batch_size = 128;
  cfg.stage.hidden = {8};
  cfg.stage.epochs = 3;
  cfg.stage.batch_size = 128;
  cfg.estimators = {"dvae_civ", "naive", "oracle_civ"};
  cfg.base_seed = 91;
  cfg.out_dir = scratch_dir(out_name);
  cfg.save_checkpoints = true;
  return cfg;
}

nlohmann::json strip_timings(nlohmann::json doc) {
  for (auto& rep : doc["replications"]) rep.erase("timings");
  return doc;
}

}  // namespace

TEST_CASE("error metrics on hand values") {
  CHECK(civest::metric_ace_error(2.5, 2.0) == 0.5);
  CHECK(civest::metric_ace_error(1.25, 2.0) == 0.75);
  CHECK(civest::metric_ace_error(2.0, 2.0) == 0.0);

  VectorXd y1(3), y0(3);
  y1 << 3.0, 4.0, 5.0;
  y0 << 1.0, 1.0, 1.0;
  const VectorXd perfect = y1 - y0;
  CHECK(civest::metric_pehe(perfect, y1, y0) == 0.0);

  // A constant zero prediction against a constant unit effect errs by one.
  VectorXd zero = VectorXd::Zero(3);
  VectorXd ones_hi(3), ones_lo(3);
  ones_hi << 2.0, 3.0, 4.0;
  ones_lo << 1.0, 2.0, 3.0;
  CHECK(civest::metric_pehe(zero, ones_hi, ones_lo) == doctest::Approx(1.0));
  CHECK_THROWS_AS(civest::metric_pehe(zero, y1, VectorXd::Zero(2)), civest::Error);
}

TEST_CASE("effect-heterogeneity error has an irreducible noise floor") {
  const Dataset ds = civest::generate_synthetic({30000, 5});
  // True effects are 2 + noise of variance 2, so even the best constant
  // prediction keeps an error of sqrt(2), and the oracle constant is 2.
  const VectorXd truth_const = VectorXd::Constant(ds.rows(), 2.0);
  const double at_truth = civest::metric_pehe(truth_const, ds.y1, ds.y0);
  CHECK(at_truth == doctest::Approx(std::sqrt(2.0)).epsilon(0.03));

  const double at_zero =
      civest::metric_pehe(VectorXd::Zero(ds.rows()), ds.y1, ds.y0);
  CHECK(at_zero == doctest::Approx(std::sqrt(6.0)).epsilon(0.03));

  for (double c : {0.0, 1.0, 2.0, 3.5}) {
    const double err =
        civest::metric_pehe(VectorXd::Constant(ds.rows(), c), ds.y1, ds.y0);
    CHECK(err >= std::sqrt(2.0) - 0.1);
  }
}

TEST_CASE("purpose-specific seeds are deterministic and decorrelated") {
  CHECK(civest::derive_seed(1, 2) == civest::derive_seed(1, 2));
  CHECK(civest::derive_seed(1, 2) != civest::derive_seed(1, 3));
  CHECK(civest::derive_seed(1, 2) != civest::derive_seed(2, 2));
  CHECK(civest::derive_seed(0, 0) != 0);  // mixing, not identity
  // Consecutive bases with the same salt stay far apart.
  std::set<std::uint64_t> seen;
  for (std::uint64_t base = 0; base < 100; ++base) {
    for (std::uint64_t salt = 0; salt < 4; ++salt) {
      seen.insert(civest::derive_seed(base, salt));
    }
  }
  CHECK(seen.size() == 400);
}

TEST_CASE("experiment configuration parsing is strict") {
  ExperimentConfig cfg = fast_config("cfgparse");
  cfg.validate();

  const ExperimentConfig back = ExperimentConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());

  auto j = cfg.to_json();
  j["misspelled"] = true;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), DataError);

  ExperimentConfig bad = cfg;
  bad.replications = 0;
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = cfg;
  bad.train_frac = 1.0;
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = cfg;
  bad.estimators = {"dvae_civ", "bogus"};
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = cfg;
  bad.estimators = {"wald"};
  bad.wald_instrument.clear();
  CHECK_THROWS_AS(bad.validate(), DataError);

  // Loading from disk honors defaults for absent keys.
  const std::string path = scratch_dir("cfgparse") + "/exp.json";
  std::ofstream(path) << "{\"n\": 321, \"replications\": 1}";
  const ExperimentConfig loaded = ExperimentConfig::load(path);
  CHECK(loaded.n == 321);
  CHECK(loaded.replications == 1);
  CHECK(loaded.train_frac == 0.7);
  CHECK(loaded.model.epochs == 200);
}

TEST_CASE("the configuration hash ignores non-scientific fields") {
  ExperimentConfig cfg = fast_config("hash_a");
  const std::string h = civest::config_hash(cfg);
  CHECK(h.rfind("fnv1a64:", 0) == 0);

  ExperimentConfig same = cfg;
  same.out_dir = "elsewhere";
  same.workers = 4;
  same.save_checkpoints = false;
  CHECK(civest::config_hash(same) == h);

  ExperimentConfig different = cfg;
  different.n += 1;
  CHECK(civest::config_hash(different) != h);
  different = cfg;
  different.model.seed += 1;
  CHECK(civest::config_hash(different) != h);
}

TEST_CASE("the output directory honors the environment override") {
  ExperimentConfig cfg = fast_config("outdir");
  ::setenv("CIVEST_OUT_DIR", "/tmp/civest_override", 1);
  CHECK(civest::resolve_out_dir(cfg) == "/tmp/civest_override");
  ::unsetenv("CIVEST_OUT_DIR");
  CHECK(civest::resolve_out_dir(cfg) == cfg.out_dir);
}

TEST_CASE("experiment runs are deterministic, hygienic and well aggregated") {
  const ExperimentConfig cfg = fast_config("exp_run");
  const EffectReport first = civest::run_experiment(cfg);
  const EffectReport second = civest::run_experiment(cfg);

  REQUIRE(first.replications.size() == 2);
  CHECK(first.failed == 0);
  for (const auto& rep : first.replications) {
    CAPTURE(rep.error);
    CHECK(rep.ok);
  }

  // Bytewise identical after removing wall-clock timings.
  const nlohmann::json a = strip_timings(first.to_json());
  const nlohmann::json b = strip_timings(second.to_json());
  CHECK(a == b);
  CHECK(a.dump() == b.dump());

  // Split hygiene: folds are disjoint and cover every row.
  for (const auto& rep : first.replications) {
    std::set<long> seen(rep.split.train.begin(), rep.split.train.end());
    for (long idx : rep.split.test) {
      CHECK(seen.count(idx) == 0);
      seen.insert(idx);
    }
    CHECK(seen.size() == static_cast<std::size_t>(cfg.n));
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == cfg.n - 1);
  }

  // Preprocessing hygiene: the persisted checkpoint's standardizer was
  // fitted on the training fold only.
  const auto& rep0 = first.replications[0];
  REQUIRE_FALSE(rep0.checkpoint_path.empty());
  const civest::TrainedModel model =
      civest::load_checkpoint(cfg.out_dir + "/" + rep0.checkpoint_path);
  const Dataset ds = civest::generate_synthetic({cfg.n, rep0.seed});
  const Dataset train_fold = ds.select(rep0.split.train);
  const civest::Standardizer expected = civest::Standardizer::fit(train_fold.x);
  CHECK((model.x_std.mean() - expected.mean()).norm() == 0.0);
  CHECK((model.x_std.stddev() - expected.stddev()).norm() == 0.0);
  CHECK(model.y_mean == train_fold.y.mean());

  // Aggregates agree with direct recomputation from the rows.
  for (const auto& agg : first.aggregates) {
    if (agg.metric != "ace_error") continue;
    std::vector<double> values;
    for (const auto& rep : first.replications) {
      for (const auto& row : rep.rows) {
        if (row.estimator == agg.estimator && row.fold == agg.fold && row.has_truth) {
          values.push_back(row.ace_error);
        }
      }
    }
    REQUIRE(static_cast<long>(values.size()) == agg.count);
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    CHECK(agg.mean == doctest::Approx(mean).epsilon(1e-12));
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd =
        values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
    CHECK(agg.stddev == doctest::Approx(sd).epsilon(1e-12));
  }

  // Written artifacts parse and carry one CSV line per estimate row.
  const auto [report_path, csv_path] = civest::write_report(first, cfg.out_dir);
  std::ifstream rin(report_path);
  REQUIRE(rin.good());
  nlohmann::json doc;
  rin >> doc;
  CHECK(doc["config_hash"] == first.hash);
  CHECK(doc["replications"].size() == 2);

  std::ifstream cin_file(csv_path);
  REQUIRE(cin_file.good());
  std::string line;
  long lines = 0;
  while (std::getline(cin_file, line)) ++lines;
  // Header plus (replications x estimators x folds) data lines.
  CHECK(lines == 1 + 2 * 3 * 2);
}

TEST_CASE("a failing estimator marks replications failed without aborting") {
  ExperimentConfig cfg = fast_config("exp_fail");
  cfg.estimators = {"wald"};
  cfg.wald_instrument = "S";  // continuous in the synthetic data: rejected
  cfg.wald_conditioning = {"X1", "X2"};
  cfg.validate();

  const EffectReport report = civest::run_experiment(cfg);
  CHECK(report.failed == 2);
  for (const auto& rep : report.replications) {
    CHECK_FALSE(rep.ok);
    CHECK_FALSE(rep.error.empty());
    CHECK(rep.rows.empty());
  }
  const nlohmann::json doc = report.to_json();
  CHECK(doc["failed_replications"] == 2);
}

TEST_CASE("reports round-trip through the documented JSON layout") {
  ExperimentConfig cfg = fast_config("exp_layout");
  cfg.replications = 1;
  cfg.estimators = {"naive"};
  const EffectReport report = civest::run_experiment(cfg);
  const nlohmann::json doc = report.to_json();

  CHECK(doc["schema_version"] == 1);
  CHECK(doc.contains("config"));
  CHECK(doc["config_hash"] == report.hash);
  REQUIRE(doc["replications"].is_array());
  const auto& rep = doc["replications"][0];
  CHECK(rep.contains("seed"));
  CHECK(rep.contains("estimates"));
  CHECK(rep.contains("timings"));
  CHECK(rep["timings"].contains("train_seconds"));
  CHECK(rep["timings"].contains("total_seconds"));
  for (const auto& est : rep["estimates"]) {
    CHECK(est.contains("estimator"));
    CHECK(est.contains("fold"));
    CHECK(est.contains("ace"));
  }
}
