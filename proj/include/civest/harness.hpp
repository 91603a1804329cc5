#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "civest/dataset.hpp"
#include "civest/estimators.hpp"
#include "civest/model.hpp"

namespace civest {

// Absolute average-causal-effect error |truth - estimated|.
double metric_ace_error(double estimated, double truth);

// Root precision-in-estimation-of-heterogeneous-effects:
// sqrt(mean(((y1 - y0) - cace_hat)^2)).  Requires potential outcomes.
double metric_pehe(const Eigen::VectorXd& cace_hat, const Eigen::VectorXd& y1,
                   const Eigen::VectorXd& y0);

// Decorrelated stream seed for one purpose (salt) under one replication
// seed; splitmix64-style mixing so neighbouring bases do not collide.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt);

struct ExperimentConfig {
  // Data source: synthetic generator when csv_path is empty, otherwise the
  // CSV (with optional schema sidecar) loaded once and re-split per
  // replication.
  std::string csv_path;
  std::string schema_path;
  long n = 2000;  // synthetic sample size
  long replications = 10;
  double train_frac = 0.7;
  ModelConfig model;
  TwoStageConfig stage;
  // Known tags: dvae_civ, naive, oracle_civ, wald.
  std::vector<std::string> estimators = {"dvae_civ", "naive", "oracle_civ"};
  std::string wald_instrument;             // required when "wald" is listed
  std::vector<std::string> wald_conditioning;
  std::uint64_t base_seed = 0;
  std::string out_dir = "civest_out";
  long workers = 1;
  bool save_checkpoints = true;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
};

// Hash of the scientific configuration (everything except out_dir, workers
// and save_checkpoints, which cannot change the numbers).
std::string config_hash(const ExperimentConfig& cfg);

// cfg.out_dir unless the CIVEST_OUT_DIR environment variable is set.
std::string resolve_out_dir(const ExperimentConfig& cfg);

struct EstimateRow {
  std::string estimator;
  std::string fold;  // "within_sample" or "out_of_sample"
  double ace = 0.0;
  double ace_error = 0.0;
  double pehe = 0.0;
  bool has_truth = false;
  bool has_pehe = false;
};

struct ReplicationResult {
  long index = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  Split split;  // retained in memory for fold-hygiene audits
  std::vector<EstimateRow> rows;
  double train_seconds = 0.0;
  double total_seconds = 0.0;
  std::string checkpoint_path;  // relative to the output directory
};

struct AggregateRow {
  std::string estimator;
  std::string fold;
  std::string metric;  // "ace", "ace_error" or "pehe"
  double mean = 0.0;
  double stddev = 0.0;  // sample (n-1) convention; 0 when count < 2
  long count = 0;
};

struct EffectReport {
  nlohmann::json config;  // resolved configuration as persisted
  std::string hash;
  std::vector<ReplicationResult> replications;
  std::vector<AggregateRow> aggregates;
  long failed = 0;

  // Full report document.  Timings live under per-replication "timings"
  // keys so byte-comparisons can strip the only nondeterministic part.
  nlohmann::json to_json() const;
};

// Runs every replication (seed_r = base_seed + r): generate or load data,
// split, train on the training fold only, estimate, score both folds.
// Failed replications are recorded with their error and excluded from the
// aggregates with a warning on standard error; nothing is retried.
// Replications execute on up to cfg.workers threads.
EffectReport run_experiment(const ExperimentConfig& cfg);

// Persists report.json and replications.csv into dir (created if needed);
// returns their paths.
std::pair<std::string, std::string> write_report(const EffectReport& report,
                                                 const std::string& dir);

}  // namespace civest
