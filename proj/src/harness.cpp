#include "civest/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include "civest/error.hpp"
#include "civest/jsonio.hpp"

namespace civest {

namespace {

using jsonio::json;

constexpr std::uint64_t kSaltSplit = 1;
constexpr std::uint64_t kSaltModel = 2;
constexpr std::uint64_t kSaltStage = 3;
constexpr std::uint64_t kSaltOracle = 4;

std::mutex log_mutex;

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Scores one estimate on one fold.  Synthetic data is judged against the
// generator's population effect; CSV data with potential outcomes against
// the fold's empirical mean effect.
EstimateRow score(const EffectEstimate& est, const Dataset& fold_ds, const std::string& fold,
                  bool synthetic) {
  EstimateRow row;
  row.estimator = est.estimator;
  row.fold = fold;
  row.ace = est.ace;
  if (synthetic) {
    row.has_truth = true;
    row.ace_error = metric_ace_error(est.ace, kSyntheticAce);
  } else if (fold_ds.has_potentials()) {
    row.has_truth = true;
    row.ace_error = metric_ace_error(est.ace, (fold_ds.y1 - fold_ds.y0).mean());
  }
  if (fold_ds.has_potentials()) {
    row.has_pehe = true;
    row.pehe = metric_pehe(est.cace, fold_ds.y1, fold_ds.y0);
  }
  return row;
}

ReplicationResult run_one(long index, const ExperimentConfig& cfg, const Dataset* csv_data,
                          const std::string& out_dir) {
  const bool synthetic = csv_data == nullptr;
  ReplicationResult res;
  res.index = index;
  res.seed = cfg.base_seed + static_cast<std::uint64_t>(index);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    Dataset data = synthetic ? generate_synthetic({cfg.n, res.seed}) : *csv_data;
    res.split = split_indices(data.rows(), cfg.train_frac, derive_seed(res.seed, kSaltSplit));
    Dataset train_ds = data.select(res.split.train);
    Dataset test_ds = data.select(res.split.test);

    std::optional<TrainedModel> trained;
    if (contains(cfg.estimators, "dvae_civ")) {
      ModelConfig mc = cfg.model;
      mc.seed = derive_seed(res.seed, kSaltModel);
      const auto t_train = std::chrono::steady_clock::now();
      trained = train(train_ds, mc);
      res.train_seconds = seconds_since(t_train);
      if (cfg.save_checkpoints) {
        const std::string rel = "checkpoint_r" + std::to_string(index) + ".json";
        save_checkpoint((std::filesystem::path(out_dir) / rel).string(), *trained);
        res.checkpoint_path = rel;
      }
    }

    for (const auto& tag : cfg.estimators) {
      if (tag == "dvae_civ") {
        auto [s_tr, z_tr] = extract_representations(*trained, train_ds.x);
        auto [s_te, z_te] = extract_representations(*trained, test_ds.x);
        TwoStageConfig sc = cfg.stage;
        sc.seed = derive_seed(res.seed, kSaltStage);
        TwoStageModel ts = fit_two_stage(s_tr, z_tr, train_ds.w, train_ds.y, sc);
        res.rows.push_back(score(estimate_from_model(ts, z_tr, tag), train_ds, "within_sample",
                                 synthetic));
        res.rows.push_back(score(estimate_from_model(ts, z_te, tag), test_ds, "out_of_sample",
                                 synthetic));
      } else if (tag == "naive") {
        EffectEstimate within = naive_regression_ace(train_ds);
        EffectEstimate outer;
        outer.estimator = within.estimator;
        outer.cace = Eigen::VectorXd::Constant(test_ds.rows(), within.ace);
        outer.ace = outer.cace.mean();
        res.rows.push_back(score(within, train_ds, "within_sample", synthetic));
        res.rows.push_back(score(outer, test_ds, "out_of_sample", synthetic));
      } else if (tag == "oracle_civ") {
        auto tr = oracle_civ_columns(train_ds);
        auto ev = oracle_civ_columns(test_ds);
        TwoStageConfig sc = cfg.stage;
        sc.seed = derive_seed(res.seed, kSaltOracle);
        TwoStageModel om = fit_two_stage(tr.first, tr.second, train_ds.w, train_ds.y, sc);
        res.rows.push_back(score(estimate_from_model(om, tr.second, tag), train_ds,
                                 "within_sample", synthetic));
        res.rows.push_back(score(estimate_from_model(om, ev.second, tag), test_ds,
                                 "out_of_sample", synthetic));
      } else if (tag == "wald") {
        // The Wald ratio has no fitted state; it is evaluated on each fold.
        res.rows.push_back(score(wald_conditional(train_ds, cfg.wald_instrument,
                                                  cfg.wald_conditioning),
                                 train_ds, "within_sample", synthetic));
        res.rows.push_back(score(wald_conditional(test_ds, cfg.wald_instrument,
                                                  cfg.wald_conditioning),
                                 test_ds, "out_of_sample", synthetic));
      }
    }
    res.ok = true;
  } catch (const std::exception& e) {
    res.ok = false;
    res.error = e.what();
  }
  res.total_seconds = seconds_since(t0);
  return res;
}

}  // namespace

double metric_ace_error(double estimated, double truth) {
  if (!std::isfinite(estimated) || !std::isfinite(truth)) {
    throw NumericError("ACE error requires finite inputs");
  }
  return std::abs(truth - estimated);
}

double metric_pehe(const Eigen::VectorXd& cace_hat, const Eigen::VectorXd& y1,
                   const Eigen::VectorXd& y0) {
  if (y1.size() == 0 || y0.size() == 0) {
    throw DataError("PEHE needs potential outcomes; none are available");
  }
  if (cace_hat.size() != y1.size() || y1.size() != y0.size()) {
    throw DimMismatchError("PEHE input lengths", y1.size(), cace_hat.size());
  }
  return std::sqrt(((y1 - y0 - cace_hat).array().square()).mean());
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

void ExperimentConfig::validate() const {
  if (replications < 1) throw DataError("replications must be >= 1");
  if (!(train_frac > 0.0 && train_frac < 1.0)) {
    throw DataError("train fraction must lie strictly between 0 and 1");
  }
  if (workers < 1) throw DataError("workers must be >= 1");
  if (csv_path.empty()) {
    if (n < 10) throw DataError("synthetic sample size must be >= 10");
    if (!schema_path.empty()) throw DataError("schema_path given without csv_path");
  }
  if (estimators.empty()) throw DataError("estimator list must be non-empty");
  for (const auto& tag : estimators) {
    if (tag != "dvae_civ" && tag != "naive" && tag != "oracle_civ" && tag != "wald") {
      throw DataError("unknown estimator '" + tag + "'");
    }
  }
  if (contains(estimators, "wald") && wald_instrument.empty()) {
    throw DataError("wald estimator requires wald_instrument");
  }
  model.validate();
  stage.validate();
}

json ExperimentConfig::to_json() const {
  json j;
  j["csv_path"] = csv_path;
  j["schema_path"] = schema_path;
  j["n"] = n;
  j["replications"] = replications;
  j["train_frac"] = train_frac;
  j["model"] = model.to_json();
  j["stage"] = stage.to_json();
  j["estimators"] = estimators;
  j["wald_instrument"] = wald_instrument;
  j["wald_conditioning"] = wald_conditioning;
  j["base_seed"] = base_seed;
  j["out_dir"] = out_dir;
  j["workers"] = workers;
  j["save_checkpoints"] = save_checkpoints;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  const std::string ctx = "experiment config";
  jsonio::require_keys(j, ctx,
                       {"csv_path", "schema_path", "n", "replications", "train_frac", "model",
                        "stage", "estimators", "wald_instrument", "wald_conditioning",
                        "base_seed", "out_dir", "workers", "save_checkpoints"});
  ExperimentConfig cfg;
  cfg.csv_path = jsonio::get_or<std::string>(j, ctx, "csv_path", cfg.csv_path);
  cfg.schema_path = jsonio::get_or<std::string>(j, ctx, "schema_path", cfg.schema_path);
  cfg.n = jsonio::get_or<long>(j, ctx, "n", cfg.n);
  cfg.replications = jsonio::get_or<long>(j, ctx, "replications", cfg.replications);
  cfg.train_frac = jsonio::get_or<double>(j, ctx, "train_frac", cfg.train_frac);
  if (j.contains("model")) cfg.model = ModelConfig::from_json(j.at("model"));
  if (j.contains("stage")) cfg.stage = TwoStageConfig::from_json(j.at("stage"));
  cfg.estimators = jsonio::get_or<std::vector<std::string>>(j, ctx, "estimators", cfg.estimators);
  cfg.wald_instrument =
      jsonio::get_or<std::string>(j, ctx, "wald_instrument", cfg.wald_instrument);
  cfg.wald_conditioning = jsonio::get_or<std::vector<std::string>>(j, ctx, "wald_conditioning",
                                                                   cfg.wald_conditioning);
  cfg.base_seed = jsonio::get_or<std::uint64_t>(j, ctx, "base_seed", cfg.base_seed);
  cfg.out_dir = jsonio::get_or<std::string>(j, ctx, "out_dir", cfg.out_dir);
  cfg.workers = jsonio::get_or<long>(j, ctx, "workers", cfg.workers);
  cfg.save_checkpoints = jsonio::get_or<bool>(j, ctx, "save_checkpoints", cfg.save_checkpoints);
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  return from_json(jsonio::load_json_file(path));
}

std::string config_hash(const ExperimentConfig& cfg) {
  json j = cfg.to_json();
  j.erase("out_dir");
  j.erase("workers");
  j.erase("save_checkpoints");
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a 64
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string resolve_out_dir(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("CIVEST_OUT_DIR"); env && *env) return env;
  return cfg.out_dir;
}

EffectReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::string out_dir = resolve_out_dir(cfg);
  std::filesystem::create_directories(out_dir);

  std::optional<Dataset> csv_data;
  if (!cfg.csv_path.empty()) {
    DataSchema schema;
    if (!cfg.schema_path.empty()) schema = load_schema(cfg.schema_path);
    csv_data = load_csv_with_schema(cfg.csv_path, schema);
  }

  EffectReport report;
  report.config = cfg.to_json();
  report.hash = config_hash(cfg);
  report.replications.resize(static_cast<std::size_t>(cfg.replications));

  std::atomic<long> next{0};
  const long worker_count = std::min<long>(cfg.workers, cfg.replications);
  const Dataset* csv_ptr = csv_data ? &*csv_data : nullptr;
  auto worker = [&]() {
    for (long r = next.fetch_add(1); r < cfg.replications; r = next.fetch_add(1)) {
      ReplicationResult res = run_one(r, cfg, csv_ptr, out_dir);
      if (!res.ok) {
        std::lock_guard<std::mutex> lock(log_mutex);
        std::cerr << "[warn] replication " << r << " failed: " << res.error << "\n";
      }
      report.replications[static_cast<std::size_t>(r)] = std::move(res);
    }
  };
  if (worker_count <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(worker_count));
    for (long t = 0; t < worker_count; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  for (const auto& res : report.replications) {
    if (!res.ok) ++report.failed;
  }

  // Aggregate over successful replications, in configured estimator order.
  auto aggregate = [&](const std::string& estimator, const std::string& fold,
                       const std::string& metric) {
    std::vector<double> values;
    for (const auto& res : report.replications) {
      if (!res.ok) continue;
      for (const auto& row : res.rows) {
        if (row.estimator != estimator || row.fold != fold) continue;
        if (metric == "ace") {
          values.push_back(row.ace);
        } else if (metric == "ace_error" && row.has_truth) {
          values.push_back(row.ace_error);
        } else if (metric == "pehe" && row.has_pehe) {
          values.push_back(row.pehe);
        }
      }
    }
    if (values.empty()) return;
    AggregateRow agg;
    agg.estimator = estimator;
    agg.fold = fold;
    agg.metric = metric;
    agg.count = static_cast<long>(values.size());
    double sum = 0;
    for (double v : values) sum += v;
    agg.mean = sum / static_cast<double>(values.size());
    if (values.size() >= 2) {
      double ss = 0;
      for (double v : values) ss += (v - agg.mean) * (v - agg.mean);
      agg.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    report.aggregates.push_back(std::move(agg));
  };
  for (const auto& estimator : cfg.estimators) {
    for (const char* fold : {"within_sample", "out_of_sample"}) {
      for (const char* metric : {"ace", "ace_error", "pehe"}) {
        aggregate(estimator, fold, metric);
      }
    }
  }
  return report;
}

json EffectReport::to_json() const {
  json reps = json::array();
  for (const auto& res : replications) {
    json rows = json::array();
    for (const auto& row : res.rows) {
      json r;
      r["estimator"] = row.estimator;
      r["fold"] = row.fold;
      r["ace"] = row.ace;
      if (row.has_truth) r["ace_error"] = row.ace_error;
      if (row.has_pehe) r["pehe"] = row.pehe;
      rows.push_back(std::move(r));
    }
    json rep;
    rep["index"] = res.index;
    rep["seed"] = res.seed;
    rep["ok"] = res.ok;
    if (!res.ok) rep["error"] = res.error;
    rep["train_rows"] = res.split.train.size();
    rep["test_rows"] = res.split.test.size();
    if (!res.checkpoint_path.empty()) rep["checkpoint"] = res.checkpoint_path;
    rep["estimates"] = std::move(rows);
    rep["timings"] = {{"train_seconds", res.train_seconds},
                      {"total_seconds", res.total_seconds}};
    reps.push_back(std::move(rep));
  }
  json aggs = json::array();
  for (const auto& agg : aggregates) {
    aggs.push_back({{"estimator", agg.estimator},
                    {"fold", agg.fold},
                    {"metric", agg.metric},
                    {"mean", agg.mean},
                    {"std", agg.stddev},
                    {"count", agg.count}});
  }
  json j;
  j["schema_version"] = 1;
  j["config"] = config;
  j["config_hash"] = hash;
  j["replications"] = std::move(reps);
  j["aggregates"] = std::move(aggs);
  j["failed_replications"] = failed;
  return j;
}

std::pair<std::string, std::string> write_report(const EffectReport& report,
                                                 const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::string report_path = (std::filesystem::path(dir) / "report.json").string();
  {
    std::ofstream out(report_path);
    if (!out) throw DataError("cannot open '" + report_path + "' for writing");
    out << report.to_json().dump(2) << '\n';
    if (!out) throw DataError("write to '" + report_path + "' failed");
  }
  const std::string csv_path = (std::filesystem::path(dir) / "replications.csv").string();
  {
    std::ofstream out(csv_path);
    if (!out) throw DataError("cannot open '" + csv_path + "' for writing");
    out << "replication,seed,estimator,fold,ace,ace_error,pehe\n";
    for (const auto& res : report.replications) {
      if (!res.ok) continue;
      for (const auto& row : res.rows) {
        out << res.index << ',' << res.seed << ',' << row.estimator << ',' << row.fold << ','
            << format_double(row.ace) << ',';
        if (row.has_truth) out << format_double(row.ace_error);
        out << ',';
        if (row.has_pehe) out << format_double(row.pehe);
        out << '\n';
      }
    }
    if (!out) throw DataError("write to '" + csv_path + "' failed");
  }
  return {report_path, csv_path};
}

}  // namespace civest
