#include "civest/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "civest/autodiff.hpp"
#include "civest/distributions.hpp"
#include "civest/error.hpp"
#include "civest/jsonio.hpp"

namespace civest {

namespace {

using jsonio::json;

void check_binary(const Eigen::VectorXd& v, const std::string& what) {
  long ones = 0;
  for (long i = 0; i < v.size(); ++i) {
    if (v(i) != 0.0 && v(i) != 1.0) {
      throw DataError(what + " at row " + std::to_string(i) + " is not 0 or 1");
    }
    if (v(i) == 1.0) ++ones;
  }
  if (ones == 0 || ones == v.size()) {
    throw DataError(what + " is degenerate: every row has the same value");
  }
}

Eigen::MatrixXd with_treatment(double w, const Eigen::MatrixXd& z) {
  Eigen::MatrixXd out(z.rows(), z.cols() + 1);
  out.col(0).setConstant(w);
  out.rightCols(z.cols()) = z;
  return out;
}

// Least squares with an explicit rank check.
Eigen::VectorXd ols_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                          const std::string& what) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < a.cols()) {
    throw NumericError("rank-deficient design matrix in " + what);
  }
  return qr.solve(b);
}

std::string format_stratum(const std::vector<double>& key) {
  if (key.empty()) return "all";
  std::ostringstream out;
  out << "Z=(";
  for (std::size_t i = 0; i < key.size(); ++i) {
    if (i) out << ",";
    out << key[i];
  }
  out << ")";
  return out.str();
}

struct EpochPlan {
  std::vector<long> order;
  long batch_size = 0;

  EpochPlan(long n, long batch) : order(n), batch_size(std::min(batch, n)) {
    std::iota(order.begin(), order.end(), 0L);
  }
};

}  // namespace

void TwoStageConfig::validate() const {
  for (long h : hidden) {
    if (h < 1) throw DataError("hidden layer sizes must be >= 1");
  }
  if (epochs < 0) throw DataError("epochs must be >= 0");
  if (stage1_epochs < 0) throw DataError("stage1 epochs must be >= 0");
  if (crossfit_folds < 1) throw DataError("crossfit folds must be >= 1");
  if (batch_size < 1) throw DataError("batch size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw DataError("learning rate must be finite and > 0");
  }
}

json TwoStageConfig::to_json() const {
  json j;
  j["hidden"] = hidden;
  j["activation"] = nn::to_string(activation);
  j["epochs"] = epochs;
  j["stage1_epochs"] = stage1_epochs;
  j["crossfit_folds"] = crossfit_folds;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["seed"] = seed;
  return j;
}

TwoStageConfig TwoStageConfig::from_json(const json& j) {
  const std::string ctx = "two-stage config";
  jsonio::require_keys(j, ctx,
                       {"hidden", "activation", "epochs", "stage1_epochs", "crossfit_folds",
                        "batch_size", "learning_rate", "seed"});
  TwoStageConfig cfg;
  cfg.hidden = jsonio::get_or<std::vector<long>>(j, ctx, "hidden", cfg.hidden);
  cfg.activation = nn::activation_from_string(
      jsonio::get_or<std::string>(j, ctx, "activation", nn::to_string(cfg.activation)));
  cfg.epochs = jsonio::get_or<long>(j, ctx, "epochs", cfg.epochs);
  cfg.stage1_epochs = jsonio::get_or<long>(j, ctx, "stage1_epochs", cfg.stage1_epochs);
  cfg.crossfit_folds = jsonio::get_or<long>(j, ctx, "crossfit_folds", cfg.crossfit_folds);
  cfg.batch_size = jsonio::get_or<long>(j, ctx, "batch_size", cfg.batch_size);
  cfg.learning_rate = jsonio::get_or<double>(j, ctx, "learning_rate", cfg.learning_rate);
  cfg.seed = jsonio::get_or<std::uint64_t>(j, ctx, "seed", cfg.seed);
  cfg.validate();
  return cfg;
}

Eigen::VectorXd TwoStageModel::propensity(const Eigen::MatrixXd& s, const Eigen::MatrixXd& z) {
  if (s.rows() != z.rows()) {
    throw DimMismatchError("propensity input rows", s.rows(), z.rows());
  }
  Eigen::MatrixXd in(s.rows(), s.cols() + z.cols());
  in << s_std.transform(s), z_std.transform(z);
  const Eigen::VectorXd logits = stage1.forward(in).col(0);
  return (1.0 / (1.0 + (-logits.array()).exp()))
      .max(kProbFloor)
      .min(1.0 - kProbFloor)
      .matrix();
}

namespace {

// One stage-1 net fitted by log-loss on the given subset of rows.
nn::Mlp train_stage1_net(const Eigen::MatrixXd& in1, const Eigen::VectorXd& w,
                         const std::vector<long>& rows, const TwoStageConfig& cfg,
                         std::mt19937_64& rng) {
  nn::Mlp net("stage1", in1.cols(), cfg.hidden, 1, cfg.activation, rng);
  nn::AdamConfig opt_cfg;
  opt_cfg.lr = cfg.learning_rate;
  nn::Adam opt(net.params(), opt_cfg);
  std::vector<long> order = rows;
  const long n = static_cast<long>(order.size());
  const long batch = std::min(cfg.batch_size, n);
  for (long epoch = 0; epoch < cfg.stage1_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (long start = 0; start < n; start += batch) {
      const long rows_here = std::min(batch, n - start);
      Eigen::MatrixXd xb(rows_here, in1.cols());
      Eigen::MatrixXd wb(rows_here, 1);
      for (long i = 0; i < rows_here; ++i) {
        xb.row(i) = in1.row(order[start + i]);
        wb(i, 0) = w(order[start + i]);
      }
      ad::Tape tape;
      ad::Value logits = net.forward(tape, tape.constant(xb));
      ad::Value loss = ad::neg(ad::mean_all(bernoulli_logpmf_logits(logits, wb)));
      if (!std::isfinite(loss.item())) {
        throw NumericError("non-finite stage-1 loss (epoch " + std::to_string(epoch) + ")");
      }
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
    }
  }
  return net;
}

Eigen::VectorXd clipped_sigmoid(const Eigen::VectorXd& logits) {
  return (1.0 / (1.0 + (-logits.array()).exp()))
      .max(kProbFloor)
      .min(1.0 - kProbFloor)
      .matrix();
}

}  // namespace

TwoStageModel fit_two_stage(const Eigen::MatrixXd& s, const Eigen::MatrixXd& z,
                            const Eigen::VectorXd& w, const Eigen::VectorXd& y,
                            const TwoStageConfig& cfg) {
  cfg.validate();
  const long n = s.rows();
  if (n < 2) throw DataError("two-stage fit needs at least 2 rows");
  if (z.rows() != n || w.size() != n || y.size() != n) {
    throw DimMismatchError("two-stage input rows", n,
                           std::min<long>(z.rows(), std::min<long>(w.size(), y.size())));
  }
  if (s.cols() < 1 || z.cols() < 1) throw DataError("instrument and conditioning sets must be non-empty");
  check_binary(w, "treatment");

  TwoStageModel model;
  model.d_s = s.cols();
  model.d_z = z.cols();
  model.s_std = Standardizer::fit(s);
  model.z_std = Standardizer::fit(z);
  const Eigen::MatrixXd ss = model.s_std.transform(s);
  const Eigen::MatrixXd zs = model.z_std.transform(z);

  model.y_mean = y.mean();
  const double var = (y.array() - model.y_mean).square().sum() / double(n - 1);
  if (std::sqrt(var) > 1e-12) model.y_std = std::sqrt(var);
  const Eigen::VectorXd ys = (y.array() - model.y_mean) / model.y_std;

  std::mt19937_64 rng(cfg.seed);
  model.stage2 = nn::Mlp("stage2", 1 + model.d_z, cfg.hidden, 1, cfg.activation, rng);

  Eigen::MatrixXd in1(n, model.d_s + model.d_z);
  in1 << ss, zs;

  nn::AdamConfig opt_cfg;
  opt_cfg.lr = cfg.learning_rate;
  EpochPlan plan(n, cfg.batch_size);

  // Stage 1: cross-fitted treatment probabilities.  Each row's pi comes
  // from a net trained without that row, so pi_i cannot encode w_i.
  const long folds = std::min(cfg.crossfit_folds, n);
  Eigen::VectorXd pi(n);
  if (folds == 1) {
    std::vector<long> all(n);
    std::iota(all.begin(), all.end(), 0L);
    model.stage1 = train_stage1_net(in1, w, all, cfg, rng);
    pi = clipped_sigmoid(model.stage1.forward(in1).col(0));
  } else {
    std::vector<long> perm(n);
    std::iota(perm.begin(), perm.end(), 0L);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (long k = 0; k < folds; ++k) {
      std::vector<long> held, rest;
      for (long i = 0; i < n; ++i) {
        (i % folds == k ? held : rest).push_back(perm[i]);
      }
      nn::Mlp net = train_stage1_net(in1, w, rest, cfg, rng);
      Eigen::MatrixXd held_in(static_cast<long>(held.size()), in1.cols());
      for (std::size_t i = 0; i < held.size(); ++i) held_in.row(i) = in1.row(held[i]);
      const Eigen::VectorXd held_pi = clipped_sigmoid(net.forward(held_in).col(0));
      for (std::size_t i = 0; i < held.size(); ++i) pi(held[i]) = held_pi(i);
    }
    // Full-data net for downstream propensity queries.
    std::vector<long> all(n);
    std::iota(all.begin(), all.end(), 0L);
    model.stage1 = train_stage1_net(in1, w, all, cfg, rng);
  }
  {
    double loss_sum = 0.0;
    for (long i = 0; i < n; ++i) {
      loss_sum -= w(i) * std::log(pi(i)) + (1.0 - w(i)) * std::log(1.0 - pi(i));
    }
    model.stage1_loss = loss_sum / double(n);
  }

  // Stage 2: response network against the propensity-mixed prediction.
  {
    nn::Adam opt(model.stage2.params(), opt_cfg);
    for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::shuffle(plan.order.begin(), plan.order.end(), rng);
      double loss_sum = 0.0;
      for (long start = 0; start < n; start += plan.batch_size) {
        const long rows = std::min(plan.batch_size, n - start);
        Eigen::MatrixXd zb(rows, model.d_z);
        Eigen::MatrixXd pib(rows, 1);
        Eigen::MatrixXd yb(rows, 1);
        for (long i = 0; i < rows; ++i) {
          const long r = plan.order[start + i];
          zb.row(i) = zs.row(r);
          pib(i, 0) = pi(r);
          yb(i, 0) = ys(r);
        }
        ad::Tape tape;
        ad::Value h1 = model.stage2.forward(tape, tape.constant(with_treatment(1.0, zb)));
        ad::Value h0 = model.stage2.forward(tape, tape.constant(with_treatment(0.0, zb)));
        ad::Value pv = tape.constant(pib);
        ad::Value pred = ad::add(ad::mul(pv, h1),
                                 ad::mul(ad::add_scalar(ad::neg(pv), 1.0), h0));
        ad::Value loss = ad::mean_all(ad::square(ad::sub(tape.constant(yb), pred)));
        if (!std::isfinite(loss.item())) {
          throw NumericError("non-finite stage-2 loss (epoch " + std::to_string(epoch) + ")");
        }
        loss_sum += loss.item() * double(rows);
        opt.zero_grad();
        tape.backward(loss);
        opt.step();
      }
      model.stage2_loss = loss_sum / double(n);
    }
  }
  return model;
}

Eigen::VectorXd cace(TwoStageModel& model, const Eigen::MatrixXd& zrep) {
  if (zrep.cols() != model.d_z) {
    throw DimMismatchError("cace conditioning width", model.d_z, zrep.cols());
  }
  const Eigen::MatrixXd zs = model.z_std.transform(zrep);
  const Eigen::VectorXd h1 = model.stage2.forward(with_treatment(1.0, zs)).col(0);
  const Eigen::VectorXd h0 = model.stage2.forward(with_treatment(0.0, zs)).col(0);
  return (h1 - h0) * model.y_std;
}

EffectEstimate estimate_from_model(TwoStageModel& model, const Eigen::MatrixXd& zrep,
                                   const std::string& tag) {
  EffectEstimate est;
  est.estimator = tag;
  est.cace = cace(model, zrep);
  est.ace = est.cace.mean();
  est.stage1_loss = model.stage1_loss;
  est.stage2_loss = model.stage2_loss;
  return est;
}

EffectEstimate naive_regression_ace(const Dataset& ds) {
  ds.validate();
  const long n = ds.rows();
  const long p = ds.feature_count();
  if (n <= p + 2) {
    throw DataError("naive regression needs more rows than coefficients");
  }
  Eigen::MatrixXd a(n, p + 2);
  a.col(0).setOnes();
  a.col(1) = ds.w;
  a.rightCols(p) = ds.x;
  const Eigen::VectorXd coef = ols_solve(a, ds.y, "naive regression");
  EffectEstimate est;
  est.estimator = "naive";
  est.cace = Eigen::VectorXd::Constant(n, coef(1));
  est.ace = est.cace.mean();
  return est;
}

EffectEstimate wald_conditional(const Dataset& ds, const std::string& s_col,
                                const std::vector<std::string>& z_cols) {
  ds.validate();
  const long n = ds.rows();
  const Eigen::VectorXd s = ds.x.col(ds.feature_index(s_col));
  for (long i = 0; i < n; ++i) {
    if (s(i) != 0.0 && s(i) != 1.0) {
      throw DataError("instrument column '" + s_col + "' is not binary at row " +
                      std::to_string(i));
    }
  }
  Eigen::MatrixXd z(n, static_cast<long>(z_cols.size()));
  for (long j = 0; j < z.cols(); ++j) {
    z.col(j) = ds.x.col(ds.feature_index(z_cols[j]));
  }

  // Discrete conditioning sets are stratified exactly; continuous ones fall
  // back to linear regression adjustment of both conditional means.
  bool discrete = true;
  for (long j = 0; j < z.cols() && discrete; ++j) {
    for (long i = 0; i < n; ++i) {
      const double v = z(i, j);
      if (v != std::floor(v) || std::abs(v) > 1e6) {
        discrete = false;
        break;
      }
    }
  }

  EffectEstimate est;
  est.estimator = "wald";

  if (discrete) {
    std::map<std::vector<double>, std::vector<long>> strata;
    for (long i = 0; i < n; ++i) {
      std::vector<double> key(z.cols());
      for (long j = 0; j < z.cols(); ++j) key[j] = z(i, j);
      strata[key].push_back(i);
    }
    if (strata.size() > 64) {
      discrete = false;  // too granular to stratify; treat as continuous
    } else {
      est.cace.resize(n);
      for (const auto& [key, rows] : strata) {
        const std::string label = format_stratum(key);
        double y1 = 0, y0 = 0, w1 = 0, w0 = 0;
        long n1 = 0, n0 = 0;
        for (long r : rows) {
          if (s(r) == 1.0) {
            y1 += ds.y(r);
            w1 += ds.w(r);
            ++n1;
          } else {
            y0 += ds.y(r);
            w0 += ds.w(r);
            ++n0;
          }
        }
        if (n1 == 0 || n0 == 0) {
          throw DataError("stratum '" + label + "' lacks an instrument arm");
        }
        const double num = y1 / n1 - y0 / n0;
        const double den = w1 / n1 - w0 / n0;
        if (std::abs(den) < kWeakInstrumentThreshold) {
          throw WeakInstrumentError(label, std::abs(den));
        }
        for (long r : rows) est.cace(r) = num / den;
      }
      est.ace = est.cace.mean();
      return est;
    }
  }

  // Regression adjustment: linear conditional means in (s, z); the ratio of
  // the two s-coefficients is the (constant) conditional Wald effect.
  Eigen::MatrixXd a(n, 2 + z.cols());
  a.col(0).setOnes();
  a.col(1) = s;
  a.rightCols(z.cols()) = z;
  const double tau_y = ols_solve(a, ds.y, "Wald outcome regression")(1);
  const double tau_w = ols_solve(a, ds.w, "Wald treatment regression")(1);
  if (std::abs(tau_w) < kWeakInstrumentThreshold) {
    throw WeakInstrumentError("regression-adjusted", std::abs(tau_w));
  }
  est.cace = Eigen::VectorXd::Constant(n, tau_y / tau_w);
  est.ace = est.cace.mean();
  return est;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> oracle_civ_columns(const Dataset& ds) {
  std::pair<Eigen::MatrixXd, Eigen::MatrixXd> out;
  out.first.resize(ds.rows(), 1);
  out.first.col(0) = ds.x.col(ds.feature_index("S"));
  out.second.resize(ds.rows(), 2);
  out.second.col(0) = ds.x.col(ds.feature_index("X1"));
  out.second.col(1) = ds.x.col(ds.feature_index("X2"));
  return out;
}

EffectEstimate oracle_civ_estimate(const Dataset& train, const Dataset& eval,
                                   const TwoStageConfig& cfg) {
  auto tr = oracle_civ_columns(train);
  auto ev = oracle_civ_columns(eval);
  TwoStageModel model = fit_two_stage(tr.first, tr.second, train.w, train.y, cfg);
  return estimate_from_model(model, ev.second, "oracle_civ");
}

EffectEstimate oracle_civ_estimate(const Dataset& ds, const TwoStageConfig& cfg) {
  return oracle_civ_estimate(ds, ds, cfg);
}

}  // namespace civest
