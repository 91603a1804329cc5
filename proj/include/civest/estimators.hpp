#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "civest/dataset.hpp"
#include "civest/nn.hpp"

namespace civest {

// Wald denominators (instrument-arm treatment differences) smaller than this
// raise WeakInstrumentError; the ratio is undefined at zero.
inline constexpr double kWeakInstrumentThreshold = 0.05;

struct TwoStageConfig {
  std::vector<long> hidden = {64, 64};
  nn::Activation activation = nn::Activation::leaky_relu;
  long epochs = 200;         // stage-2 response training
  long stage1_epochs = 50;   // per-net treatment-probability training
  long crossfit_folds = 5;   // 1 disables cross-fitting
  long batch_size = 256;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TwoStageConfig from_json(const nlohmann::json& j);
};

// Two-stage instrumental-variable estimator for a binary treatment.
// Stage 1 fits pi(s, z) = P(W=1 | s, z) by log-loss; stage 2 fits the
// response h(w, z) by minimizing sum_i (y_i - [pi_i h(1,z_i) +
// (1-pi_i) h(0,z_i)])^2 -- the binary treatment makes the outer
// expectation an exact two-term sum.
//
// The pi_i fed to stage 2 are cross-fitted: rows are split into
// crossfit_folds folds and each row's probability comes from a net that
// never saw that row.  Using in-sample probabilities instead lets a
// flexible stage 1 memorize the realized treatments, which re-imports
// the very confounding the instrument is meant to remove (the fitted
// contrast then drifts toward the naive regression).  Stage-1 nets get a
// deliberately short budget (stage1_epochs) for the same reason.  A
// final stage-1 net trained on all rows backs propensity().
//
// Inputs are standardized with statistics fitted inside fit_two_stage;
// h works on the standardized outcome scale and cace() maps effects
// back to raw units.
struct TwoStageModel {
  nn::Mlp stage1;  // (s, z) -> treatment logit
  nn::Mlp stage2;  // (w, z) -> outcome value, standardized scale
  Standardizer s_std, z_std;
  double y_mean = 0.0;
  double y_std = 1.0;
  long d_s = 0, d_z = 0;
  double stage1_loss = 0.0;  // out-of-fold mean log-loss (in-sample when folds == 1)
  double stage2_loss = 0.0;  // final-epoch mean squared error

  // pi(s, z) clamped into [kProbFloor, 1 - kProbFloor].
  Eigen::VectorXd propensity(const Eigen::MatrixXd& s, const Eigen::MatrixXd& z);
};

// Fits both stages on the given (training-fold) arrays.  Errors: mismatched
// rows, non-binary or degenerate treatment (all rows treated or all rows
// untreated).
TwoStageModel fit_two_stage(const Eigen::MatrixXd& s, const Eigen::MatrixXd& z,
                            const Eigen::VectorXd& w, const Eigen::VectorXd& y,
                            const TwoStageConfig& cfg);

// h(1, z) - h(0, z) per row, in raw outcome units.
Eigen::VectorXd cace(TwoStageModel& model, const Eigen::MatrixXd& zrep);

// One estimator's output on one evaluation set.  `ace` is always the exact
// arithmetic mean of `cace`.
struct EffectEstimate {
  std::string estimator;
  double ace = 0.0;
  Eigen::VectorXd cace;
  double stage1_loss = 0.0;  // 0 when the estimator has no such stage
  double stage2_loss = 0.0;
};

// Per-row effects of a fitted two-stage model on an evaluation
// representation.
EffectEstimate estimate_from_model(TwoStageModel& model, const Eigen::MatrixXd& zrep,
                                   const std::string& tag);

// Least squares of y on (1, w, features); the w coefficient is reported as a
// constant effect.  Deliberately ignores latent confounding -- a baseline.
EffectEstimate naive_regression_ace(const Dataset& ds);

// Conditional Wald ratio [E(Y|S=1,Z) - E(Y|S=0,Z)] / [E(W|S=1,Z) - E(W|S=0,Z)]
// for a binary instrument column.  Discrete conditioning columns (integral
// values, at most 64 distinct tuples) are handled by exact stratification
// with sample-size weights; anything else by linear regression adjustment,
// where both conditional means are modelled linearly in (s, z) and the
// ratio of the two s-coefficients is the effect.  A denominator below
// kWeakInstrumentThreshold raises WeakInstrumentError naming the stratum.
EffectEstimate wald_conditional(const Dataset& ds, const std::string& s_col,
                                const std::vector<std::string>& z_cols);

// The known instrument column S and conditioning columns (X1, X2) of the
// synthetic benchmark, as (instrument, conditioning) matrices.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> oracle_civ_columns(const Dataset& ds);

// Two-stage estimation using oracle_civ_columns: fits on `train`, evaluates
// on `eval`.  The single-argument form fits and evaluates on the same data.
EffectEstimate oracle_civ_estimate(const Dataset& train, const Dataset& eval,
                                   const TwoStageConfig& cfg);
EffectEstimate oracle_civ_estimate(const Dataset& ds, const TwoStageConfig& cfg);

}  // namespace civest
