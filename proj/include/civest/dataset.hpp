#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "civest/dag.hpp"

namespace civest {

// Tabular dataset with a binary treatment and a scalar outcome.  Synthetic
// sets additionally carry both potential outcomes and the latent draws used
// to produce each row; real data loaded from CSV leaves those empty.
struct Dataset {
  Eigen::MatrixXd x;                      // n x p observed features
  Eigen::VectorXd w;                      // treatment, each entry 0 or 1
  Eigen::VectorXd y;                      // observed outcome
  Eigen::VectorXd y0, y1;                 // potential outcomes (size 0 if unknown)
  Eigen::MatrixXd hidden;                 // latent variables (cols 0 if unknown)
  std::vector<std::string> x_names;       // length p
  std::vector<std::string> hidden_names;  // length hidden.cols()
  bool binary_outcome = false;

  long rows() const { return x.rows(); }
  long feature_count() const { return x.cols(); }
  bool has_potentials() const { return y0.size() == rows() && y1.size() == rows(); }

  // Index of a named feature column; DataError if absent.
  long feature_index(const std::string& name) const;

  // Shape, naming and domain invariants; DataError on violation.
  void validate() const;

  // Row subset in the given order.  Indices out of range raise DataError.
  Dataset select(const std::vector<long>& rows) const;

  // Column subset of the features, keeping w/y/potentials/hidden intact.
  Dataset with_features(const std::vector<std::string>& names) const;
};

// Train/test partition as row indices into the source dataset.
struct Split {
  std::vector<long> train;
  std::vector<long> test;
};

// Shuffle 0..n-1 and cut off ceil(train_frac * n) rows for training.
// Requires 0 < train_frac < 1 and both folds non-empty.
Split split_indices(long n, double train_frac, std::uint64_t seed);

// Per-column affine map to zero mean / unit variance, fitted on one matrix
// (the training fold) and applied to any compatible matrix.  Columns with
// vanishing variance are shifted but left unscaled.
class Standardizer {
 public:
  Standardizer() = default;

  static Standardizer fit(const Eigen::MatrixXd& x);
  // Rebuild from stored statistics (checkpoint loading).
  static Standardizer from_moments(Eigen::VectorXd mean, Eigen::VectorXd stddev);

  Eigen::MatrixXd transform(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd inverse(const Eigen::MatrixXd& x) const;

  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::VectorXd& stddev() const { return std_; }

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd std_;
};

// Configuration for the synthetic benchmark sampler.
struct SynthConfig {
  long n = 2000;
  std::uint64_t seed = 0;
};

// Population average treatment effect of the sampler below.
inline constexpr double kSyntheticAce = 2.0;

// Draws a benchmark dataset from the fixed structural model below.  All
// noise terms are independent; eps_* have variance 0.5, everything else
// unit variance.
//
//   U, U1..U4 ~ N(0,1)                      (latent)
//   X1 = N(0,1) + 0.5 U2 + eps_1
//   X2 = N(0,1) + 0.5 U3 + eps_2
//   X3 = N(0,1) + 0.5 U4 + eps_3
//   S  = N(0,1) + 2 U1 + 1.5 X1 + 1.5 X2 + eps_s
//   X4 ~ N(1,1),  X5 ~ N(3,1)
//   P(W=1) = 1 / (1 + exp(2 - U - U1 - X3 - X4))
//   Y(w) = 2 + 2w + 2U + 2U3 + 2U4 + X4 + X5 + eps_w,  eps_0, eps_1 ~ N(0,1)
//
// Observed features are S, X1..X5 in that order; the average treatment
// effect is exactly 2 and the outcome-noise floor for per-sample effects
// is sqrt(2).  Both potential outcomes and the latent draws are retained.
Dataset generate_synthetic(const SynthConfig& cfg);

// Causal graph of the sampler above, with S the intended instrument.
// Node names match the feature/latent names used by generate_synthetic.
Dag synthetic_dag();

// CSV round trip.  Columns are features by default; the treatment and
// outcome columns are identified by name, "__y0"/"__y1" hold potential
// outcomes, and any other "__"-prefixed column is a latent variable.
// Values are written with enough digits to reproduce each double exactly.
void write_csv(const std::string& path, const Dataset& data);
Dataset load_csv(const std::string& path, const std::string& treatment_col = "w",
                 const std::string& outcome_col = "y");

// Sidecar describing how to read a CSV: which columns are the treatment and
// outcome, and whether the outcome is binary.
struct DataSchema {
  std::string treatment = "w";
  std::string outcome = "y";
  bool binary_outcome = false;
};

DataSchema load_schema(const std::string& path);
void write_schema(const std::string& path, const DataSchema& schema);

// load_csv with the column roles taken from the schema; sets the dataset's
// binary_outcome flag and validates the result.
Dataset load_csv_with_schema(const std::string& csv_path, const DataSchema& schema);

}  // namespace civest
