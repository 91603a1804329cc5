#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "civest/autodiff.hpp"
#include "civest/dataset.hpp"
#include "civest/nn.hpp"

namespace civest {

// Bounds on every log-sigma the networks emit (posteriors, decoder, outcome
// heads), keeping densities and KL terms finite.
inline constexpr double kLogSigmaMin = -8.0;
inline constexpr double kLogSigmaMax = 5.0;

enum class OutcomeKind { continuous, binary };

OutcomeKind outcome_kind_from_string(const std::string& s);
std::string to_string(OutcomeKind k);

struct ModelConfig {
  long d_s = 1;  // instrument representation width
  long d_c = 5;  // confounder representation width
  long d_f = 5;  // outcome-side representation width
  std::vector<long> hidden = {64, 64};
  nn::Activation activation = nn::Activation::leaky_relu;
  double alpha = 1.0;  // weight of the treatment auxiliary predictor
  double beta = 1.0;   // weight of the outcome auxiliary predictor
  OutcomeKind outcome = OutcomeKind::continuous;
  long epochs = 200;
  long batch_size = 256;
  double learning_rate = 1e-3;
  long mc_samples = 1;  // reparameterized draws per datum per step
  // Epochs over which the KL weight ramps linearly from ~0 to 1.  Without
  // the ramp the instrument representation collapses to its N(0, I) prior
  // early in training: the conditional prior p(C|X) makes information in C
  // free while S pays KL, so the optimizer routes everything through C
  // before the auxiliary treatment head can anchor any signal in S.  The
  // ramp always finishes before training ends, so the final objective is
  // the full one.  0 disables the ramp.
  long kl_warmup_epochs = 0;
  std::uint64_t seed = 0;

  // DataError on out-of-range fields.  epochs = 0 is allowed and means
  // "initialize only"; negative values are rejected.
  void validate() const;

  nlohmann::json to_json() const;
  // Strict parse: unknown keys are errors; absent keys keep defaults.
  static ModelConfig from_json(const nlohmann::json& j);
};

// Batch of diagonal Gaussians: row i of mu/sigma parameterizes one
// distribution over `dim()` coordinates.
struct DiagGaussianBatch {
  Eigen::MatrixXd mu;
  Eigen::MatrixXd sigma;

  long rows() const { return mu.rows(); }
  long dim() const { return mu.cols(); }
};

// Variational posteriors q(S|X), q(C|X), q(F|X) for one feature batch.
struct LatentPosteriors {
  DiagGaussianBatch qs, qc, qf;
};

// All networks of the model.  Every network is initialized regardless of the
// outcome kind so that a given seed yields identical shared weights whether
// the outcome is continuous or binary; only the active set is trained.
struct ModelParams {
  nn::Mlp enc_s, enc_c, enc_f;  // x -> (mu, log sigma) of each posterior
  nn::Mlp prior_c;              // x -> (mu, log sigma) of the prior p(C|X)
  nn::Mlp dec_x;                // (s, c, f) -> (mu, log sigma) per feature
  nn::Mlp head_w;               // (s, c) -> treatment logit
  nn::Mlp psi2, psi3;           // (c, f) -> outcome mean, treated / control arm
  nn::Mlp psi4, psi5;           // (c, f) -> outcome log sigma, treated / control arm
  nn::Mlp psi6;                 // (w, c, f) -> outcome logit (binary outcomes)
  long x_dim = 0;

  // Parameters trained under the given outcome kind.
  std::vector<nn::Param*> params(OutcomeKind kind);
  // Every parameter, for serialization and bulk bookkeeping.
  std::vector<nn::Param*> all_params();
  std::vector<const nn::Param*> all_params() const;
};

// Per-batch objective breakdown; all entries are means over the batch.
// `loss` is the minimized quantity: -ELBO - alpha*aux_w - beta*aux_y.
struct LossTerms {
  double loss = 0;
  double neg_elbo = 0;
  double recon = 0;  // E_q[log p(x|s,c,f)]
  double kl_s = 0, kl_c = 0, kl_f = 0;
  double aux_w = 0;  // E_q[log q(w|s,c)]
  double aux_y = 0;  // E_q[log q(y|w,c,f)]
};

struct TrainHistory {
  std::vector<LossTerms> epochs;  // sample-weighted means per epoch
};

// Standardized training batch; x columns match the model's x_dim.
struct Batch {
  Eigen::MatrixXd x;
  Eigen::VectorXd w;
  Eigen::VectorXd y;
};

// One N(0,1) draw per row and latent coordinate, fixed up front so that a
// loss evaluation is a deterministic function of the parameters (required
// for finite-difference gradient checks).
struct LatentNoise {
  Eigen::MatrixXd s, c, f;
};

ModelParams init_model(const ModelConfig& cfg, long x_dim, std::mt19937_64& rng);
// Convenience overload seeding a fresh generator from cfg.seed.
ModelParams init_model(const ModelConfig& cfg, long x_dim);

// Posterior parameters for a standardized feature batch; sigma is
// exp(log sigma) after clamping, so it lies within the clamp bounds.
LatentPosteriors encode(ModelParams& params, const Eigen::MatrixXd& x);

LatentNoise draw_noise(long n, const ModelConfig& cfg, std::mt19937_64& rng);

// Builds the full objective on the tape and returns the scalar loss node.
// `draws` supplies one LatentNoise per Monte-Carlo sample (size >= 1); the
// expectation terms are averaged over draws.  KL terms are closed-form and
// draw-independent.  When `terms` is non-null the numeric breakdown is
// stored there.  `kl_scale` multiplies the KL terms in the returned node
// (the warm-up ramp); the reported terms are always the unscaled values,
// and at the default scale of 1 the returned node is the full objective.
ad::Value build_loss(ad::Tape& tape, ModelParams& params, const Batch& batch,
                     const ModelConfig& cfg, const std::vector<LatentNoise>& draws,
                     LossTerms* terms = nullptr, double kl_scale = 1.0);

// Objective evaluations with cfg.mc_samples fresh draws from rng; no
// gradients are applied.  elbo() reports the bound through LossTerms
// (its value is -neg_elbo); loss() reports the full objective.
LossTerms elbo(ModelParams& params, const Batch& batch, const ModelConfig& cfg,
               std::mt19937_64& rng);
LossTerms loss(ModelParams& params, const Batch& batch, const ModelConfig& cfg,
               std::mt19937_64& rng);

// A trained model bundles the networks with the preprocessing fitted on the
// training fold: feature standardizer and (continuous outcomes) the outcome
// location/scale.  Applying it to new data never refits these.
struct TrainedModel {
  ModelConfig config;
  ModelParams params;
  Standardizer x_std;
  double y_mean = 0.0;
  double y_std = 1.0;
  std::vector<std::string> feature_names;
  TrainHistory history;
};

// Mini-batch training of the full objective on the given (training-fold)
// dataset.  Deterministic for a fixed cfg.seed on one platform.  A
// non-finite loss or gradient aborts with a NumericError naming the epoch
// and batch.
TrainedModel train(const Dataset& train_data, const ModelConfig& cfg);

// Downstream representations from raw (unstandardized) features: posterior
// means of q(S|X) and the concatenated posterior means of q(C|X), q(F|X).
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> extract_representations(
    TrainedModel& model, const Eigen::MatrixXd& x_raw);

// JSON checkpoint holding config, preprocessing statistics and every weight
// array.  load(save(m)) reproduces all numbers bit-exactly.
void save_checkpoint(const std::string& path, const TrainedModel& model);
TrainedModel load_checkpoint(const std::string& path);

void save_history(const std::string& path, const TrainHistory& history);

}  // namespace civest
