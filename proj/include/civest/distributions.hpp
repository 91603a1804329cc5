#pragma once

#include <Eigen/Core>

#include "civest/autodiff.hpp"

namespace civest {

// Floor applied to Bernoulli probabilities so log-likelihoods stay finite.
inline constexpr double kProbFloor = 1e-6;

// Diagonal Gaussian given by mean and standard deviation vectors.
struct DiagGaussian {
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma;

  DiagGaussian(Eigen::VectorXd mu_in, Eigen::VectorXd sigma_in);
  Eigen::Index dim() const { return mu.size(); }
};

// KL(q || N(0, I)) = 1/2 sum_i (mu_i^2 + sigma_i^2 - 1 - ln sigma_i^2).
double kl_std_normal(const DiagGaussian& q);

// Closed-form KL between two diagonal Gaussians; zero iff q == p.
double kl_diag_gaussians(const DiagGaussian& q, const DiagGaussian& p);

// mu + sigma .* noise.
Eigen::VectorXd reparameterize(const DiagGaussian& q, const Eigen::VectorXd& noise);

// log P(K = k) for K ~ Bernoulli(p), with p clamped to [kProbFloor, 1-kProbFloor].
// k must be 0 or 1.
double bernoulli_logpmf(double p, int k);

double gaussian_logpdf(double x, double mu, double sigma);

// ---- differentiable batch variants ---------------------------------------
// Rows are samples; distribution parameters are (mu, log sigma) matrices on a
// tape. Results reduce over latent dimensions: one value per row.

ad::Value kl_std_normal(ad::Value mu, ad::Value log_sigma);
ad::Value kl_diag_gaussians(ad::Value mu_q, ad::Value log_sigma_q,
                            ad::Value mu_p, ad::Value log_sigma_p);
// Sample mu + exp(log_sigma) .* noise; gradient flows to mu and log_sigma,
// the noise enters as a constant.
ad::Value reparameterize(ad::Value mu, ad::Value log_sigma, const ad::Matrix& noise);
// Sum over columns of elementwise Gaussian log density of x.
ad::Value gaussian_logpdf(ad::Value x, ad::Value mu, ad::Value log_sigma);
// Bernoulli log likelihood from logits against 0/1 targets, probability
// clamped at kProbFloor; one value per row.
ad::Value bernoulli_logpmf_logits(ad::Value logits, const ad::Matrix& targets);

}  // namespace civest
