#include "civest/distributions.hpp"

#include <cmath>
#include <numbers>

namespace civest {

namespace {
constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * ln(2*pi)

void check_dims(const char* op, Eigen::Index a, Eigen::Index b) {
  if (a != b) throw DimMismatchError(op, a, b);
}
}  // namespace

DiagGaussian::DiagGaussian(Eigen::VectorXd mu_in, Eigen::VectorXd sigma_in)
    : mu(std::move(mu_in)), sigma(std::move(sigma_in)) {
  check_dims("DiagGaussian: mu/sigma", mu.size(), sigma.size());
  if (!mu.allFinite() || !sigma.allFinite()) {
    throw NumericError("DiagGaussian: non-finite parameters");
  }
  if ((sigma.array() <= 0.0).any()) {
    throw NumericError("DiagGaussian: sigma must be strictly positive");
  }
}

double kl_std_normal(const DiagGaussian& q) {
  const auto mu2 = q.mu.array().square();
  const auto s2 = q.sigma.array().square();
  return 0.5 * (mu2 + s2 - 1.0 - s2.log()).sum();
}

double kl_diag_gaussians(const DiagGaussian& q, const DiagGaussian& p) {
  check_dims("kl_diag_gaussians", q.dim(), p.dim());
  const auto sq2 = q.sigma.array().square();
  const auto sp2 = p.sigma.array().square();
  const auto dmu2 = (q.mu - p.mu).array().square();
  return ((p.sigma.array() / q.sigma.array()).log() + (sq2 + dmu2) / (2.0 * sp2) - 0.5)
      .sum();
}

Eigen::VectorXd reparameterize(const DiagGaussian& q, const Eigen::VectorXd& noise) {
  check_dims("reparameterize: noise", q.dim(), noise.size());
  return q.mu.array() + q.sigma.array() * noise.array();
}

double bernoulli_logpmf(double p, int k) {
  if (k != 0 && k != 1) {
    throw DataError("bernoulli_logpmf: k must be 0 or 1, got " + std::to_string(k));
  }
  const double pc = std::min(std::max(p, kProbFloor), 1.0 - kProbFloor);
  return k == 1 ? std::log(pc) : std::log(1.0 - pc);
}

double gaussian_logpdf(double x, double mu, double sigma) {
  if (!(sigma > 0.0)) {
    throw NumericError("gaussian_logpdf: sigma must be positive, got " +
                       std::to_string(sigma));
  }
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - kHalfLog2Pi;
}

ad::Value kl_std_normal(ad::Value mu, ad::Value log_sigma) {
  using namespace ad;
  Value var = exp(scale(log_sigma, 2.0));
  Value elem = scale(sub(add_scalar(add(square(mu), var), -1.0), scale(log_sigma, 2.0)),
                     0.5);
  return row_sum(elem);
}

ad::Value kl_diag_gaussians(ad::Value mu_q, ad::Value log_sigma_q,
                            ad::Value mu_p, ad::Value log_sigma_p) {
  using namespace ad;
  Value log_ratio = sub(log_sigma_p, log_sigma_q);
  Value var_q = exp(scale(log_sigma_q, 2.0));
  Value dmu2 = square(sub(mu_q, mu_p));
  Value inv_var_p = exp(scale(log_sigma_p, -2.0));
  Value quad = scale(mul(add(var_q, dmu2), inv_var_p), 0.5);
  return row_sum(add_scalar(add(log_ratio, quad), -0.5));
}

ad::Value reparameterize(ad::Value mu, ad::Value log_sigma, const ad::Matrix& noise) {
  using namespace ad;
  if (noise.rows() != mu.rows() || noise.cols() != mu.cols()) {
    throw DimMismatchError("reparameterize: noise shape", mu.rows() * mu.cols(),
                           noise.rows() * noise.cols());
  }
  Value eps = mu.tape()->constant(noise);
  return add(mu, mul(exp(log_sigma), eps));
}

ad::Value gaussian_logpdf(ad::Value x, ad::Value mu, ad::Value log_sigma) {
  using namespace ad;
  Value z = mul(sub(x, mu), exp(neg(log_sigma)));
  Value elem = add_scalar(sub(scale(square(z), -0.5), log_sigma), -kHalfLog2Pi);
  return row_sum(elem);
}

ad::Value bernoulli_logpmf_logits(ad::Value logits, const ad::Matrix& targets) {
  using namespace ad;
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols()) {
    throw DimMismatchError("bernoulli_logpmf_logits: target shape",
                           logits.rows() * logits.cols(),
                           targets.rows() * targets.cols());
  }
  Tape& t = *logits.tape();
  Value p = clamp(sigmoid(logits), kProbFloor, 1.0 - kProbFloor);
  Value k = t.constant(targets);
  Value one_minus_k = t.constant((1.0 - targets.array()).matrix());
  Value elem = add(mul(k, log(p)), mul(one_minus_k, log(add_scalar(neg(p), 1.0))));
  return row_sum(elem);
}

}  // namespace civest
