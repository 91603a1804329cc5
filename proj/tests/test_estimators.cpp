#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "civest/dataset.hpp"
#include "civest/distributions.hpp"
#include "civest/error.hpp"
#include "civest/estimators.hpp"
#include "doctest.h"

using civest::DataError;
using civest::Dataset;
using civest::EffectEstimate;
using civest::TwoStageConfig;
using civest::TwoStageModel;
using civest::WeakInstrumentError;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Assembles a dataset holding one binary instrument feature "S" plus
// optional conditioning features, next to treatment and outcome columns.
Dataset make_dataset(const std::vector<std::string>& names,
                     const MatrixXd& x, const VectorXd& w, const VectorXd& y) {
  Dataset ds;
  ds.x = x;
  ds.x_names = names;
  ds.w = w;
  ds.y = y;
  ds.validate();
  return ds;
}

TwoStageConfig small_stage() {
  TwoStageConfig cfg;
  cfg.hidden = {32};
  cfg.epochs = 60;
  cfg.batch_size = 256;
  cfg.seed = 12;
  return cfg;
}

}  // namespace

TEST_CASE("hand-computable Wald table gives exactly two") {
  // P(W=1|S=1) = 0.8, P(W=1|S=0) = 0.2, E[Y|S=1] = 1.6, E[Y|S=0] = 0.4:
  // the ratio (1.6 - 0.4) / (0.8 - 0.2) is 2.
  const long n = 20;
  MatrixXd x(n, 1);
  VectorXd w(n), y(n);
  for (long i = 0; i < 10; ++i) {  // instrument arm S=1
    x(i, 0) = 1.0;
    w(i) = i < 8 ? 1.0 : 0.0;
    y(i) = 1.6;
  }
  for (long i = 10; i < 20; ++i) {  // instrument arm S=0
    x(i, 0) = 0.0;
    w(i) = i < 12 ? 1.0 : 0.0;
    y(i) = 0.4;
  }
  const Dataset ds = make_dataset({"S"}, x, w, y);
  const EffectEstimate est = civest::wald_conditional(ds, "S", {});
  CHECK(std::abs(est.ace - 2.0) < 1e-12);
  REQUIRE(est.cace.size() == n);
  CHECK(std::abs(est.cace.maxCoeff() - 2.0) < 1e-12);
  CHECK(std::abs(est.cace.minCoeff() - 2.0) < 1e-12);
  CHECK(est.ace == est.cace.mean());
}

TEST_CASE("coinciding instrument arms trip the weak-instrument guard") {
  const long n = 40;
  MatrixXd x(n, 1);
  VectorXd w(n), y(n);
  for (long i = 0; i < n; ++i) {
    x(i, 0) = i < 20 ? 1.0 : 0.0;
    w(i) = i % 2 == 0 ? 1.0 : 0.0;  // identical treatment rate in both arms
    y(i) = static_cast<double>(i);
  }
  const Dataset ds = make_dataset({"S"}, x, w, y);
  try {
    civest::wald_conditional(ds, "S", {});
    FAIL("expected WeakInstrumentError");
  } catch (const WeakInstrumentError& e) {
    CHECK(std::string(e.what()).find("weak") != std::string::npos);
    CHECK_FALSE(e.stratum().empty());
  }
}

TEST_CASE("an instrument identical to the treatment recovers the plain contrast") {
  const long n = 30;
  MatrixXd x(n, 1);
  VectorXd w(n), y(n);
  for (long i = 0; i < n; ++i) {
    w(i) = i < 12 ? 1.0 : 0.0;
    x(i, 0) = w(i);
    y(i) = 3.0 * w(i);
  }
  const Dataset ds = make_dataset({"S"}, x, w, y);
  const EffectEstimate est = civest::wald_conditional(ds, "S", {});
  CHECK(std::abs(est.ace - 3.0) < 1e-12);
}

TEST_CASE("stratified Wald weights strata by their size") {
  // Stratum Z=0: effect 2 (treatment moves 0.8 -> 0.2 of the arm), stratum
  // Z=1: effect 4.  Equal sizes, so the weighted effect is 3.
  const long n = 20;
  MatrixXd x(n, 2);
  VectorXd w(n), y(n);
  long r = 0;
  // Z=0, S=1: five rows, 4 treated, y = 1.8.
  for (int i = 0; i < 5; ++i, ++r) {
    x(r, 0) = 1.0;
    x(r, 1) = 0.0;
    w(r) = i < 4 ? 1.0 : 0.0;
    y(r) = 1.8;
  }
  // Z=0, S=0: five rows, 1 treated, y = 0.6.
  for (int i = 0; i < 5; ++i, ++r) {
    x(r, 0) = 0.0;
    x(r, 1) = 0.0;
    w(r) = i < 1 ? 1.0 : 0.0;
    y(r) = 0.6;
  }
  // Z=1, S=1: five rows, all treated, y = 4.
  for (int i = 0; i < 5; ++i, ++r) {
    x(r, 0) = 1.0;
    x(r, 1) = 1.0;
    w(r) = 1.0;
    y(r) = 4.0;
  }
  // Z=1, S=0: five rows, none treated, y = 0.
  for (int i = 0; i < 5; ++i, ++r) {
    x(r, 0) = 0.0;
    x(r, 1) = 1.0;
    w(r) = 0.0;
    y(r) = 0.0;
  }
  const Dataset ds = make_dataset({"S", "Z"}, x, w, y);
  const EffectEstimate est = civest::wald_conditional(ds, "S", {"Z"});
  CHECK(est.ace == doctest::Approx(3.0).epsilon(1e-12));
  // Rows carry their stratum's effect.
  CHECK(est.cace(0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(est.cace(n - 1) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(est.ace == est.cace.mean());

  // A stratum missing an instrument arm is a data error.
  MatrixXd x2 = x;
  for (long i = 10; i < 20; ++i) x2(i, 0) = 1.0;  // Z=1 has no S=0 rows left
  const Dataset broken = make_dataset({"S", "Z"}, x2, w, y);
  CHECK_THROWS_AS(civest::wald_conditional(broken, "S", {"Z"}), DataError);
}

TEST_CASE("continuous conditioning falls back to regression adjustment") {
  // Exact linear world: w = s, y = 2 w + 0.5 z with non-integral z values,
  // so the stratifier cannot be used and both means are fit linearly.
  const long n = 210;
  MatrixXd x(n, 2);
  VectorXd w(n), y(n);
  for (long i = 0; i < n; ++i) {
    const double s = static_cast<double>(i % 2);
    const double z = static_cast<double>(i % 7) / 3.0;
    x(i, 0) = s;
    x(i, 1) = z;
    w(i) = s;
    y(i) = 2.0 * s + 0.5 * z;
  }
  const Dataset ds = make_dataset({"S", "Z"}, x, w, y);
  const EffectEstimate est = civest::wald_conditional(ds, "S", {"Z"});
  CHECK(est.ace == doctest::Approx(2.0).epsilon(1e-10));

  // Weak guard on the regression path: a treatment unrelated to the
  // instrument zeroes the denominator coefficient.
  VectorXd w2(n);
  for (long i = 0; i < n; ++i) w2(i) = static_cast<double>((i / 2) % 2);
  const Dataset weak = make_dataset({"S", "Z"}, x, w2, y);
  CHECK_THROWS_AS(civest::wald_conditional(weak, "S", {"Z"}), WeakInstrumentError);
}

TEST_CASE("Wald preconditions") {
  const long n = 12;
  MatrixXd x = MatrixXd::Zero(n, 1);
  VectorXd w = VectorXd::Zero(n), y = VectorXd::Zero(n);
  for (long i = 0; i < n; ++i) {
    x(i, 0) = static_cast<double>(i) / 5.0;  // not binary
    w(i) = i % 2 ? 1.0 : 0.0;
    y(i) = static_cast<double>(i);
  }
  const Dataset ds = make_dataset({"S"}, x, w, y);
  CHECK_THROWS_AS(civest::wald_conditional(ds, "S", {}), DataError);
  CHECK_THROWS_AS(civest::wald_conditional(ds, "missing", {}), DataError);
}

TEST_CASE("naive regression matches least squares and ignores confounding") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> normal(0.0, 1.0);
  const long n = 5000;

  // Unconfounded: w assigned by coin flip; the w coefficient converges to 3.
  {
    MatrixXd x(n, 1);
    VectorXd w(n), y(n);
    std::bernoulli_distribution coin(0.5);
    for (long i = 0; i < n; ++i) {
      x(i, 0) = normal(rng);
      w(i) = coin(rng) ? 1.0 : 0.0;
      y(i) = 3.0 * w(i) + 1.5 * x(i, 0) + 0.3 * normal(rng);
    }
    const Dataset ds = make_dataset({"A"}, x, w, y);
    const EffectEstimate est = civest::naive_regression_ace(ds);
    CHECK(est.ace == doctest::Approx(3.0).epsilon(0.01));
    CHECK(est.ace == est.cace.mean());
    CHECK(est.cace.size() == n);
    CHECK(est.cace.maxCoeff() == est.cace.minCoeff());  // constant effect

    // Shifting the outcome by a constant does not move the slope.
    Dataset shifted = ds;
    shifted.y.array() += 10.0;
    const EffectEstimate est2 = civest::naive_regression_ace(shifted);
    CHECK(est2.ace == doctest::Approx(est.ace).epsilon(1e-9));
  }

  // Confounded: u raises both treatment odds and outcome; the regression
  // has no access to u and lands far from the true effect of 2.
  {
    MatrixXd x(n, 1);
    VectorXd w(n), y(n);
    for (long i = 0; i < n; ++i) {
      const double u = normal(rng);
      x(i, 0) = normal(rng);
      w(i) = u > 0.0 ? 1.0 : 0.0;
      y(i) = 2.0 * w(i) + 3.0 * u + 0.5 * normal(rng);
    }
    const Dataset ds = make_dataset({"A"}, x, w, y);
    const EffectEstimate est = civest::naive_regression_ace(ds);
    CHECK(std::abs(est.ace - 2.0) > 1.0);
  }
}

TEST_CASE("two-stage estimation identifies the effect in an instrumented world") {
  // Structural model: binary w with propensity driven by the instrument s
  // and confounder u; y = 2 w + z1 + 0.8 u + noise.  (s, z) are clean of u,
  // so the two-stage fit recovers the effect 2 that a direct regression of
  // y on (w, z) misses.
  std::mt19937_64 rng(41);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const long n = 3000;
  MatrixXd s(n, 1), z(n, 2);
  VectorXd w(n), y(n);
  for (long i = 0; i < n; ++i) {
    const double u = normal(rng);
    s(i, 0) = normal(rng);
    z(i, 0) = normal(rng);
    z(i, 1) = normal(rng);
    const double logit = 1.5 * s(i, 0) + 0.5 * z(i, 0) - 1.2 * u;
    const double p = 1.0 / (1.0 + std::exp(-logit));
    w(i) = unif(rng) < p ? 1.0 : 0.0;
    y(i) = 2.0 * w(i) + z(i, 0) + 0.8 * u + 0.3 * normal(rng);
  }

  TwoStageModel model = civest::fit_two_stage(s, z, w, y, small_stage());
  CHECK(std::isfinite(model.stage1_loss));
  CHECK(std::isfinite(model.stage2_loss));

  const EffectEstimate est = civest::estimate_from_model(model, z, "iv");
  CHECK(est.estimator == "iv");
  CHECK(est.ace == doctest::Approx(2.0).epsilon(0.08));
  CHECK(est.ace == est.cace.mean());

  // The fitted propensity tracks the treated fraction.
  const VectorXd pi = model.propensity(s, z);
  CHECK(pi.minCoeff() >= civest::kProbFloor);
  CHECK(pi.maxCoeff() <= 1.0 - civest::kProbFloor);
  CHECK(pi.mean() == doctest::Approx(w.mean()).epsilon(0.1));

  // Estimates are reproducible on the same inputs.
  const EffectEstimate again = civest::estimate_from_model(model, z, "iv");
  CHECK((again.cace - est.cace).norm() == 0.0);
}

TEST_CASE("two-stage input validation") {
  const long n = 16;
  MatrixXd s = MatrixXd::Zero(n, 1), z = MatrixXd::Zero(n, 1);
  VectorXd w = VectorXd::Zero(n), y = VectorXd::Zero(n);
  for (long i = 0; i < n; ++i) w(i) = i % 2 ? 1.0 : 0.0;

  MatrixXd short_z = MatrixXd::Zero(n - 1, 1);
  CHECK_THROWS_AS(civest::fit_two_stage(s, short_z, w, y, small_stage()),
                  civest::Error);

  VectorXd all_ones = VectorXd::Ones(n);
  CHECK_THROWS_AS(civest::fit_two_stage(s, z, all_ones, y, small_stage()), DataError);

  VectorXd fractional = w;
  fractional(3) = 0.25;
  CHECK_THROWS_AS(civest::fit_two_stage(s, z, fractional, y, small_stage()), DataError);
}

TEST_CASE("the oracle instrument columns are the synthetic S, X1, X2") {
  const Dataset ds = civest::generate_synthetic({40, 3});
  const auto [s, z] = civest::oracle_civ_columns(ds);
  REQUIRE(s.cols() == 1);
  REQUIRE(z.cols() == 2);
  CHECK((s.col(0) - ds.x.col(ds.feature_index("S"))).norm() == 0.0);
  CHECK((z.col(0) - ds.x.col(ds.feature_index("X1"))).norm() == 0.0);
  CHECK((z.col(1) - ds.x.col(ds.feature_index("X2"))).norm() == 0.0);

  const Dataset stripped = ds.with_features({"S", "X3"});
  CHECK_THROWS_AS(civest::oracle_civ_columns(stripped), DataError);
}

TEST_CASE("row order does not change a stratified Wald estimate") {
  std::mt19937_64 rng(77);
  const long n = 60;
  MatrixXd x(n, 2);
  VectorXd w(n), y(n);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (long i = 0; i < n; ++i) {
    const double s = coin(rng) ? 1.0 : 0.0;
    const double zb = static_cast<double>(i % 2);
    x(i, 0) = s;
    x(i, 1) = zb;
    w(i) = (s == 1.0) == (i % 5 != 0) ? 1.0 : 0.0;
    y(i) = 2.0 * w(i) + zb + 0.1 * normal(rng);
  }
  const Dataset ds = make_dataset({"S", "Z"}, x, w, y);
  const EffectEstimate base = civest::wald_conditional(ds, "S", {"Z"});

  std::vector<long> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const Dataset shuffled = ds.select(order);
  const EffectEstimate perm = civest::wald_conditional(shuffled, "S", {"Z"});
  CHECK(perm.ace == doctest::Approx(base.ace).epsilon(1e-9));
  for (long i = 0; i < n; ++i) {
    CHECK(perm.cace(i) ==
          doctest::Approx(base.cace(order[static_cast<std::size_t>(i)])).epsilon(1e-9));
  }
}
