#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "civest/dataset.hpp"
#include "civest/error.hpp"
#include "doctest.h"

using civest::DataError;
using civest::Dataset;
using civest::DataSchema;
using civest::Split;
using civest::Standardizer;
using civest::SynthConfig;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Unique scratch path under the build-tree working directory.
std::string scratch_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "civest_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

}  // namespace

TEST_CASE("synthetic generator matches its design moments") {
  const Dataset ds = civest::generate_synthetic({20000, 91});
  REQUIRE(ds.rows() == 20000);
  REQUIRE(ds.x_names ==
          std::vector<std::string>{"S", "X1", "X2", "X3", "X4", "X5"});
  REQUIRE(ds.has_potentials());

  auto col = [&](const std::string& name) {
    return ds.x.col(ds.feature_index(name));
  };
  auto mean = [](const auto& v) { return v.mean(); };
  auto variance = [&](const auto& v) {
    const double m = v.mean();
    return (v.array() - m).square().sum() / static_cast<double>(v.size() - 1);
  };

  // X4 ~ N(1,1), X5 ~ N(3,1).
  CHECK(mean(col("X4")) == doctest::Approx(1.0).epsilon(0.05));
  CHECK(mean(col("X5")) == doctest::Approx(3.0).epsilon(0.02));
  CHECK(variance(col("X4")) == doctest::Approx(1.0).epsilon(0.06));

  // X1 = N(0,1) + 0.5 U2 + noise(var 0.5): variance 1 + 0.25 + 0.5.
  CHECK(std::abs(mean(col("X1"))) < 0.05);
  CHECK(variance(col("X1")) == doctest::Approx(1.75).epsilon(0.06));

  // Treatment is binary and non-degenerate; its rate is set by the logistic
  // propensity, which lands well inside (0.25, 0.45) at this design.
  for (long i = 0; i < 200; ++i) {
    CHECK((ds.w(i) == 0.0 || ds.w(i) == 1.0));
  }
  const double w_rate = ds.w.mean();
  CHECK(w_rate > 0.25);
  CHECK(w_rate < 0.45);

  // The treated potential exceeds the control one by exactly 2 on average.
  CHECK((ds.y1 - ds.y0).mean() == doctest::Approx(civest::kSyntheticAce).epsilon(0.02));
  // The observed outcome is the potential selected by the treatment.
  for (long i = 0; i < ds.rows(); ++i) {
    const double expected = ds.w(i) == 1.0 ? ds.y1(i) : ds.y0(i);
    REQUIRE(ds.y(i) == expected);
  }

  // Latent columns ride along for audits.
  REQUIRE(ds.hidden_names ==
          std::vector<std::string>{"U", "U1", "U2", "U3", "U4"});
  CHECK(variance(ds.hidden.col(0)) == doctest::Approx(1.0).epsilon(0.06));
}

TEST_CASE("instrument equation recovers its coefficients by least squares") {
  const Dataset ds = civest::generate_synthetic({20000, 17});
  const long n = ds.rows();
  MatrixXd design(n, 3);
  design.col(0).setOnes();
  design.col(1) = ds.x.col(ds.feature_index("X1"));
  design.col(2) = ds.x.col(ds.feature_index("X2"));
  const VectorXd s = ds.x.col(ds.feature_index("S"));
  const VectorXd beta = design.colPivHouseholderQr().solve(s);

  // S = noise + 2 U1 + 1.5 X1 + 1.5 X2; U1 is independent of X1 and X2, so
  // the projection coefficients converge to 1.5 each (se ~ 0.013 here).
  CHECK(beta(1) == doctest::Approx(1.5).epsilon(0.04));
  CHECK(beta(2) == doctest::Approx(1.5).epsilon(0.04));
  CHECK(std::abs(beta(0)) < 0.06);
}

TEST_CASE("generation is deterministic in the seed") {
  const Dataset a = civest::generate_synthetic({500, 4});
  const Dataset b = civest::generate_synthetic({500, 4});
  const Dataset c = civest::generate_synthetic({500, 5});
  CHECK((a.x - b.x).norm() == 0.0);
  CHECK((a.y - b.y).norm() == 0.0);
  CHECK((a.x - c.x).norm() != 0.0);
}

TEST_CASE("CSV round trip is bit exact") {
  const Dataset ds = civest::generate_synthetic({37, 11});
  const std::string path = scratch_path("roundtrip.csv");
  civest::write_csv(path, ds);
  const Dataset back = civest::load_csv(path);

  CHECK(back.rows() == ds.rows());
  CHECK(back.x_names == ds.x_names);
  CHECK(back.hidden_names == ds.hidden_names);
  CHECK((back.x - ds.x).norm() == 0.0);
  CHECK((back.w - ds.w).norm() == 0.0);
  CHECK((back.y - ds.y).norm() == 0.0);
  REQUIRE(back.has_potentials());
  CHECK((back.y0 - ds.y0).norm() == 0.0);
  CHECK((back.y1 - ds.y1).norm() == 0.0);
  CHECK((back.hidden - ds.hidden).norm() == 0.0);
}

TEST_CASE("CSV loader reports precise errors") {
  auto expect_error = [](const std::string& name, const std::string& text,
                         const std::string& needle) {
    const std::string path = scratch_path(name);
    write_text(path, text);
    try {
      civest::load_csv(path);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CAPTURE(text);
      CAPTURE(needle);
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };

  expect_error("ragged.csv", "a,w,y\n1,0,2\n1,0\n", "line 3");
  expect_error("badnum.csv", "a,w,y\n1,zero,2\n", "line 2");
  expect_error("dup.csv", "a,a,w,y\n1,2,0,3\n", "duplicate");
  expect_error("lonely.csv", "a,w,y,__y0\n1,0,2,3\n", "__y0");
  expect_error("noy.csv", "a,w\n1,0\n", "outcome");
  expect_error("empty.csv", "", "empty");
  CHECK_THROWS_AS(civest::load_csv(scratch_path("does_not_exist.csv")), DataError);
}

TEST_CASE("dataset validation rejects malformed inputs") {
  Dataset ds = civest::generate_synthetic({10, 1});
  ds.validate();

  Dataset bad_w = ds;
  bad_w.w(3) = 0.5;
  CHECK_THROWS_AS(bad_w.validate(), DataError);

  Dataset bad_x = ds;
  bad_x.x(1, 2) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(bad_x.validate(), DataError);

  Dataset bad_name = ds;
  bad_name.x_names[0] = "w";
  CHECK_THROWS_AS(bad_name.validate(), DataError);

  Dataset reserved = ds;
  reserved.x_names[1] = "__shadow";
  CHECK_THROWS_AS(reserved.validate(), DataError);
}

TEST_CASE("row selection and feature projection") {
  const Dataset ds = civest::generate_synthetic({20, 3});
  const Dataset rows = ds.select({2, 5, 11});
  REQUIRE(rows.rows() == 3);
  CHECK((rows.x.row(0) - ds.x.row(2)).norm() == 0.0);
  CHECK((rows.x.row(2) - ds.x.row(11)).norm() == 0.0);
  CHECK(rows.y(1) == ds.y(5));
  CHECK(rows.w(1) == ds.w(5));
  CHECK(rows.y0(1) == ds.y0(5));

  const Dataset proj = ds.with_features({"X2", "S"});
  REQUIRE(proj.x_names == std::vector<std::string>{"X2", "S"});
  CHECK((proj.x.col(0) - ds.x.col(ds.feature_index("X2"))).norm() == 0.0);
  CHECK((proj.x.col(1) - ds.x.col(ds.feature_index("S"))).norm() == 0.0);
  CHECK_THROWS_AS(ds.with_features({"nope"}), DataError);
  CHECK_THROWS_AS(ds.feature_index("nope"), DataError);
}

TEST_CASE("split indices partition the rows deterministically") {
  const Split s1 = civest::split_indices(100, 0.7, 123);
  const Split s2 = civest::split_indices(100, 0.7, 123);
  const Split s3 = civest::split_indices(100, 0.7, 124);
  CHECK(s1.train == s2.train);
  CHECK(s1.test == s2.test);
  CHECK(s1.train != s3.train);

  CHECK(s1.train.size() == 70);
  CHECK(s1.test.size() == 30);
  std::vector<long> all = s1.train;
  all.insert(all.end(), s1.test.begin(), s1.test.end());
  std::sort(all.begin(), all.end());
  for (long i = 0; i < 100; ++i) REQUIRE(all[static_cast<std::size_t>(i)] == i);

  // ceil() sizing with clamping so both folds stay non-empty.
  CHECK(civest::split_indices(10, 0.65, 1).train.size() == 7);
  CHECK(civest::split_indices(5, 0.999, 1).train.size() == 4);
  CHECK(civest::split_indices(2, 0.01, 1).train.size() == 1);
  CHECK_THROWS_AS(civest::split_indices(1, 0.5, 1), DataError);
}

TEST_CASE("standardizer centers, scales and inverts") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(3.0, 2.0);
  MatrixXd x(200, 3);
  for (long r = 0; r < x.rows(); ++r)
    for (long c = 0; c < x.cols(); ++c) x(r, c) = normal(rng);
  x.col(2).setConstant(7.0);  // zero-variance column

  Standardizer std_fit = Standardizer::fit(x);
  const MatrixXd t = std_fit.transform(x);
  for (long c = 0; c < 2; ++c) {
    CHECK(t.col(c).mean() == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    const double sd = std::sqrt((t.col(c).array() - t.col(c).mean()).square().sum() /
                                static_cast<double>(t.rows() - 1));
    CHECK(sd == doctest::Approx(1.0).epsilon(1e-12));
  }
  // Constant column: centered but left unscaled (guard standard deviation 1).
  CHECK(t.col(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(std_fit.stddev()(2) == 1.0);

  const MatrixXd back = std_fit.inverse(t);
  CHECK((back - x).cwiseAbs().maxCoeff() < 1e-12);

  const Standardizer rebuilt = Standardizer::from_moments(std_fit.mean(), std_fit.stddev());
  CHECK((rebuilt.transform(x) - t).norm() == 0.0);
}

TEST_CASE("schema sidecar round trip and custom column names") {
  DataSchema schema;
  schema.treatment = "treat";
  schema.outcome = "resp";
  schema.binary_outcome = true;
  const std::string spath = scratch_path("schema.json");
  civest::write_schema(spath, schema);
  const DataSchema back = civest::load_schema(spath);
  CHECK(back.treatment == "treat");
  CHECK(back.outcome == "resp");
  CHECK(back.binary_outcome);

  const std::string cpath = scratch_path("custom.csv");
  write_text(cpath, "age,treat,resp\n1.5,0,1\n2.5,1,0\n-0.5,1,1\n");
  const Dataset ds = civest::load_csv_with_schema(cpath, back);
  REQUIRE(ds.rows() == 3);
  CHECK(ds.x_names == std::vector<std::string>{"age"});
  CHECK(ds.w(1) == 1.0);
  CHECK(ds.y(2) == 1.0);
  CHECK(ds.binary_outcome);

  // Unknown schema keys are rejected rather than silently ignored.
  const std::string badpath = scratch_path("bad_schema.json");
  write_text(badpath, "{\"treatment\":\"w\",\"outcome\":\"y\",\"extra\":1}");
  CHECK_THROWS_AS(civest::load_schema(badpath), DataError);
}

TEST_CASE("the generator's graph is the documented one") {
  const civest::Dag g = civest::synthetic_dag();
  CHECK(g.node_count() == 13);
  CHECK(g.edge_count() == 16);
  CHECK(g.has_edge("W", "Y"));
  CHECK(g.has_edge("X1", "S"));
  CHECK(g.has_edge("U1", "W"));
  CHECK_FALSE(g.has_edge("S", "W"));  // the instrument moves W only through U1
  CHECK(g.is_latent("U"));
  CHECK(g.is_latent("U2"));
  CHECK_FALSE(g.is_latent("X3"));

  // It matches the shipped DAG file edge for edge.
  std::ifstream in(std::string(CIVEST_SOURCE_DIR) + "/configs/synthetic.dag");
  REQUIRE(in.good());
  std::stringstream buf;
  buf << in.rdbuf();
  const civest::Dag file = civest::parse_dag(buf.str());
  CHECK(file.node_count() == g.node_count());
  CHECK(file.edge_count() == g.edge_count());
  for (const std::string& parent : g.node_names()) {
    for (int c : g.children(g.index_of(parent))) {
      CHECK(file.has_edge(parent, g.name_of(c)));
    }
    CHECK(file.is_latent(parent) == g.is_latent(parent));
  }
}
