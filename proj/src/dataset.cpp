#include "civest/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "civest/error.hpp"
#include "civest/jsonio.hpp"

namespace civest {

namespace {

bool is_zero_one(double v) { return v == 0.0 || v == 1.0; }

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& cell, long line_no, const std::string& col) {
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  while (begin != end && std::isspace(static_cast<unsigned char>(*begin))) ++begin;
  while (end != begin && std::isspace(static_cast<unsigned char>(end[-1]))) --end;
  double v = 0.0;
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc{} || res.ptr != end || begin == end) {
    throw DataError("line " + std::to_string(line_no) + ": cannot parse '" + cell +
                    "' in column '" + col + "' as a number");
  }
  return v;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cell);
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  out.push_back(cell);
  return out;
}

}  // namespace

long Dataset::feature_index(const std::string& name) const {
  for (long j = 0; j < static_cast<long>(x_names.size()); ++j) {
    if (x_names[j] == name) return j;
  }
  throw DataError("no feature column named '" + name + "'");
}

void Dataset::validate() const {
  const long n = rows();
  if (w.size() != n || y.size() != n) {
    throw DataError("treatment/outcome length does not match feature rows");
  }
  if (static_cast<long>(x_names.size()) != x.cols()) {
    throw DataError("feature name count does not match feature columns");
  }
  if (static_cast<long>(hidden_names.size()) != hidden.cols()) {
    throw DataError("hidden name count does not match hidden columns");
  }
  if (hidden.cols() > 0 && hidden.rows() != n) {
    throw DataError("hidden rows do not match feature rows");
  }
  const bool has_y0 = y0.size() > 0;
  const bool has_y1 = y1.size() > 0;
  if (has_y0 != has_y1) {
    throw DataError("potential outcomes must be provided together");
  }
  if (has_y0 && (y0.size() != n || y1.size() != n)) {
    throw DataError("potential outcome length does not match feature rows");
  }
  std::unordered_set<std::string> seen;
  for (const auto& name : x_names) {
    if (name.empty()) throw DataError("empty feature name");
    if (name == "w" || name == "y" || name.rfind("__", 0) == 0) {
      throw DataError("feature name '" + name + "' is reserved");
    }
    if (!seen.insert(name).second) {
      throw DataError("duplicate feature name '" + name + "'");
    }
  }
  if (!x.allFinite()) throw DataError("non-finite feature value");
  if (!y.allFinite()) throw DataError("non-finite outcome value");
  for (long i = 0; i < n; ++i) {
    if (!is_zero_one(w(i))) {
      throw DataError("treatment value at row " + std::to_string(i) + " is not 0 or 1");
    }
    if (binary_outcome && !is_zero_one(y(i))) {
      throw DataError("outcome value at row " + std::to_string(i) +
                      " is not 0 or 1 but the outcome is declared binary");
    }
  }
}

Dataset Dataset::select(const std::vector<long>& rows_wanted) const {
  const long n = rows();
  const long m = static_cast<long>(rows_wanted.size());
  Dataset out;
  out.x.resize(m, x.cols());
  out.w.resize(m);
  out.y.resize(m);
  if (has_potentials()) {
    out.y0.resize(m);
    out.y1.resize(m);
  }
  if (hidden.cols() > 0) out.hidden.resize(m, hidden.cols());
  for (long i = 0; i < m; ++i) {
    const long r = rows_wanted[i];
    if (r < 0 || r >= n) {
      throw DataError("row index " + std::to_string(r) + " out of range [0, " +
                      std::to_string(n) + ")");
    }
    out.x.row(i) = x.row(r);
    out.w(i) = w(r);
    out.y(i) = y(r);
    if (has_potentials()) {
      out.y0(i) = y0(r);
      out.y1(i) = y1(r);
    }
    if (hidden.cols() > 0) out.hidden.row(i) = hidden.row(r);
  }
  out.x_names = x_names;
  out.hidden_names = hidden_names;
  out.binary_outcome = binary_outcome;
  return out;
}

Dataset Dataset::with_features(const std::vector<std::string>& names) const {
  Dataset out;
  out.x.resize(rows(), static_cast<long>(names.size()));
  for (long j = 0; j < static_cast<long>(names.size()); ++j) {
    out.x.col(j) = x.col(feature_index(names[j]));
  }
  out.x_names = names;
  out.w = w;
  out.y = y;
  out.y0 = y0;
  out.y1 = y1;
  out.hidden = hidden;
  out.hidden_names = hidden_names;
  out.binary_outcome = binary_outcome;
  return out;
}

Split split_indices(long n, double train_frac, std::uint64_t seed) {
  if (n < 2) throw DataError("need at least 2 rows to split, got " + std::to_string(n));
  if (!(train_frac > 0.0 && train_frac < 1.0)) {
    throw DataError("train fraction must lie strictly between 0 and 1");
  }
  std::vector<long> order(n);
  std::iota(order.begin(), order.end(), 0L);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  long train_count = static_cast<long>(std::ceil(train_frac * static_cast<double>(n)));
  train_count = std::clamp(train_count, 1L, n - 1);
  Split out;
  out.train.assign(order.begin(), order.begin() + train_count);
  out.test.assign(order.begin() + train_count, order.end());
  return out;
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& x) {
  if (x.rows() == 0 || x.cols() == 0) throw DataError("cannot standardize an empty matrix");
  if (!x.allFinite()) throw DataError("cannot standardize non-finite values");
  Standardizer out;
  const long n = x.rows();
  out.mean_ = x.colwise().mean();
  out.std_ = Eigen::VectorXd::Ones(x.cols());
  if (n >= 2) {
    for (long j = 0; j < x.cols(); ++j) {
      const double var = (x.col(j).array() - out.mean_(j)).square().sum() / double(n - 1);
      const double sd = std::sqrt(var);
      if (sd > 1e-12) out.std_(j) = sd;
    }
  }
  return out;
}

Standardizer Standardizer::from_moments(Eigen::VectorXd mean, Eigen::VectorXd stddev) {
  if (mean.size() != stddev.size() || mean.size() == 0) {
    throw DataError("standardizer moments must be non-empty and equally sized");
  }
  if (!mean.allFinite() || !stddev.allFinite() || (stddev.array() <= 0.0).any()) {
    throw DataError("standardizer moments must be finite with positive spread");
  }
  Standardizer out;
  out.mean_ = std::move(mean);
  out.std_ = std::move(stddev);
  return out;
}

Eigen::MatrixXd Standardizer::transform(const Eigen::MatrixXd& x) const {
  if (mean_.size() == 0) throw NumericError("standardizer used before fit");
  if (x.cols() != mean_.size()) {
    throw DimMismatchError("standardizer input width", mean_.size(), x.cols());
  }
  return (x.rowwise() - mean_.transpose()).array().rowwise() /
         std_.transpose().array();
}

Eigen::MatrixXd Standardizer::inverse(const Eigen::MatrixXd& x) const {
  if (mean_.size() == 0) throw NumericError("standardizer used before fit");
  if (x.cols() != mean_.size()) {
    throw DimMismatchError("standardizer input width", mean_.size(), x.cols());
  }
  return (x.array().rowwise() * std_.transpose().array()).matrix().rowwise() +
         mean_.transpose();
}

Dataset generate_synthetic(const SynthConfig& cfg) {
  if (cfg.n < 1) throw DataError("sample count must be positive");
  const long n = cfg.n;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double eps_sd = std::sqrt(0.5);

  Dataset d;
  d.x.resize(n, 6);
  d.w.resize(n);
  d.y.resize(n);
  d.y0.resize(n);
  d.y1.resize(n);
  d.hidden.resize(n, 5);
  d.x_names = {"S", "X1", "X2", "X3", "X4", "X5"};
  d.hidden_names = {"U", "U1", "U2", "U3", "U4"};

  for (long i = 0; i < n; ++i) {
    const double u = n01(rng);
    const double u1 = n01(rng);
    const double u2 = n01(rng);
    const double u3 = n01(rng);
    const double u4 = n01(rng);
    const double x1 = n01(rng) + 0.5 * u2 + eps_sd * n01(rng);
    const double x2 = n01(rng) + 0.5 * u3 + eps_sd * n01(rng);
    const double x3 = n01(rng) + 0.5 * u4 + eps_sd * n01(rng);
    const double s = n01(rng) + 2.0 * u1 + 1.5 * x1 + 1.5 * x2 + eps_sd * n01(rng);
    const double x4 = 1.0 + n01(rng);
    const double x5 = 3.0 + n01(rng);
    const double propensity = 1.0 / (1.0 + std::exp(2.0 - u - u1 - x3 - x4));
    const double w = unif(rng) < propensity ? 1.0 : 0.0;
    const double base = 2.0 + 2.0 * u + 2.0 * u3 + 2.0 * u4 + x4 + x5;
    const double y0 = base + n01(rng);
    const double y1 = base + 2.0 + n01(rng);

    d.x.row(i) << s, x1, x2, x3, x4, x5;
    d.hidden.row(i) << u, u1, u2, u3, u4;
    d.w(i) = w;
    d.y0(i) = y0;
    d.y1(i) = y1;
    d.y(i) = w == 1.0 ? y1 : y0;
  }
  return d;
}

Dag synthetic_dag() {
  Dag g;
  for (const char* name : {"U", "U1", "U2", "U3", "U4"}) {
    g.add_node(name);
    g.set_latent(name);
  }
  g.add_edge("U2", "X1");
  g.add_edge("U3", "X2");
  g.add_edge("U4", "X3");
  g.add_edge("U1", "S");
  g.add_edge("X1", "S");
  g.add_edge("X2", "S");
  g.add_edge("U", "W");
  g.add_edge("U1", "W");
  g.add_edge("X3", "W");
  g.add_edge("X4", "W");
  g.add_edge("W", "Y");
  g.add_edge("U", "Y");
  g.add_edge("U3", "Y");
  g.add_edge("U4", "Y");
  g.add_edge("X4", "Y");
  g.add_edge("X5", "Y");
  return g;
}

void write_csv(const std::string& path, const Dataset& data) {
  data.validate();
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");

  std::vector<std::string> header = data.x_names;
  header.push_back("w");
  header.push_back("y");
  if (data.has_potentials()) {
    header.push_back("__y0");
    header.push_back("__y1");
  }
  for (const auto& h : data.hidden_names) header.push_back("__" + h);
  for (size_t j = 0; j < header.size(); ++j) {
    if (j) out << ',';
    out << header[j];
  }
  out << '\n';

  for (long i = 0; i < data.rows(); ++i) {
    for (long j = 0; j < data.x.cols(); ++j) {
      if (j) out << ',';
      out << format_double(data.x(i, j));
    }
    out << ',' << format_double(data.w(i)) << ',' << format_double(data.y(i));
    if (data.has_potentials()) {
      out << ',' << format_double(data.y0(i)) << ',' << format_double(data.y1(i));
    }
    for (long j = 0; j < data.hidden.cols(); ++j) {
      out << ',' << format_double(data.hidden(i, j));
    }
    out << '\n';
  }
  if (!out) throw DataError("write to '" + path + "' failed");
}

Dataset load_csv(const std::string& path, const std::string& treatment_col,
                 const std::string& outcome_col) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_line(line);

  std::unordered_set<std::string> seen;
  for (const auto& name : header) {
    if (name.empty()) throw DataError("empty column name in '" + path + "'");
    if (!seen.insert(name).second) {
      throw DataError("duplicate column '" + name + "' in '" + path + "'");
    }
  }

  long w_col = -1, y_col = -1, y0_col = -1, y1_col = -1;
  std::vector<long> feature_cols, hidden_cols;
  std::vector<std::string> feature_names, hidden_names;
  for (long j = 0; j < static_cast<long>(header.size()); ++j) {
    const std::string& name = header[j];
    if (name == treatment_col) {
      w_col = j;
    } else if (name == outcome_col) {
      y_col = j;
    } else if (name == "__y0") {
      y0_col = j;
    } else if (name == "__y1") {
      y1_col = j;
    } else if (name.rfind("__", 0) == 0) {
      hidden_cols.push_back(j);
      hidden_names.push_back(name.substr(2));
    } else {
      feature_cols.push_back(j);
      feature_names.push_back(name);
    }
  }
  if (w_col < 0) throw DataError("no treatment column '" + treatment_col + "' in '" + path + "'");
  if (y_col < 0) throw DataError("no outcome column '" + outcome_col + "' in '" + path + "'");
  if ((y0_col < 0) != (y1_col < 0)) {
    throw DataError("'" + path + "' has one of __y0/__y1 but not both");
  }

  std::vector<std::vector<double>> rows;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_line(line);
    if (cells.size() != header.size()) {
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " cells, got " +
                      std::to_string(cells.size()));
    }
    std::vector<double> row(cells.size());
    for (size_t j = 0; j < cells.size(); ++j) {
      row[j] = parse_double(cells[j], line_no, header[j]);
      if (!std::isfinite(row[j])) {
        throw DataError("line " + std::to_string(line_no) + ": non-finite value in column '" +
                        header[j] + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("'" + path + "' has no data rows");

  const long n = static_cast<long>(rows.size());
  Dataset d;
  d.x.resize(n, static_cast<long>(feature_cols.size()));
  d.w.resize(n);
  d.y.resize(n);
  if (y0_col >= 0) {
    d.y0.resize(n);
    d.y1.resize(n);
  }
  if (!hidden_cols.empty()) d.hidden.resize(n, static_cast<long>(hidden_cols.size()));
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < static_cast<long>(feature_cols.size()); ++j) {
      d.x(i, j) = rows[i][feature_cols[j]];
    }
    d.w(i) = rows[i][w_col];
    d.y(i) = rows[i][y_col];
    if (y0_col >= 0) {
      d.y0(i) = rows[i][y0_col];
      d.y1(i) = rows[i][y1_col];
    }
    for (long j = 0; j < static_cast<long>(hidden_cols.size()); ++j) {
      d.hidden(i, j) = rows[i][hidden_cols[j]];
    }
  }
  d.x_names = feature_names;
  d.hidden_names = hidden_names;
  d.validate();
  return d;
}

DataSchema load_schema(const std::string& path) {
  const nlohmann::json j = jsonio::load_json_file(path);
  const std::string ctx = "schema '" + path + "'";
  jsonio::require_keys(j, ctx, {"treatment", "outcome", "outcome_kind"});
  DataSchema s;
  s.treatment = jsonio::get_or<std::string>(j, ctx, "treatment", s.treatment);
  s.outcome = jsonio::get_or<std::string>(j, ctx, "outcome", s.outcome);
  const std::string kind = jsonio::get_or<std::string>(j, ctx, "outcome_kind", "continuous");
  if (kind == "binary") {
    s.binary_outcome = true;
  } else if (kind == "continuous") {
    s.binary_outcome = false;
  } else {
    throw DataError(ctx + ": outcome_kind must be 'continuous' or 'binary'");
  }
  if (s.treatment.empty() || s.outcome.empty()) {
    throw DataError(ctx + ": treatment/outcome column names must be non-empty");
  }
  return s;
}

void write_schema(const std::string& path, const DataSchema& schema) {
  nlohmann::json j;
  j["treatment"] = schema.treatment;
  j["outcome"] = schema.outcome;
  j["outcome_kind"] = schema.binary_outcome ? "binary" : "continuous";
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw DataError("write to '" + path + "' failed");
}

Dataset load_csv_with_schema(const std::string& csv_path, const DataSchema& schema) {
  Dataset d = load_csv(csv_path, schema.treatment, schema.outcome);
  d.binary_outcome = schema.binary_outcome;
  d.validate();
  return d;
}

}  // namespace civest
