#pragma once

#include <Eigen/Core>

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "civest/error.hpp"

// Helpers for strict JSON config/checkpoint handling: required keys with
// typed extraction, rejection of unknown keys, and exact matrix round trips.
namespace civest::jsonio {

using nlohmann::json;

inline void require_object(const json& j, const std::string& ctx) {
  if (!j.is_object()) throw DataError(ctx + ": expected a JSON object");
}

// Every key of j must appear in `allowed`; strays are configuration errors.
inline void require_keys(const json& j, const std::string& ctx,
                         const std::vector<std::string>& allowed) {
  require_object(j, ctx);
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const auto& a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) throw DataError(ctx + ": unknown key '" + key + "'");
  }
}

inline const json& require(const json& j, const std::string& ctx, const std::string& key) {
  require_object(j, ctx);
  auto it = j.find(key);
  if (it == j.end()) throw DataError(ctx + ": missing key '" + key + "'");
  return *it;
}

template <typename T>
T get(const json& j, const std::string& ctx, const std::string& key) {
  try {
    return require(j, ctx, key).get<T>();
  } catch (const json::exception& e) {
    throw DataError(ctx + ": key '" + key + "': " + e.what());
  }
}

template <typename T>
T get_or(const json& j, const std::string& ctx, const std::string& key, T fallback) {
  require_object(j, ctx);
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw DataError(ctx + ": key '" + key + "': " + e.what());
  }
}

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (long i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (long j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.empty()) throw DataError(ctx + ": expected a non-empty array of rows");
  const long rows = static_cast<long>(j.size());
  if (!j[0].is_array()) throw DataError(ctx + ": expected rows to be arrays");
  const long cols = static_cast<long>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (long i = 0; i < rows; ++i) {
    if (!j[i].is_array() || static_cast<long>(j[i].size()) != cols) {
      throw DataError(ctx + ": ragged row " + std::to_string(i));
    }
    for (long c = 0; c < cols; ++c) {
      if (!j[i][c].is_number()) throw DataError(ctx + ": non-numeric entry");
      m(i, c) = j[i][c].get<double>();
    }
  }
  return m;
}

inline json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (long i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Eigen::VectorXd vector_from_json(const json& j, const std::string& ctx) {
  if (!j.is_array()) throw DataError(ctx + ": expected an array");
  Eigen::VectorXd v(static_cast<long>(j.size()));
  for (long i = 0; i < v.size(); ++i) {
    if (!j[i].is_number()) throw DataError(ctx + ": non-numeric entry");
    v(i) = j[i].get<double>();
  }
  return v;
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("'" + path + "': " + e.what());
  }
}

}  // namespace civest::jsonio
