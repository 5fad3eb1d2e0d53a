#pragma once

// Model-set artifact: one JSON document holding, per load level, x0, A1, both
// CP factorizations, ranks and build fits. Doubles are written with 17
// significant digits, so loading reproduces every coefficient bit for bit.
//
// {
//   "format": "tdmor-model-set", "version": 1,
//   "models": [{
//     "load_level": 1.0, "n": 27, "x0": [...],
//     "a1": {"rows": 27, "cols": 27, "data": [column-major]},
//     "a2": {"rank": r, "weights": [...], "factors": [{"rows", "cols", "data"}, ...]}, "fit2": 1.0,
//     "a3": {...}, "fit3": 1.0
//   }, ...]
// }
//
// A fit that was not measurable is stored as null. Raw tensors are not stored.

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"

#include "tdmor/reduction/taylor.hpp"

namespace tdmor {

inline constexpr const char* kModelSetFormat = "tdmor-model-set";
inline constexpr int kModelSetVersion = 1;

namespace detail {

inline nlohmann::json matrix_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& where) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size())
    throw ConfigError(where + ": matrix data length does not match shape");
  return Eigen::Map<const Matrix>(data.data(), rows, cols);
}

inline Vector vector_from_json(const nlohmann::json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(data.data(), static_cast<Eigen::Index>(data.size()));
}

inline nlohmann::json fit_json(double fit) { return std::isfinite(fit) ? nlohmann::json(fit) : nlohmann::json(nullptr); }

inline double fit_from_json(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline nlohmann::json cp_json(const CpFactors& f) {
  nlohmann::json factors = nlohmann::json::array();
  for (const auto& a : f.factors) factors.push_back(matrix_json(a));
  return {{"rank", f.rank}, {"weights", std::vector<double>(f.weights.data(), f.weights.data() + f.weights.size())},
          {"factors", factors}};
}

inline CpFactors cp_from_json(const nlohmann::json& j, const std::string& where) {
  CpFactors f;
  f.rank = j.at("rank").get<std::size_t>();
  f.weights = vector_from_json(j.at("weights"));
  for (const auto& a : j.at("factors")) f.factors.push_back(matrix_from_json(a, where));
  f.validate();
  return f;
}

}  // namespace detail

inline nlohmann::json to_json(const TaylorModel& m) {
  return {{"load_level", m.load_level},
          {"n", m.n()},
          {"x0", std::vector<double>(m.x0.data(), m.x0.data() + m.x0.size())},
          {"a1", detail::matrix_json(m.a1)},
          {"a2", detail::cp_json(m.a2)},
          {"fit2", detail::fit_json(m.fit2)},
          {"a3", detail::cp_json(m.a3)},
          {"fit3", detail::fit_json(m.fit3)}};
}

inline TaylorModel taylor_model_from_json(const nlohmann::json& j, const std::string& where = "model") {
  try {
    TaylorModel m;
    m.load_level = j.at("load_level").get<double>();
    m.x0 = detail::vector_from_json(j.at("x0"));
    if (j.at("n").get<std::size_t>() != m.n()) throw ConfigError(where + ": n does not match x0");
    m.a1 = detail::matrix_from_json(j.at("a1"), where + ".a1");
    m.a2 = detail::cp_from_json(j.at("a2"), where + ".a2");
    m.fit2 = detail::fit_from_json(j.at("fit2"));
    m.a3 = detail::cp_from_json(j.at("a3"), where + ".a3");
    m.fit3 = detail::fit_from_json(j.at("fit3"));
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  } catch (const DimensionError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline nlohmann::json model_set_json(const std::vector<TaylorModel>& models) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : models) arr.push_back(to_json(m));
  return {{"format", kModelSetFormat}, {"version", kModelSetVersion}, {"models", arr}};
}

inline std::vector<TaylorModel> model_set_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", std::string()) != kModelSetFormat)
    throw ConfigError("not a model-set artifact");
  if (j.value("version", 0) != kModelSetVersion)
    throw ConfigError("unsupported model-set version " + std::to_string(j.value("version", 0)));
  std::vector<TaylorModel> out;
  const auto& arr = j.at("models");
  for (std::size_t i = 0; i < arr.size(); ++i)
    out.push_back(taylor_model_from_json(arr[i], "models[" + std::to_string(i) + "]"));
  if (out.empty()) throw ConfigError("model set is empty");
  return out;
}

inline void save_model_set(const std::string& path, const std::vector<TaylorModel>& models) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write model set '" + path + "'");
  out << model_set_json(models).dump() << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::vector<TaylorModel> load_model_set(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model set '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return model_set_from_json(j);
}

}  // namespace tdmor
