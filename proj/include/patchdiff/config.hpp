#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "model.hpp"
#include "polynomial.hpp"

namespace patchdiff {

using json = nlohmann::json;

enum class Experiment {
  Validate,
  SimulateChain,
  SimulateSde,
  GeneratorCheck,
  SemigroupCheck,
  TrotterCheck,
  Absorption,
  BoundCheck,
  HittingTime,
  StoppingCheck,
};

inline constexpr std::array<std::pair<Experiment, std::string_view>, 10> kExperimentNames{{
    {Experiment::Validate, "validate"},
    {Experiment::SimulateChain, "simulate-chain"},
    {Experiment::SimulateSde, "simulate-sde"},
    {Experiment::GeneratorCheck, "generator-check"},
    {Experiment::SemigroupCheck, "semigroup-check"},
    {Experiment::TrotterCheck, "trotter-check"},
    {Experiment::Absorption, "absorption"},
    {Experiment::BoundCheck, "bound-check"},
    {Experiment::HittingTime, "hitting-time"},
    {Experiment::StoppingCheck, "stopping-check"},
}};

inline std::string_view experiment_name(Experiment e) {
  for (const auto& [k, name] : kExperimentNames)
    if (k == e) return name;
  return "unknown";
}

inline std::optional<Experiment> parse_experiment(std::string_view name) {
  for (const auto& [k, n] : kExperimentNames)
    if (n == name) return k;
  return std::nullopt;
}

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

// ModelSpec from the "model" object: m, distortions, drift {kind, S | table,
// N_min}, tolerances {conservation, boundary}.
inline ModelSpec model_from_json(const json& j) {
  try {
    if (!j.is_object()) throw ConfigError("model must be an object");
    const auto d = j.at("distortions").get<std::vector<double>>();
    if (j.contains("m") && j.at("m").get<std::size_t>() != d.size())
      throw ConfigError("m does not match the number of distortions");
    const std::size_t m = d.size();
    Tolerances tol;
    if (j.contains("tolerances")) {
      const auto& t = j.at("tolerances");
      tol.conservation = t.value("conservation", tol.conservation);
      tol.boundary = t.value("boundary", tol.boundary);
    }
    const auto& drift = j.at("drift");
    const auto kind = drift.at("kind").get<std::string>();
    std::optional<long> n_min;
    if (drift.contains("N_min")) n_min = drift.at("N_min").get<long>();
    if (kind == "linear_exchange") {
      const auto rows = drift.at("S").get<std::vector<std::vector<double>>>();
      if (rows.size() != m) throw ConfigError("S must be m x m");
      Eigen::MatrixXd S(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
      for (std::size_t i = 0; i < m; ++i) {
        if (rows[i].size() != m) throw ConfigError("S must be m x m");
        for (std::size_t k = 0; k < m; ++k) S(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
      }
      return ModelSpec(d, LinearExchange{S}, n_min, tol);
    }
    if (kind == "tabulated") {
      const auto& table = drift.at("table");
      if (!table.is_array() || table.size() != m) throw ConfigError("table needs one polynomial per patch");
      std::vector<Polynomial> b;
      for (const auto& p : table) b.push_back(polynomial_from_json(p, m));
      return ModelSpec(d, Tabulated::from_polynomials(std::move(b)), n_min, tol);
    }
    throw ConfigError("unknown drift kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model: ") + e.what());
  }
}

/// Typed access to the "params" block; a missing required key is a
/// configuration error naming the experiment.
class Params {
 public:
  Params(json j, Experiment e) : j_(std::move(j)), e_(e) {
    if (j_.is_null()) j_ = json::object();
    if (!j_.is_object()) throw ConfigError("params must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  template <typename T>
  T required(const std::string& key) const {
    if (!has(key))
      throw ConfigError("missing parameter '" + key + "' for " + std::string(experiment_name(e_)));
    return get<T>(key);
  }

  template <typename T>
  T value(const std::string& key, T fallback) const {
    return has(key) ? get<T>(key) : fallback;
  }

  // Accepts a scalar where a list is expected.
  template <typename T>
  std::vector<T> list(const std::string& key) const {
    if (!has(key))
      throw ConfigError("missing parameter '" + key + "' for " + std::string(experiment_name(e_)));
    const auto& v = j_.at(key);
    return v.is_array() ? get<std::vector<T>>(key) : std::vector<T>{get<T>(key)};
  }

  const json& raw() const { return j_; }
  json& raw() { return j_; }

 private:
  template <typename T>
  T get(const std::string& key) const {
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("parameter '" + key + "' has the wrong type");
    }
  }

  json j_;
  Experiment e_;
};

struct ExperimentConfig {
  Experiment experiment;
  json model_source;
  ModelSpec model;
  Params params;
  std::uint64_t master_seed = 0;
  std::filesystem::path output_dir = ".";

  /// Everything needed to rerun: model, params and seed.
  json echo() const {
    return {{"experiment", experiment_name(experiment)},
            {"model", model_source},
            {"params", params.raw()},
            {"seed", master_seed}};
  }
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> reps;
  std::optional<std::filesystem::path> output_dir;
};

/// Builds a run configuration from a parsed document {model, params, seed}.
inline ExperimentConfig load_config(Experiment e, const json& doc, const Overrides& over = {}) {
  if (!doc.is_object()) throw ConfigError("configuration must be an object");
  if (!doc.contains("model")) throw ConfigError("configuration has no model");
  Params params(doc.value("params", json::object()), e);
  if (over.reps) params.raw()["reps"] = *over.reps;
  std::uint64_t seed = 0;
  try {
    seed = over.seed.value_or(doc.value("seed", std::uint64_t{0}));
  } catch (const json::exception&) {
    throw ConfigError("seed must be a nonnegative integer");
  }
  return {e, doc.at("model"), model_from_json(doc.at("model")), std::move(params), seed,
          over.output_dir.value_or(".")};
}

inline ExperimentConfig load_config_text(Experiment e, std::string_view text, const Overrides& over = {}) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& err) {
    throw ConfigError(std::string("configuration is not valid JSON: ") + err.what());
  }
  return load_config(e, doc, over);
}

}  // namespace patchdiff
