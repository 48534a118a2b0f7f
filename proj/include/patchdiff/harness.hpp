#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "absorption.hpp"
#include "config.hpp"
#include "semigroup.hpp"

#ifndef PATCHDIFF_VERSION
#define PATCHDIFF_VERSION "0.0.0"
#endif

namespace patchdiff {

inline constexpr std::string_view kVersion = PATCHDIFF_VERSION;

enum class RunStatus { Passed, Failed, UsageError, InternalError };

inline std::string_view status_name(RunStatus s) {
  switch (s) {
    case RunStatus::Passed:
      return "passed";
    case RunStatus::Failed:
      return "failed";
    case RunStatus::UsageError:
      return "usage-error";
    case RunStatus::InternalError:
      return "internal-error";
  }
  return "unknown";
}

inline int exit_code(RunStatus s) {
  switch (s) {
    case RunStatus::Passed:
      return 0;
    case RunStatus::UsageError:
      return 2;
    default:
      return 1;
  }
}

struct Artifact {
  std::string kind;  // becomes part of the file name
  std::string extension;
  std::string content;
};

struct RunManifest {
  std::string experiment;
  json config;
  std::uint64_t master_seed = 0;
  double wall_seconds = 0.0;
  std::vector<CheckResult> checks;
  std::vector<std::string> artifacts;
  RunStatus status = RunStatus::Passed;
  std::string error;

  bool passed() const { return status == RunStatus::Passed; }

  json to_json() const {
    json checks_json = json::array();
    for (const auto& c : checks) checks_json.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    return {{"tool", "patchdiff"},
            {"version", kVersion},
            {"experiment", experiment},
            {"master_seed", master_seed},
            {"config", config},
            {"wall_seconds", wall_seconds},
            {"status", status_name(status)},
            {"error", error},
            {"checks", checks_json},
            {"artifacts", artifacts}};
  }
};

struct RunResult {
  RunManifest manifest;
  std::vector<Artifact> artifacts;
};

inline std::string artifact_stem(std::string_view experiment, std::uint64_t seed) {
  return std::string(experiment) + "-seed" + std::to_string(seed);
}

namespace detail {

inline std::string csv_row(std::initializer_list<std::string> cells) {
  std::string row;
  for (const auto& c : cells) {
    if (!row.empty()) row += ',';
    row += c;
  }
  return row + '\n';
}

inline std::string trajectory_csv(const Trajectory& traj, std::size_t m) {
  std::ostringstream out;
  out << 't';
  for (std::size_t i = 1; i <= m; ++i) out << ",x_" << i;
  out << '\n';
  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    out << format_double(traj.times[k]);
    for (double v : traj.states[k].values()) out << ',' << format_double(v);
    out << '\n';
  }
  return out.str();
}

inline std::string hits_csv(const Trajectory& traj) {
  std::string out = "target,time,censored\n";
  for (const auto& h : traj.hits)
    out += csv_row({h.target, h.time ? format_double(*h.time) : "", h.censored() ? "true" : "false"});
  return out;
}

inline json estimate_json(const McEstimate& e) {
  return {{"mean", e.mean},
          {"stderr", e.std_error},
          {"reps", e.reps},
          {"seed", e.master_seed},
          {"censored_fraction", e.censored_fraction}};
}

inline json bound_json(const BoundReport& r, const json& params) {
  json extras = json::object();
  for (const auto& [k, v] : r.extras) extras[k] = v;
  return {{"experiment", r.experiment},
          {"params", params},
          {"bound_value", r.bound_value},
          {"estimate", r.estimate.mean},
          {"stderr", r.estimate.std_error},
          {"reps", r.estimate.reps},
          {"seed", r.estimate.master_seed},
          {"satisfied", r.satisfied},
          {"extras", extras}};
}

inline Artifact json_artifact(std::string kind, const json& j) { return {std::move(kind), "json", j.dump(2) + "\n"}; }

inline StateVec state_param(const Params& p, const ModelSpec& spec, const std::string& key = "x0") {
  const auto v = p.required<std::vector<double>>(key);
  if (v.size() != spec.m()) throw ConfigError("parameter '" + key + "' must have m entries");
  try {
    return StateVec(v);
  } catch (const DomainError& e) {
    throw ConfigError("parameter '" + key + "' is outside [0,1]^m");
  }
}

inline Polynomial polynomial_param(const Params& p, const ModelSpec& spec) {
  return polynomial_from_json(p.required<json>("f"), spec.m());
}

inline Clock clock_param(const Params& p) {
  const auto c = p.value<std::string>("clock", "poissonized");
  if (c == "poissonized") return Clock::Poissonized;
  if (c == "embedded") return Clock::Embedded;
  throw ConfigError("clock must be 'embedded' or 'poissonized'");
}

inline SdeConfig sde_param(const Params& p, double t_max) {
  SdeConfig cfg{p.required<double>("dt"), Scheme::FullTruncationEuler, t_max, p.value("corner_tol", 1e-6)};
  cfg.check();
  return cfg;
}

inline bool strictly_decreasing(const std::vector<double>& v) {
  for (std::size_t k = 1; k < v.size(); ++k)
    if (!(v[k] < v[k - 1])) return false;
  return true;
}

inline std::string ratios_text(const std::vector<double>& v) {
  std::string out = "ratios";
  for (std::size_t k = 1; k < v.size(); ++k) out += ' ' + format_double(v[k - 1] / v[k]);
  return out;
}

inline std::vector<Target> hit_targets(const Params& p) {
  std::vector<Target> targets{Target::corner0(), Target::corner1()};
  if (p.has("alpha")) {
    targets.push_back(Target::delta0(p.required<double>("alpha")));
    targets.push_back(Target::delta1(p.required<double>("alpha")));
  }
  return targets;
}

inline CheckResult bound_check_result(const std::string& name, const BoundReport& r) {
  return {name, r.satisfied,
          "estimate " + format_double(r.estimate.mean) + " stderr " + format_double(r.estimate.std_error) +
              " bound " + format_double(r.bound_value)};
}

}  // namespace detail

/// Dispatches to the owning module and collects checks and artifacts. Does
/// not write files; see emit_report.
inline RunResult run_experiment(const ExperimentConfig& cfg, int workers = default_workers()) {
  using namespace detail;
  const auto start = std::chrono::steady_clock::now();
  RunResult res;
  auto& man = res.manifest;
  man.experiment = std::string(experiment_name(cfg.experiment));
  man.config = cfg.echo();
  man.master_seed = cfg.master_seed;
  const Params& p = cfg.params;
  const std::uint64_t seed = cfg.master_seed;

  try {
    if (cfg.experiment == Experiment::Validate) {
      const auto report = validate_model(cfg.model, p.value("grid", 20));
      man.checks = report.checks;
      json records = json::array();
      for (const auto& c : report.checks) records.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
      res.artifacts.push_back(json_artifact("report", records));
    } else {
      const ModelSpec spec = validated(cfg.model, p.value("grid", 20));
      switch (cfg.experiment) {
        case Experiment::SimulateChain: {
          const StateVec x0 = state_param(p, spec);
          const ChainConfig cc{p.required<long>("N"), clock_param(p)};
          RandomStream rng(seed, 0);
          const auto traj = simulate_chain(x0, cc, spec, p.required<double>("t"), hit_targets(p), rng);
          bool inside = true;
          for (const auto& s : traj.states)
            for (double v : s.values()) inside = inside && v >= 0.0 && v <= 1.0;
          man.checks.push_back({"states_in_cube", inside, std::to_string(traj.states.size()) + " states"});
          res.artifacts.push_back({"trajectory", "csv", trajectory_csv(traj, spec.m())});
          res.artifacts.push_back({"hits", "csv", hits_csv(traj)});
          break;
        }
        case Experiment::SimulateSde: {
          const StateVec x0 = state_param(p, spec);
          RandomStream rng(seed, 0);
          const auto traj = simulate_sde(x0, spec, sde_param(p, p.required<double>("t")), hit_targets(p), rng);
          bool inside = true;
          for (const auto& s : traj.states)
            for (double v : s.values()) inside = inside && v >= 0.0 && v <= 1.0;
          man.checks.push_back({"states_in_cube", inside, std::to_string(traj.states.size()) + " states"});
          res.artifacts.push_back({"trajectory", "csv", trajectory_csv(traj, spec.m())});
          res.artifacts.push_back({"hits", "csv", hits_csv(traj)});
          res.artifacts.push_back({"summary", "csv",
                                   "Dbar_initial,Dbar_final\n" +
                                       csv_row({format_double(composite_D(traj.states.front(), spec).Dbar),
                                                format_double(composite_D(traj.states.back(), spec).Dbar)})});
          break;
        }
        case Experiment::GeneratorCheck: {
          const Polynomial f = polynomial_param(p, spec);
          const Polynomial Lf = apply_generator(f, spec, Operator::L);
          const int grid = p.value("grid", 100);
          std::string table = "N,sup_error\n";
          std::vector<double> errs;
          for (long N : p.list<long>("N")) {
            population_sizes(spec, N);
            errs.push_back(sup_error_on_grid(discrete_generator_apply(f, spec, N), Lf, grid));
            table += csv_row({std::to_string(N), format_double(errs.back())});
          }
          man.checks.push_back({"sup_error_decreasing", strictly_decreasing(errs), ratios_text(errs)});
          res.artifacts.push_back({"errors", "csv", table});
          break;
        }
        case Experiment::TrotterCheck: {
          const Polynomial f = polynomial_param(p, spec);
          const double t = p.required<double>("t");
          const Polynomial exact = semigroup_matexp(f, spec, t, Operator::L);
          const int grid = p.value("grid", 100);
          std::string table = "n,sup_error\n";
          std::vector<double> errs;
          for (int n : p.list<int>("n_steps")) {
            errs.push_back(sup_error_on_grid(trotter_product(f, spec, t, n), exact, grid));
            table += csv_row({std::to_string(n), format_double(errs.back())});
          }
          man.checks.push_back({"sup_error_decreasing", strictly_decreasing(errs), ratios_text(errs)});
          res.artifacts.push_back({"errors", "csv", table});
          break;
        }
        case Experiment::SemigroupCheck: {
          const Polynomial f = polynomial_param(p, spec);
          const StateVec x0 = state_param(p, spec);
          const double t = p.required<double>("t");
          const auto reps = p.required<std::size_t>("reps");
          detail::check_reps(reps);
          const double tol = p.value("tolerance", 0.01);
          const double exact = poly_eval(semigroup_matexp(f, spec, t, Operator::L), x0);
          std::string table = "source,N,dt,mean,stderr,exact,abs_diff,passed\n";
          auto add = [&](const std::string& source, const std::string& N, const std::string& dt,
                         const McEstimate& e) {
            const double diff = std::fabs(e.mean - exact);
            const bool ok = diff <= 3.0 * e.std_error + tol;
            man.checks.push_back({source + (N.empty() ? "" : "-N" + N) + "_agrees", ok,
                                  "mean " + format_double(e.mean) + " exact " + format_double(exact)});
            table += csv_row({source, N, dt, format_double(e.mean), format_double(e.std_error),
                              format_double(exact), format_double(diff), ok ? "true" : "false"});
          };
          const SdeConfig sc = sde_param(p, t);
          const std::vector<double> at{t};
          const auto v = run_replicates(
              reps, seed, [&](RandomStream& rng, std::size_t) { return f(evolve_sde(x0, spec, sc, at, rng)[0].values()); },
              workers);
          add("sde", "", format_double(sc.dt), summarize(v, seed));
          if (p.has("N"))
            for (long N : p.list<long>("N")) {
              const std::uint64_t s = seed ^ static_cast<std::uint64_t>(N);
              const auto w = run_replicates(
                  reps, s,
                  [&](RandomStream& rng, std::size_t) {
                    return f(evolve_chain(x0, {N, Clock::Poissonized}, spec, t, rng).state.values());
                  },
                  workers);
              add("chain", std::to_string(N), "", summarize(w, s));
            }
          res.artifacts.push_back({"comparison", "csv", table});
          break;
        }
        case Experiment::Absorption: {
          const StateVec x0 = state_param(p, spec);
          const auto est = estimate_absorption(x0, spec, sde_param(p, p.required<double>("horizon")),
                                               p.required<std::size_t>("reps"), seed, workers);
          const double total = est.corner0.mean + est.corner1.mean + est.censored_fraction;
          man.checks.push_back({"complementarity", total == 1.0, "sum " + format_double(total)});
          if (p.has("min_absorbed")) {
            const double absorbed = est.corner0.mean + est.corner1.mean;
            man.checks.push_back({"absorbed_fraction", absorbed >= p.required<double>("min_absorbed"),
                                  "absorbed " + format_double(absorbed)});
          }
          res.artifacts.push_back(json_artifact("report", {{"experiment", "absorption"},
                                                           {"params", p.raw()},
                                                           {"corner_0", estimate_json(est.corner0)},
                                                           {"corner_1", estimate_json(est.corner1)},
                                                           {"censored_fraction", est.censored_fraction},
                                                           {"seed", seed}}));
          break;
        }
        case Experiment::BoundCheck: {
          const StateVec x0 = state_param(p, spec);
          const double alpha = p.required<double>("alpha");
          const auto reps = p.required<std::size_t>("reps");
          const double horizon = p.value("horizon", default_hitting_horizon(spec, x0));
          auto r = check_delta_bound(x0, spec, alpha, sde_param(p, horizon), reps, seed, workers);
          const auto c = composite_D(x0, spec);
          const auto eb = entropy_bounds(spec, r.experiment == "delta-bound-0" ? c.Dbar : c.Dbar_mirror);
          r.extras["entropy_stated_bound"] = eb.stated;
          r.extras["entropy_sharper_bound"] = eb.sharper;
          r.extras["entropy_corrected_bound"] = eb.corrected;
          man.checks.push_back(bound_check_result(r.experiment, r));
          res.artifacts.push_back(json_artifact("report", bound_json(r, p.raw())));
          break;
        }
        case Experiment::HittingTime: {
          const StateVec x0 = state_param(p, spec);
          const double alpha = p.required<double>("alpha");
          const auto reps = p.required<std::size_t>("reps");
          const double horizon = p.value("horizon", default_hitting_horizon(spec, x0));
          const auto r = estimate_mean_hitting_time(x0, spec, alpha, sde_param(p, horizon), reps, seed, workers);
          man.checks.push_back(bound_check_result("entropy_bound", r));
          res.artifacts.push_back(json_artifact("report", bound_json(r, p.raw())));
          break;
        }
        case Experiment::StoppingCheck: {
          const StateVec x0 = state_param(p, spec);
          const double alpha = p.required<double>("alpha");
          const auto reps = p.required<std::size_t>("reps");
          const auto r = optional_stopping_check(x0, spec, alpha, sde_param(p, p.value("horizon", 50.0)), reps, seed,
                                                 p.value("tolerance", 0.01), workers);
          man.checks.push_back(bound_check_result("optional_stopping", r));
          res.artifacts.push_back(json_artifact("report", bound_json(r, p.raw())));
          break;
        }
        case Experiment::Validate:
          break;
      }
    }
    man.status = std::all_of(man.checks.begin(), man.checks.end(), [](const CheckResult& c) { return c.passed; })
                     ? RunStatus::Passed
                     : RunStatus::Failed;
  } catch (const ConfigError& e) {
    man.status = RunStatus::UsageError;
    man.error = e.what();
  } catch (const RangeError& e) {
    man.status = RunStatus::UsageError;
    man.error = e.what();
  } catch (const UnsupportedDriftError& e) {
    man.status = RunStatus::UsageError;
    man.error = e.what();
  } catch (const std::exception& e) {
    man.status = RunStatus::InternalError;
    man.error = e.what();
  }
  const std::string stem = artifact_stem(man.experiment, seed);
  for (const auto& a : res.artifacts) man.artifacts.push_back(stem + "-" + a.kind + "." + a.extension);
  man.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

/// Writes the artifacts and the manifest into dir. Returns the manifest path.
inline std::filesystem::path emit_report(const RunResult& res, const std::filesystem::path& dir) {
  const auto& man = res.manifest;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
  auto write = [&](const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
    out.close();
    if (!out) throw Error("cannot write " + path.string());
  };
  for (std::size_t k = 0; k < res.artifacts.size(); ++k) write(dir / man.artifacts[k], res.artifacts[k].content);
  const auto manifest = dir / (artifact_stem(man.experiment, man.master_seed) + "-manifest.json");
  write(manifest, man.to_json().dump(2) + "\n");
  return manifest;
}

}  // namespace patchdiff
