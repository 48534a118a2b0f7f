#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "diffusion.hpp"
#include "mc.hpp"
#include "model.hpp"
#include "wfchain.hpp"

namespace patchdiff {

inline constexpr std::size_t kMinReps = 100;

enum class BoundKind { Lower, Upper, TwoSided };

/// An empirical estimate compared against a theoretical bound at 3 standard
/// errors. Lower: mean + 3 se >= bound. Upper: mean - 3 se <= bound.
/// TwoSided: scale |mean - bound| <= 3 scale se + tolerance.
struct BoundReport {
  std::string experiment;
  BoundKind kind = BoundKind::Lower;
  double bound_value = 0.0;
  McEstimate estimate;
  double scale = 1.0;
  double tolerance = 0.0;
  bool satisfied = false;
  std::map<std::string, double> extras;

  static bool decide(BoundKind kind, double bound, const McEstimate& e, double scale, double tolerance) {
    switch (kind) {
      case BoundKind::Lower:
        return e.mean + 3.0 * e.std_error + tolerance >= bound;
      case BoundKind::Upper:
        return e.mean - 3.0 * e.std_error - tolerance <= bound;
      case BoundKind::TwoSided:
        return scale * std::fabs(e.mean - bound) <= 3.0 * scale * e.std_error + tolerance;
    }
    return false;
  }

  bool consistent() const { return satisfied == decide(kind, bound_value, estimate, scale, tolerance); }
};

inline BoundReport make_bound_report(std::string experiment, BoundKind kind, double bound, McEstimate est,
                                     double scale = 1.0, double tolerance = 0.0) {
  BoundReport r{std::move(experiment), kind, bound, est, scale, tolerance, false, {}};
  r.satisfied = BoundReport::decide(kind, bound, est, scale, tolerance);
  return r;
}

struct AbsorptionEstimate {
  McEstimate corner0;
  McEstimate corner1;
  double censored_fraction = 0.0;
  std::size_t hits0 = 0;
  std::size_t hits1 = 0;
  std::size_t censored = 0;
};

namespace detail {

inline void check_reps(std::size_t reps) {
  if (reps < kMinReps) throw ConfigError("Monte Carlo experiments need at least 100 replicates");
}

inline std::vector<double> indicator(const std::vector<char>& flags) {
  return std::vector<double>(flags.begin(), flags.end());
}

}  // namespace detail

/// Fractions of diffusion paths absorbed at 0 and at 1 by the horizon.
inline AbsorptionEstimate estimate_absorption(const StateVec& x0, const ModelSpec& spec, const SdeConfig& cfg,
                                              std::size_t reps, std::uint64_t seed,
                                              int workers = default_workers()) {
  require_validated(spec);
  detail::check_reps(reps);
  cfg.check();
  const auto outcomes = run_replicates(
      reps, seed, [&](RandomStream& rng, std::size_t) { return sde_absorption(x0, spec, cfg, rng).corner; },
      workers);
  std::vector<char> zero(reps), one(reps);
  AbsorptionEstimate est;
  for (std::size_t r = 0; r < reps; ++r) {
    zero[r] = outcomes[r] == Corner::Zero;
    one[r] = outcomes[r] == Corner::One;
    est.hits0 += static_cast<std::size_t>(zero[r]);
    est.hits1 += static_cast<std::size_t>(one[r]);
  }
  est.censored = reps - est.hits0 - est.hits1;
  est.corner0 = summarize(detail::indicator(zero), seed);
  est.corner1 = summarize(detail::indicator(one), seed);
  est.censored_fraction = 1.0 - (est.corner0.mean + est.corner1.mean);
  est.corner0.censored_fraction = est.censored_fraction;
  est.corner1.censored_fraction = est.censored_fraction;
  return est;
}

/// Lower bound P_x[T_0 < inf] >= 1 - D(x)/alpha on Delta^0, and the mirrored
/// bound P_x[T_1 < inf] >= 1 - D(1-x)/alpha on Delta^1. Censored paths count
/// as not absorbed, which only lowers the estimate.
inline BoundReport check_delta_bound(const StateVec& x0, const ModelSpec& spec, double alpha, const SdeConfig& cfg,
                                     std::size_t reps, std::uint64_t seed, int workers = default_workers()) {
  const auto region = delta_membership(x0, spec, alpha);
  if (region == DeltaRegion::Neither) throw ConfigError("initial state lies in neither Delta set");
  const auto c = composite_D(x0, spec);
  const auto est = estimate_absorption(x0, spec, cfg, reps, seed, workers);
  const bool low = region == DeltaRegion::Delta0;
  const double D = low ? c.Dbar : c.Dbar_mirror;
  auto report = make_bound_report(low ? "delta-bound-0" : "delta-bound-1", BoundKind::Lower, 1.0 - D / alpha,
                                  low ? est.corner0 : est.corner1);
  report.extras = {{"alpha", alpha}, {"Dbar", D}, {"censored_fraction", est.censored_fraction}};
  return report;
}

/// Entropy bound constants at D = D(x0): u(D), (dprod/2) u(D), and
/// dprod u(D), the constant Ito's formula gives for u(D) with the 1/2 kept.
struct EntropyBounds {
  double stated;
  double sharper;
  double corrected;
};

inline EntropyBounds entropy_bounds(const ModelSpec& spec, double Dbar) {
  const double u = entropy_u(Dbar);
  return {u, 0.5 * spec.dprod() * u, spec.dprod() * u};
}

// 50 times the sharper mean bound, never shorter than 1.
inline double default_hitting_horizon(const ModelSpec& spec, const StateVec& x0) {
  return std::max(1.0, 50.0 * entropy_bounds(spec, composite_D(x0, spec).Dbar).sharper);
}

/// Mean exit time of D from (0, alpha) against (dprod/2) u(D(x0)).
/// Censored paths contribute the horizon.
inline BoundReport estimate_mean_hitting_time(const StateVec& x0, const ModelSpec& spec, double alpha,
                                              const SdeConfig& cfg, std::size_t reps, std::uint64_t seed,
                                              int workers = default_workers()) {
  require_validated(spec);
  detail::check_reps(reps);
  if (delta_membership(x0, spec, alpha) != DeltaRegion::Delta0)
    throw ConfigError("mean hitting time needs an initial state in Delta^0");
  const auto outcomes = run_replicates(
      reps, seed, [&](RandomStream& rng, std::size_t) { return sde_dbar_exit(x0, spec, cfg, alpha, rng); }, workers);
  std::vector<double> times(reps);
  std::size_t censored = 0;
  for (std::size_t r = 0; r < reps; ++r) {
    times[r] = outcomes[r].time;
    censored += outcomes[r].exit == DbarExit::Censored;
  }
  auto est = summarize(times, seed);
  est.censored_fraction = static_cast<double>(censored) / static_cast<double>(reps);
  const double D = composite_D(x0, spec).Dbar;
  const auto bounds = entropy_bounds(spec, D);
  auto report = make_bound_report("hitting-time", BoundKind::Upper, bounds.sharper, est);
  report.extras = {{"alpha", alpha},
                   {"Dbar", D},
                   {"stated_bound", bounds.stated},
                   {"sharper_bound", bounds.sharper},
                   {"corrected_bound", bounds.corrected},
                   {"horizon", cfg.t_max},
                   {"censored_fraction", est.censored_fraction}};
  return report;
}

/// Optional stopping for the bounded martingale D: D(x0) = alpha P[D hits
/// alpha before 0]. The estimate is that probability; bound_value is
/// D(x0)/alpha.
inline BoundReport optional_stopping_check(const StateVec& x0, const ModelSpec& spec, double alpha,
                                           const SdeConfig& cfg, std::size_t reps, std::uint64_t seed,
                                           double scheme_tolerance = 0.01, int workers = default_workers()) {
  require_validated(spec);
  detail::check_reps(reps);
  if (delta_membership(x0, spec, alpha) != DeltaRegion::Delta0)
    throw ConfigError("optional stopping check needs an initial state in Delta^0");
  const auto outcomes = run_replicates(
      reps, seed, [&](RandomStream& rng, std::size_t) { return sde_dbar_exit(x0, spec, cfg, alpha, rng).exit; },
      workers);
  std::vector<double> high(reps);
  std::size_t censored = 0;
  for (std::size_t r = 0; r < reps; ++r) {
    high[r] = outcomes[r] == DbarExit::High ? 1.0 : 0.0;
    censored += outcomes[r] == DbarExit::Censored;
  }
  auto est = summarize(high, seed);
  est.censored_fraction = static_cast<double>(censored) / static_cast<double>(reps);
  const double D = composite_D(x0, spec).Dbar;
  auto report = make_bound_report("stopping-check", BoundKind::TwoSided, D / alpha, est, alpha, scheme_tolerance);
  report.extras = {{"alpha", alpha}, {"Dbar", D}, {"censored_fraction", est.censored_fraction}};
  return report;
}

struct MartingaleRow {
  std::string source;  // "sde" or "chain"
  double time = 0.0;
  McEstimate estimate;
  double target = 0.0;
  bool passed = false;
};

struct MartingaleReport {
  std::vector<MartingaleRow> rows;

  bool all_passed() const {
    for (const auto& r : rows)
      if (!r.passed) return false;
    return true;
  }
};

// Admissible N used for the chain half of the martingale check by default.
inline long default_chain_n(const ModelSpec& spec) {
  const long q = spec.denominator().value_or(1);
  const long lo = std::max(spec.n_min(), 100L);
  return ((lo + q - 1) / q) * q;
}

/// For each t: |mean D(X_t) - D(x0)| <= 3 se, for the diffusion and for the
/// embedded chain (whose D is the conserved mass over N dprod).
inline MartingaleReport martingale_drift_check(const StateVec& x0, const ModelSpec& spec,
                                               const std::vector<double>& times, const SdeConfig& cfg,
                                               std::size_t reps, std::uint64_t seed,
                                               std::optional<ChainConfig> chain = std::nullopt,
                                               int workers = default_workers()) {
  require_validated(spec);
  detail::check_reps(reps);
  for (double t : times)
    if (!(t > 0.0)) throw ConfigError("martingale check times must be positive");
  std::vector<double> sorted = times;
  std::sort(sorted.begin(), sorted.end());
  const double target = composite_D(x0, spec).Dbar;
  MartingaleReport report;

  const auto sde_paths = run_replicates(
      reps, seed,
      [&](RandomStream& rng, std::size_t) {
        const auto states = evolve_sde(x0, spec, cfg, sorted, rng);
        std::vector<double> D;
        for (const auto& s : states) D.push_back(weighted_mass(spec, s.values()));
        return D;
      },
      workers);

  const ChainConfig ccfg = chain.value_or(ChainConfig{default_chain_n(spec), Clock::Embedded});
  const auto chain_paths = run_replicates(
      reps, seed ^ 0x9E3779B97F4A7C15ull,
      [&](RandomStream& rng, std::size_t) {
        std::vector<double> D;
        StateVec x = x0;
        double now = 0.0;
        for (double t : sorted) {
          x = evolve_chain(x, ccfg, spec, t - now, rng).state;
          now = t;
          D.push_back(weighted_mass(spec, x.values()));
        }
        return D;
      },
      workers);

  auto add_rows = [&](const std::string& source, const std::vector<std::vector<double>>& paths,
                      std::uint64_t s) {
    for (std::size_t k = 0; k < sorted.size(); ++k) {
      std::vector<double> v(reps);
      for (std::size_t r = 0; r < reps; ++r) v[r] = paths[r][k];
      const auto est = summarize(v, s);
      report.rows.push_back({source, sorted[k], est, target, std::fabs(est.mean - target) <= 3.0 * est.std_error});
    }
  };
  add_rows("sde", sde_paths, seed);
  add_rows("chain", chain_paths, seed ^ 0x9E3779B97F4A7C15ull);
  return report;
}

}  // namespace patchdiff
