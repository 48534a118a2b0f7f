#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "model.hpp"
#include "rng.hpp"
#include "targets.hpp"

namespace patchdiff {

enum class Scheme { FullTruncationEuler };

struct SdeConfig {
  double dt = 1e-3;
  Scheme scheme = Scheme::FullTruncationEuler;
  double t_max = 1.0;
  double corner_tol = 1e-6;

  void check() const {
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (!(t_max > 0.0)) throw ConfigError("t_max must be positive");
    if (!(corner_tol > 0.0 && corner_tol < 1e-3)) throw ConfigError("corner_tol must lie in (0, 1e-3)");
  }
};

struct CompositeState {
  double Dbar = 0.0;
  double Dbar_mirror = 0.0;
};

inline CompositeState composite_D(const StateVec& x, const ModelSpec& spec) {
  require_dim(spec, x);
  return {weighted_mass(spec, x.values()), weighted_mass_mirror(spec, x.values())};
}

// D(1), the value of the composite statistic at the all-ones corner.
inline double composite_D_one(const ModelSpec& spec) {
  double s = 0.0;
  for (double v : spec.distortions()) s += v;
  return s / spec.dprod();
}

/// u(r) = -2 (r ln r + (1-r) ln(1-r)), continuously extended by 0 at the
/// endpoints.
inline double entropy_u(double r) {
  if (!(r >= 0.0 && r <= 1.0)) throw DomainError("entropy_u needs r in [0,1]");
  const auto xlogx = [](double v) { return v > 0.0 ? v * std::log(v) : 0.0; };
  return -2.0 * (xlogx(r) + xlogx(1.0 - r));
}

enum class DeltaRegion { Delta0, Delta1, Neither };

inline void check_alpha(const ModelSpec& spec, double alpha) {
  const double hi = std::min(1.0, composite_D_one(spec));
  if (!(alpha > 0.0 && alpha <= hi)) throw ConfigError("alpha must lie in (0, min(1, D(1))]");
}

inline DeltaRegion delta_membership(const StateVec& x, const ModelSpec& spec, double alpha) {
  check_alpha(spec, alpha);
  const auto c = composite_D(x, spec);
  if (c.Dbar < alpha) return DeltaRegion::Delta0;
  if (c.Dbar_mirror < alpha) return DeltaRegion::Delta1;
  return DeltaRegion::Neither;
}

namespace detail {

// Full-truncation Euler-Maruyama step of length h driven by the Brownian
// increments dW.
inline void sde_increment_inplace(const ModelSpec& spec, double h, std::span<double> x, std::span<double> b,
                                  std::span<const double> dW) {
  spec.drift_into(x, b);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double var = std::max(x[i] * (1.0 - x[i]), 0.0) / spec.distortion(i);
    x[i] = std::clamp(x[i] + b[i] * h + std::sqrt(var) * dW[i], 0.0, 1.0);
  }
}

inline void sde_step_inplace(const ModelSpec& spec, double h, std::span<double> x, std::span<double> b,
                             RandomStream& rng) {
  thread_local std::vector<double> dW;
  dW.resize(x.size());
  const double sqrt_h = std::sqrt(h);
  for (double& w : dW) w = sqrt_h * rng.normal();
  sde_increment_inplace(spec, h, x, b, dW);
}

// Snaps x onto a corner when it is within eps of it in the max norm.
inline bool snap_to_corner(std::span<double> x, double eps) {
  bool near0 = true;
  bool near1 = true;
  for (double v : x) {
    near0 = near0 && v <= eps;
    near1 = near1 && v >= 1.0 - eps;
  }
  if (near0) std::fill(x.begin(), x.end(), 0.0);
  else if (near1) std::fill(x.begin(), x.end(), 1.0);
  return near0 || near1;
}

// Uniform substeps covering [from, to], none longer than dt.
struct StepPlan {
  long steps;
  double h;
};

inline StepPlan plan_steps(double from, double to, double dt) {
  const double span = to - from;
  if (span <= 0.0) return {0, 0.0};
  const long n = std::max(1L, static_cast<long>(std::ceil(span / dt - 1e-9)));
  return {n, span / static_cast<double>(n)};
}

}  // namespace detail

/// One full-truncation Euler step: the diffusion argument x(1-x) is clamped
/// at zero and the result is clamped into [0,1]. Corners stay fixed.
inline StateVec sde_step(const StateVec& x, const ModelSpec& spec, double dt, RandomStream& rng) {
  require_validated(spec);
  require_dim(spec, x);
  if (!(dt > 0.0)) throw DomainError("dt must be positive");
  std::vector<double> y = x.vector();
  std::vector<double> b(spec.m());
  detail::sde_step_inplace(spec, dt, y, b, rng);
  return StateVec(std::move(y));
}

/// Path of the diffusion on [0, t_max]. Once the state comes within
/// corner_tol of 0 or 1 it is snapped there and the path ends.
inline Trajectory simulate_sde(const StateVec& x0, const ModelSpec& spec, const SdeConfig& cfg,
                               const std::vector<Target>& targets, RandomStream& rng) {
  require_validated(spec);
  require_dim(spec, x0);
  cfg.check();
  Trajectory traj;
  detail::HitTracker tracker(spec, targets);
  std::vector<double> x = x0.vector();
  std::vector<double> b(spec.m());
  bool frozen = detail::snap_to_corner(x, cfg.corner_tol);
  auto record = [&](double t) {
    traj.times.push_back(t);
    traj.states.emplace_back(x);
    tracker.observe(t, x);
  };
  record(0.0);
  const auto plan = detail::plan_steps(0.0, cfg.t_max, cfg.dt);
  for (long k = 1; k <= plan.steps && !frozen; ++k) {
    detail::sde_step_inplace(spec, plan.h, x, b, rng);
    frozen = detail::snap_to_corner(x, cfg.corner_tol);
    record(k == plan.steps ? cfg.t_max : static_cast<double>(k) * plan.h);
  }
  traj.hits = tracker.records();
  return traj;
}

/// States at the requested (nondecreasing) times along one path.
inline std::vector<StateVec> evolve_sde(const StateVec& x0, const ModelSpec& spec, const SdeConfig& cfg,
                                        std::span<const double> times, RandomStream& rng) {
  require_validated(spec);
  require_dim(spec, x0);
  if (!(cfg.dt > 0.0)) throw ConfigError("dt must be positive");
  std::vector<double> x = x0.vector();
  std::vector<double> b(spec.m());
  bool frozen = detail::snap_to_corner(x, cfg.corner_tol);
  std::vector<StateVec> out;
  out.reserve(times.size());
  double now = 0.0;
  for (double t : times) {
    if (t < now) throw DomainError("observation times must be nondecreasing and nonnegative");
    const auto plan = detail::plan_steps(now, t, cfg.dt);
    for (long k = 0; k < plan.steps && !frozen; ++k) {
      detail::sde_step_inplace(spec, plan.h, x, b, rng);
      frozen = detail::snap_to_corner(x, cfg.corner_tol);
    }
    now = t;
    out.emplace_back(x);
  }
  return out;
}

/// Coarse (step dt) and fine (step dt/2) paths driven by the same Brownian
/// increments; each coarse increment is the sum of two fine ones.
inline std::pair<StateVec, StateVec> evolve_sde_coupled(const StateVec& x0, const ModelSpec& spec,
                                                        const SdeConfig& cfg, double t,
                                                        RandomStream& rng) {
  require_validated(spec);
  require_dim(spec, x0);
  const std::size_t m = spec.m();
  std::vector<double> xc = x0.vector(), xf = x0.vector(), bc(m), bf(m), z1(m), z2(m);
  bool frozen_c = detail::snap_to_corner(xc, cfg.corner_tol);
  bool frozen_f = detail::snap_to_corner(xf, cfg.corner_tol);
  const auto plan = detail::plan_steps(0.0, t, cfg.dt);
  const double h = plan.h;
  const double sqrt_half = std::sqrt(h / 2.0);
  for (long k = 0; k < plan.steps && !(frozen_c && frozen_f); ++k) {
    for (std::size_t i = 0; i < m; ++i) z1[i] = sqrt_half * rng.normal();
    for (std::size_t i = 0; i < m; ++i) z2[i] = sqrt_half * rng.normal();
    if (!frozen_f) detail::sde_increment_inplace(spec, h / 2.0, xf, bf, z1);
    frozen_f = frozen_f || detail::snap_to_corner(xf, cfg.corner_tol);
    if (!frozen_f) detail::sde_increment_inplace(spec, h / 2.0, xf, bf, z2);
    frozen_f = frozen_f || detail::snap_to_corner(xf, cfg.corner_tol);
    if (!frozen_c) {
      for (std::size_t i = 0; i < m; ++i) z1[i] += z2[i];
      detail::sde_increment_inplace(spec, h, xc, bc, z1);
      frozen_c = detail::snap_to_corner(xc, cfg.corner_tol);
    }
  }
  return {StateVec(std::move(xc)), StateVec(std::move(xf))};
}

enum class Corner { None, Zero, One };

struct AbsorptionOutcome {
  Corner corner = Corner::None;
  double time = 0.0;  // horizon when corner == None
};

inline AbsorptionOutcome sde_absorption(const StateVec& x0, const ModelSpec& spec, const SdeConfig& cfg,
                                        RandomStream& rng) {
  require_validated(spec);
  require_dim(spec, x0);
  cfg.check();
  std::vector<double> x = x0.vector();
  std::vector<double> b(spec.m());
  auto corner_of = [&]() { return x[0] == 0.0 ? Corner::Zero : Corner::One; };
  if (detail::snap_to_corner(x, cfg.corner_tol)) return {corner_of(), 0.0};
  const auto plan = detail::plan_steps(0.0, cfg.t_max, cfg.dt);
  for (long k = 1; k <= plan.steps; ++k) {
    detail::sde_step_inplace(spec, plan.h, x, b, rng);
    if (detail::snap_to_corner(x, cfg.corner_tol)) return {corner_of(), static_cast<double>(k) * plan.h};
  }
  return {Corner::None, cfg.t_max};
}

enum class DbarExit { Low, High, Censored };

struct DbarExitOutcome {
  DbarExit exit = DbarExit::Censored;
  double time = 0.0;  // horizon when censored
};

/// First grid time at which D leaves (0, alpha): Low when the path is
/// snapped onto corner 0, High when D >= alpha.
inline DbarExitOutcome sde_dbar_exit(const StateVec& x0, const ModelSpec& spec, const SdeConfig& cfg,
                                     double alpha, RandomStream& rng) {
  require_validated(spec);
  require_dim(spec, x0);
  cfg.check();
  std::vector<double> x = x0.vector();
  std::vector<double> b(spec.m());
  auto classify = [&](double t) -> std::optional<DbarExitOutcome> {
    detail::snap_to_corner(x, cfg.corner_tol);
    const double D = weighted_mass(spec, x);
    if (D >= alpha) return DbarExitOutcome{DbarExit::High, t};
    if (D <= 0.0) return DbarExitOutcome{DbarExit::Low, t};
    return std::nullopt;
  };
  if (auto r = classify(0.0)) return *r;
  const auto plan = detail::plan_steps(0.0, cfg.t_max, cfg.dt);
  for (long k = 1; k <= plan.steps; ++k) {
    detail::sde_step_inplace(spec, plan.h, x, b, rng);
    if (auto r = classify(static_cast<double>(k) * plan.h)) return *r;
  }
  return {DbarExit::Censored, cfg.t_max};
}

}  // namespace patchdiff
