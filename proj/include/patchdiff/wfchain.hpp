#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "model.hpp"
#include "rng.hpp"
#include "targets.hpp"

namespace patchdiff {

enum class Clock { Embedded, Poissonized };

struct ChainConfig {
  long N = 0;
  Clock clock = Clock::Poissonized;
};

/// sum_i d_i N x_i, the number of species-alpha individuals.
inline double conserved_mass(const StateVec& x, const ModelSpec& spec, long N) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    s += spec.distortion(i) * static_cast<double>(N) * x[i];
  return s;
}

namespace detail {

inline void reproduce_inplace(std::span<double> x, std::span<const long> sizes, RandomStream& rng) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long k = rng.binomial(sizes[i], x[i]);
    x[i] = static_cast<double>(k) / static_cast<double>(sizes[i]);
  }
}

// One generation: binomial reproduction, then exchange.
inline void chain_step_inplace(const ModelSpec& spec, double N, std::span<const long> sizes,
                               std::span<double> x, std::span<double> scratch, RandomStream& rng) {
  reproduce_inplace(x, sizes, rng);
  exchange_inplace(spec, N, x, scratch);
}

}  // namespace detail

/// Neutral Wright-Fisher reproduction in every patch: x_i <- k_i / N_i with
/// k_i ~ Binomial(N_i, x_i).
inline StateVec wf_reproduce(const StateVec& x, const ModelSpec& spec, long N, RandomStream& rng) {
  require_dim(spec, x);
  const auto sizes = population_sizes(spec, N);
  std::vector<double> y = x.vector();
  detail::reproduce_inplace(y, sizes, rng);
  return StateVec(std::move(y));
}

/// Reproduction followed by migration, matching T f = B_N(f o Phi_N).
inline StateVec chain_step(const StateVec& x, const ModelSpec& spec, long N, RandomStream& rng) {
  require_validated(spec);
  require_dim(spec, x);
  const auto sizes = population_sizes(spec, N);
  std::vector<double> y = x.vector();
  std::vector<double> scratch(spec.m());
  detail::chain_step_inplace(spec, static_cast<double>(N), sizes, y, scratch, rng);
  return StateVec(std::move(y));
}

// Number of generations of the embedded chain up to time t.
inline long embedded_steps(double t, long N) {
  return static_cast<long>(std::floor(t * static_cast<double>(N) * (1.0 + 1e-12)));
}

/// Chain trajectory on [0, t_max]. The embedded clock places generation k at
/// k/N; the Poissonized clock uses i.i.d. Exponential(N) holding times.
/// Recording stops at t_max or at absorption into {0, 1}.
inline Trajectory simulate_chain(const StateVec& x0, const ChainConfig& cfg, const ModelSpec& spec,
                                 double t_max, const std::vector<Target>& targets,
                                 RandomStream& rng) {
  require_validated(spec);
  require_dim(spec, x0);
  if (!(t_max > 0.0)) throw DomainError("t_max must be positive");
  const auto sizes = population_sizes(spec, cfg.N);
  const double N = static_cast<double>(cfg.N);

  Trajectory traj;
  detail::HitTracker tracker(spec, targets);
  std::vector<double> x = x0.vector();
  std::vector<double> scratch(spec.m());
  auto record = [&](double t) {
    traj.times.push_back(t);
    traj.states.emplace_back(x);
    tracker.observe(t, x);
  };
  record(0.0);

  if (cfg.clock == Clock::Embedded) {
    const long steps = embedded_steps(t_max, cfg.N);
    for (long k = 1; k <= steps && !detail::at_corner(x); ++k) {
      detail::chain_step_inplace(spec, N, sizes, x, scratch, rng);
      record(static_cast<double>(k) / N);
    }
  } else {
    double t = 0.0;
    while (!detail::at_corner(x)) {
      t += rng.exponential(N);
      if (t > t_max) break;
      detail::chain_step_inplace(spec, N, sizes, x, scratch, rng);
      record(t);
    }
  }
  traj.hits = tracker.records();
  return traj;
}

struct ChainEndpoint {
  StateVec state;
  long jumps = 0;
};

/// State of the chain at time t without storing the path.
inline ChainEndpoint evolve_chain(const StateVec& x0, const ChainConfig& cfg, const ModelSpec& spec,
                                  double t, RandomStream& rng) {
  require_validated(spec);
  require_dim(spec, x0);
  if (t < 0.0) throw DomainError("time must be nonnegative");
  const auto sizes = population_sizes(spec, cfg.N);
  const double N = static_cast<double>(cfg.N);
  std::vector<double> x = x0.vector();
  std::vector<double> scratch(spec.m());
  long jumps = 0;
  if (cfg.clock == Clock::Embedded) {
    const long steps = embedded_steps(t, cfg.N);
    for (; jumps < steps; ++jumps)
      if (!detail::at_corner(x)) detail::chain_step_inplace(spec, N, sizes, x, scratch, rng);
  } else {
    double s = rng.exponential(N);
    while (s <= t) {
      ++jumps;
      if (!detail::at_corner(x)) detail::chain_step_inplace(spec, N, sizes, x, scratch, rng);
      s += rng.exponential(N);
    }
  }
  return {StateVec(std::move(x)), jumps};
}

}  // namespace patchdiff
