#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "patchdiff/absorption.hpp"
#include "patchdiff/semigroup.hpp"

using namespace patchdiff;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  std::vector<double> fingerprint;  // numbers that must repeat bit for bit
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

Polynomial x1sq_x2() {
  Polynomial f(2);
  f.add_term({2, 1}, 1.0);
  return f;
}

ModelSpec model_half() { return validated(two_patch_model(0.5, 1.0)); }
ModelSpec model_equal() { return validated(two_patch_model(1.0, 1.0)); }

const StateVec kX0{0.3, 0.6};
constexpr double kT = 0.5;
constexpr std::uint64_t kSeed = 20240601;

// u(t, .) = exp((T - t) L) f tabulated on a time grid, with first and second
// derivatives, all as coefficient vectors over the monomial basis of P_n.
class ValueProfile {
 public:
  ValueProfile(const ModelSpec& spec, const Polynomial& f, double T, long steps)
      : m_(spec.m()), basis_(monomial_basis(spec.m(), f.degree())) {
    const auto L = generator_matrix(spec, Operator::L, f.degree());
    const Eigen::MatrixXd E = (T / static_cast<double>(steps) * L.entries).exp();
    u_.resize(static_cast<std::size_t>(steps) + 1);
    u_.back() = L.coefficients(f);
    for (long k = steps - 1; k >= 0; --k) u_[static_cast<std::size_t>(k)] = E * u_[static_cast<std::size_t>(k) + 1];
    std::vector<Eigen::MatrixXd> d;
    for (std::size_t i = 0; i < m_; ++i)
      d.push_back(operator_matrix(m_, f.degree(), [i](const Polynomial& g) { return g.partial(i); }).entries);
    const std::size_t dim = basis_.size();
    grad_.assign(u_.size(), Eigen::MatrixXd(dim, m_));
    hess_.assign(u_.size(), Eigen::MatrixXd(dim, m_ * m_));
    for (std::size_t k = 0; k < u_.size(); ++k)
      for (std::size_t i = 0; i < m_; ++i) {
        const auto ci = static_cast<Eigen::Index>(i);
        grad_[k].col(ci) = d[i] * u_[k];
        for (std::size_t j = 0; j < m_; ++j)
          hess_[k].col(static_cast<Eigen::Index>(i * m_ + j)) = d[j] * grad_[k].col(ci);
      }
  }

  long steps() const { return static_cast<long>(u_.size()) - 1; }
  const Eigen::VectorXd& u(long k) const { return u_[static_cast<std::size_t>(k)]; }
  // Columns d_i u and d_i d_j u (index i m + j) at grid point k.
  const Eigen::MatrixXd& grad(long k) const { return grad_[static_cast<std::size_t>(k)]; }
  const Eigen::MatrixXd& hess(long k) const { return hess_[static_cast<std::size_t>(k)]; }
  std::size_t dim() const { return basis_.size(); }

  // Monomials of P_n evaluated at x.
  void features(std::span<const double> x, Eigen::VectorXd& phi) const {
    phi.resize(static_cast<Eigen::Index>(basis_.size()));
    for (std::size_t k = 0; k < basis_.size(); ++k) {
      double v = 1.0;
      for (std::size_t i = 0; i < m_; ++i)
        for (int e = 0; e < basis_[k][i]; ++e) v *= x[i];
      phi(static_cast<Eigen::Index>(k)) = v;
    }
  }

 private:
  std::size_t m_;
  std::vector<MultiIndex> basis_;
  std::vector<Eigen::VectorXd> u_;
  std::vector<Eigen::MatrixXd> grad_;
  std::vector<Eigen::MatrixXd> hess_;
};

// Zero-mean martingale increment for one Euler step from x with Brownian
// increments dW, using the first and second derivatives of u at the step end.
struct ItoCorrection {
  const ValueProfile& profile;
  const ModelSpec& spec;
  Eigen::VectorXd phi, g, H;

  double operator()(long k_end, std::span<const double> x, std::span<const double> dW, double h) {
    const std::size_t m = spec.m();
    profile.features(x, phi);
    g.noalias() = profile.grad(k_end).transpose() * phi;
    H.noalias() = profile.hess(k_end).transpose() * phi;
    std::array<double, 8> sigma{};
    for (std::size_t i = 0; i < m; ++i)
      sigma[i] = std::sqrt(std::max(x[i] * (1.0 - x[i]), 0.0) / spec.distortion(i));
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      total += g(static_cast<Eigen::Index>(i)) * sigma[i] * dW[i];
      for (std::size_t j = 0; j < m; ++j) {
        const double centred = dW[i] * dW[j] - (i == j ? h : 0.0);
        total += 0.5 * H(static_cast<Eigen::Index>(i * m + j)) * sigma[i] * sigma[j] * centred;
      }
    }
    return total;
  }
};

struct CoupledSample {
  double plain_coarse, plain_fine, cv_coarse, cv_fine;
};

// Coarse (dt) and fine (dt/2) Euler paths sharing Brownian increments, each
// with its plain value f(X_T) and its control-variate value.
std::vector<CoupledSample> coupled_sde_samples(const ModelSpec& spec, const Polynomial& f, double dt,
                                               std::size_t reps, int workers) {
  const auto plan = detail::plan_steps(0.0, kT, dt);
  const ValueProfile profile(spec, f, kT, 2 * plan.steps);
  const double h = plan.h;
  const double half = h / 2.0;
  return run_replicates(
      reps, kSeed,
      [&](RandomStream& rng, std::size_t) {
        const std::size_t m = spec.m();
        ItoCorrection cv{profile, spec, {}, {}, {}};
        std::vector<double> xc = kX0.vector(), xf = kX0.vector(), b(m), z1(m), z2(m), zc(m), before(m);
        double corr_c = 0.0, corr_f = 0.0;
        bool frozen_c = false, frozen_f = false;
        const double sqrt_half = std::sqrt(half);
        for (long k = 0; k < plan.steps; ++k) {
          for (auto& z : z1) z = sqrt_half * rng.normal();
          for (auto& z : z2) z = sqrt_half * rng.normal();
          for (const auto& [zs, sub] : {std::pair{&z1, 0L}, std::pair{&z2, 1L}}) {
            if (frozen_f) break;
            before = xf;
            corr_f += cv(2 * k + sub + 1, before, *zs, half);
            detail::sde_increment_inplace(spec, half, xf, b, *zs);
            frozen_f = detail::snap_to_corner(xf, 1e-6);
          }
          if (!frozen_c) {
            for (std::size_t i = 0; i < m; ++i) zc[i] = z1[i] + z2[i];
            before = xc;
            corr_c += cv(2 * k + 2, before, zc, h);
            detail::sde_increment_inplace(spec, h, xc, b, zc);
            frozen_c = detail::snap_to_corner(xc, 1e-6);
          }
        }
        const double fc = f(xc), ff = f(xf);
        return CoupledSample{fc, ff, fc - corr_c, ff - corr_f};
      },
      workers);
}

McEstimate column(const std::vector<CoupledSample>& s, double CoupledSample::*field) {
  std::vector<double> v(s.size());
  for (std::size_t r = 0; r < s.size(); ++r) v[r] = s[r].*field;
  return summarize(v, kSeed);
}

Outcome criterion1(int) {
  const auto spec = model_half();
  double worst = 0.0;
  for (long N : {40L, 80L, 160L})
    for (std::size_t i = 0; i < 2; ++i) {
      MultiIndex sq(2, 0);
      sq[i] = 2;
      const Polynomial xi2 = Polynomial::monomial(sq);
      Polynomial lhs = (bernstein_apply(xi2, spec, N) - xi2) * static_cast<double>(N);
      const Polynomial xi = Polynomial::variable(2, i);
      const Polynomial rhs = (xi - xi2) * (1.0 / spec.distortion(i));
      worst = std::max(worst, coeff_distance(lhs, rhs));
    }
  return {worst <= 1e-12, fmt("max coefficient error %.3e (tol 1e-12)", worst), {}};
}

Outcome criterion2(int) {
  const auto spec = model_half();
  const auto f = x1sq_x2();
  const Polynomial Lf = apply_generator(f, spec, Operator::L);
  std::vector<double> err;
  for (long N : {40L, 80L, 160L}) err.push_back(sup_error_on_grid(discrete_generator_apply(f, spec, N), Lf, 100));
  const double r1 = err[0] / err[1], r2 = err[1] / err[2];
  const bool ok = err[0] > err[1] && err[1] > err[2] && r1 >= 1.6 && r1 <= 2.4 && r2 >= 1.6 && r2 <= 2.4;
  return {ok, fmt("sup errors %.6g %.6g %.6g, ratios %.4f %.4f", err[0], err[1], err[2], r1, r2), {}};
}

Outcome criterion3(int workers) {
  const auto spec = model_half();
  const auto f = x1sq_x2();
  const double exact = poly_eval(semigroup_matexp(f, spec, kT, Operator::L), kX0);
  const auto samples = coupled_sde_samples(spec, f, 1e-3, 100000, workers);
  const auto plain = column(samples, &CoupledSample::plain_coarse);
  const auto plain_half = column(samples, &CoupledSample::plain_fine);
  const auto cv = column(samples, &CoupledSample::cv_coarse);
  const auto cv_half = column(samples, &CoupledSample::cv_fine);
  const double gap = std::fabs(plain.mean - exact);
  const bool agree = gap <= 3.0 * plain.std_error + 0.01;
  const double gap_dt = std::fabs(cv.mean - exact);
  const double gap_half = std::fabs(cv_half.mean - exact);
  const bool shrinks = gap_half < gap_dt;
  return {agree && shrinks,
          fmt("exact %.8f, MC %.8f (se %.2e), |diff| %.2e; control-variate discrepancy dt=1e-3: %.3e (se %.1e), "
              "dt=5e-4: %.3e (se %.1e); plain dt=5e-4 |diff| %.2e",
              exact, plain.mean, plain.std_error, gap, gap_dt, cv.std_error, gap_half, cv_half.std_error,
              std::fabs(plain_half.mean - exact)),
          {plain.mean, plain.std_error, plain_half.mean, cv.mean, cv_half.mean}};
}

struct ChainSample {
  double plain, cv;
};

// Poissonized chain at time kT; the control variate subtracts
// u(X_j) - (T u)(X_{j-1}) at every jump, u frozen on a time grid.
std::vector<ChainSample> chain_samples(const ModelSpec& spec, const Polynomial& f, long N, std::size_t reps,
                                       int workers) {
  constexpr long kGrid = 2000;
  const ValueProfile profile(spec, f, kT, kGrid);
  const auto T = operator_matrix(spec.m(), f.degree(), [&](const Polynomial& g) {
    return bernstein_apply(compose_exchange(g, spec, N), spec, N);
  });
  std::vector<Eigen::VectorXd> Tu(kGrid + 1);
  for (long k = 0; k <= kGrid; ++k) Tu[static_cast<std::size_t>(k)] = T.entries * profile.u(k);
  const auto sizes = population_sizes(spec, N);
  return run_replicates(
      reps, kSeed ^ static_cast<std::uint64_t>(N),
      [&](RandomStream& rng, std::size_t) {
        std::vector<double> x = kX0.vector(), scratch(spec.m());
        Eigen::VectorXd phi;
        double corr = 0.0;
        double s = rng.exponential(static_cast<double>(N));
        while (s <= kT) {
          const long k = std::lround(s / kT * kGrid);
          profile.features(x, phi);
          corr -= phi.dot(Tu[static_cast<std::size_t>(k)]);
          if (!detail::at_corner(x)) detail::chain_step_inplace(spec, static_cast<double>(N), sizes, x, scratch, rng);
          profile.features(x, phi);
          corr += phi.dot(profile.u(k));
          s += rng.exponential(static_cast<double>(N));
        }
        const double fx = f(x);
        return ChainSample{fx, fx - corr};
      },
      workers);
}

Outcome criterion4(int workers) {
  const auto spec = model_half();
  const auto f = x1sq_x2();
  const double exact = poly_eval(semigroup_matexp(f, spec, kT, Operator::L), kX0);
  auto summarize_chain = [&](long N) {
    const auto s = chain_samples(spec, f, N, 100000, workers);
    std::vector<double> plain(s.size()), cv(s.size());
    for (std::size_t r = 0; r < s.size(); ++r) {
      plain[r] = s[r].plain;
      cv[r] = s[r].cv;
    }
    return std::pair{summarize(plain, kSeed), summarize(cv, kSeed)};
  };
  const auto [p200, c200] = summarize_chain(200);
  const auto [p50, c50] = summarize_chain(50);
  const double gap200 = std::fabs(p200.mean - exact);
  const bool agree = gap200 <= 3.0 * p200.std_error + 0.01;
  const double cgap200 = std::fabs(c200.mean - exact), cgap50 = std::fabs(c50.mean - exact);
  const bool ordered = cgap50 > cgap200;
  return {agree && ordered,
          fmt("exact %.8f, N=200 MC %.8f (se %.2e), |diff| %.2e; control-variate gaps N=50: %.3e (se %.1e), "
              "N=200: %.3e (se %.1e); plain N=50 |diff| %.2e",
              exact, p200.mean, p200.std_error, gap200, cgap50, c50.std_error, cgap200, c200.std_error,
              std::fabs(p50.mean - exact)),
          {p200.mean, c200.mean, c50.mean}};
}

Outcome criterion5(int) {
  const auto spec = model_half();
  const auto f = x1sq_x2();
  const Polynomial exact = semigroup_matexp(f, spec, kT, Operator::L);
  std::vector<double> err;
  for (int n : {4, 8, 16}) err.push_back(sup_error_on_grid(trotter_product(f, spec, kT, n), exact, 100));
  const double r1 = err[0] / err[1], r2 = err[1] / err[2];
  const bool ok = err[0] > err[1] && err[1] > err[2] && r1 >= 1.4 && r1 <= 2.6 && r2 >= 1.4 && r2 <= 2.6;
  return {ok, fmt("sup errors %.6g %.6g %.6g, ratios %.4f %.4f", err[0], err[1], err[2], r1, r2), {}};
}

const SdeConfig kAbsorbCfg{1e-3, Scheme::FullTruncationEuler, 200.0, 1e-6};

Outcome criterion6(int workers) {
  const auto spec = model_equal();
  const auto lo = check_delta_bound(StateVec{0.05, 0.05}, spec, 1.0, kAbsorbCfg, 10000, kSeed, workers);
  const auto hi = check_delta_bound(StateVec{0.95, 0.95}, spec, 1.0, kAbsorbCfg, 10000, kSeed + 1, workers);
  return {lo.satisfied && hi.satisfied,
          fmt("corner 0: P %.4f (se %.1e) vs bound %.4f; corner 1: P %.4f (se %.1e) vs bound %.4f",
              lo.estimate.mean, lo.estimate.std_error, lo.bound_value, hi.estimate.mean, hi.estimate.std_error,
              hi.bound_value),
          {lo.estimate.mean, lo.estimate.std_error, hi.estimate.mean, hi.estimate.std_error}};
}

Outcome criterion7(int workers) {
  const auto spec = model_equal();
  SdeConfig cfg = kAbsorbCfg;
  cfg.t_max = 500.0;
  const auto est = estimate_absorption(StateVec{0.5, 0.5}, spec, cfg, 10000, kSeed, workers);
  const double absorbed = est.corner0.mean + est.corner1.mean;
  return {absorbed >= 0.99,
          fmt("absorbed %.4f (corner 0 %.4f, corner 1 %.4f, censored %.4f)", absorbed, est.corner0.mean,
              est.corner1.mean, est.censored_fraction),
          {est.corner0.mean, est.corner0.std_error, est.corner1.mean, est.corner1.std_error}};
}

Outcome criterion8(int workers) {
  const auto spec = model_equal();
  const StateVec x0{0.05, 0.05};
  const SdeConfig cfg{1e-3, Scheme::FullTruncationEuler, default_hitting_horizon(spec, x0), 1e-6};
  const auto r = estimate_mean_hitting_time(x0, spec, 1.0, cfg, 10000, kSeed, workers);
  return {r.satisfied,
          fmt("E[T] %.4f (se %.1e), E[T] - 3se %.4f vs bound (dprod/2)u %.4f; stated u %.4f, corrected dprod*u "
              "%.4f; censored %.4f",
              r.estimate.mean, r.estimate.std_error, r.estimate.mean - 3 * r.estimate.std_error, r.bound_value,
              r.extras.at("stated_bound"), r.extras.at("corrected_bound"), r.extras.at("censored_fraction")),
          {r.estimate.mean}};
}

Outcome criterion9(int workers) {
  const auto spec = model_equal();
  const SdeConfig cfg{1e-3, Scheme::FullTruncationEuler, 50.0, 1e-6};
  const auto r = optional_stopping_check(StateVec{0.05, 0.05}, spec, 0.5, cfg, 10000, kSeed, 0.01, workers);
  return {r.satisfied,
          fmt("p %.4f (se %.1e), |alpha p - Dbar| %.4f vs 3 alpha se + 0.01 = %.4f", r.estimate.mean,
              r.estimate.std_error, std::fabs(0.5 * r.estimate.mean - 0.1), 1.5 * r.estimate.std_error + 0.01),
          {r.estimate.mean}};
}

Outcome criterion10(int workers) {
  const SdeConfig cfg{1e-3, Scheme::FullTruncationEuler, 5.0, 1e-6};
  const std::vector<double> times{0.1, 1.0, 5.0};
  const auto r = martingale_drift_check(kX0, model_half(), times, cfg, 100000, kSeed, std::nullopt, workers);
  Eigen::MatrixXd S(2, 2);
  S << 0.0, 1.0, 0.2, 0.0;
  const auto broken = linear_exchange_model({1.0, 0.5}, S).assume_validated();
  const auto neg = martingale_drift_check(kX0, broken, times, cfg, 10000, kSeed, std::nullopt, workers);
  std::string detail;
  for (const auto& row : r.rows)
    detail += fmt("%s t=%g: %+.2e (se %.1e); ", row.source.c_str(), row.time, row.estimate.mean - row.target,
                  row.estimate.std_error);
  detail += fmt("asymmetric control %s", neg.all_passed() ? "passed (unexpected)" : "failed as required");
  return {r.all_passed() && !neg.all_passed(), detail, {}};
}

Outcome criterion11(int workers) {
  const auto spec = model_half();
  constexpr std::size_t kStates = 1000000;
  double worst = 0.0;
  for (long N : {40L, 160L}) {
    const auto sizes = population_sizes(spec, N);
    const auto errs = run_replicates(
        kStates, kSeed + static_cast<std::uint64_t>(N),
        [&](RandomStream& rng, std::size_t) {
          const StateVec x{rng.uniform(), rng.uniform()};
          const StateVec y = exchange_eval(spec, N, x);
          double before = 0.0, after = 0.0;
          for (std::size_t i = 0; i < 2; ++i) {
            before += static_cast<double>(sizes[i]) * x[i];
            after += static_cast<double>(sizes[i]) * y[i];
          }
          return std::fabs(after - before);
        },
        workers);
    for (double e : errs) worst = std::max(worst, e);
  }
  const auto exc = run_replicates(
      10000, kSeed + 7,
      [&](RandomStream& rng, std::size_t) {
        return ode_flow_detailed(StateVec{rng.uniform(), rng.uniform()}, spec, 5.0, 1e-2).max_excursion;
      },
      workers);
  const double flow = *std::max_element(exc.begin(), exc.end());
  return {worst <= 1e-12 && flow <= 1e-9,
          fmt("max mass drift %.3e (tol 1e-12), max ODE excursion %.3e (tol 1e-9)", worst, flow), {}};
}

Outcome criterion12(int) {
  const int many = std::max(4, default_workers());
  bool same = true;
  std::string detail;
  for (const auto& [id, fn] : {std::pair{3, &criterion3}, std::pair{6, &criterion6}, std::pair{7, &criterion7}}) {
    const auto a = fn(1);
    const auto b = fn(many);
    const bool eq = a.fingerprint == b.fingerprint && !a.fingerprint.empty();
    same = same && eq;
    detail += fmt("criterion %d with 1 vs %d workers: %s; ", id, many, eq ? "identical" : "DIFFERENT");
  }
  return {same, detail, {}};
}

using Criterion = Outcome (*)(int);
constexpr std::array<Criterion, 12> kCriteria{criterion1, criterion2, criterion3, criterion4,
                                              criterion5, criterion6, criterion7, criterion8,
                                              criterion9, criterion10, criterion11, criterion12};

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> ids;
  for (int a = 1; a < argc; ++a) {
    const int id = std::atoi(argv[a]);
    if (id < 1 || id > 12) {
      std::fprintf(stderr, "usage: acceptance [criterion 1..12]...\n");
      return 2;
    }
    ids.push_back(id);
  }
  if (ids.empty())
    for (int id = 1; id <= 12; ++id) ids.push_back(id);
  int failures = 0;
  for (int id : ids) {
    Outcome out;
    try {
      out = kCriteria[static_cast<std::size_t>(id - 1)](default_workers());
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what(), {}};
    }
    std::printf("criterion %d: %s  %s\n", id, out.pass ? "PASS" : "FAIL", out.detail.c_str());
    std::fflush(stdout);
    failures += !out.pass;
  }
  return failures == 0 ? 0 : 1;
}
