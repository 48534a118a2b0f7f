#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "model.hpp"
#include "polynomial.hpp"

namespace patchdiff {

enum class Operator { A, B, L };

inline double poly_eval(const Polynomial& f, const StateVec& x) { return f(x.values()); }

/// A f = 1/2 sum_i x_i(1-x_i)/d_i d^2f/dx_i^2, B f = <b, grad f>,
/// L = A + B. Exact in the monomial basis.
inline Polynomial apply_generator(const Polynomial& f, const ModelSpec& spec, Operator which) {
  const std::size_t m = spec.m();
  if (f.dim() != m) throw DomainError("polynomial dimension does not match the model");
  Polynomial out(m);
  if (which == Operator::A || which == Operator::L) {
    for (std::size_t i = 0; i < m; ++i) {
      const Polynomial fii = f.partial(i).partial(i);
      if (fii.is_zero()) continue;
      MultiIndex e1(m, 0), e2(m, 0);
      e1[i] = 1;
      e2[i] = 2;
      Polynomial a(m);
      const double w = 0.5 / spec.distortion(i);
      a.add_term(e1, w);
      a.add_term(e2, -w);
      out += a * fii;
    }
  }
  if (which == Operator::B || which == Operator::L) {
    const auto b = drift_polynomials(spec);
    for (std::size_t i = 0; i < m; ++i) {
      const Polynomial fi = f.partial(i);
      if (!fi.is_zero()) out += b[i] * fi;
    }
  }
  return out;
}

namespace detail {

// Stirling numbers of the second kind S(n, k), 0 <= k <= n <= max_n.
inline std::vector<std::vector<double>> stirling2(int max_n) {
  std::vector<std::vector<double>> S(static_cast<std::size_t>(max_n + 1));
  S[0] = {1.0};
  for (int n = 1; n <= max_n; ++n) {
    auto& row = S[static_cast<std::size_t>(n)];
    const auto& prev = S[static_cast<std::size_t>(n - 1)];
    row.assign(static_cast<std::size_t>(n + 1), 0.0);
    for (int k = 1; k <= n; ++k) {
      const double a = k < n ? prev[static_cast<std::size_t>(k)] : 0.0;
      row[static_cast<std::size_t>(k)] = k * a + prev[static_cast<std::size_t>(k - 1)];
    }
  }
  return S;
}

// moment[a][j]: coefficient of x^j in E[(K/n)^a], K ~ Binomial(n, x).
// E[K^a] = sum_j S(a, j) n^(j falling) x^j.
inline std::vector<std::vector<double>> binomial_moment_table(long n, int max_a) {
  const auto S = stirling2(max_a);
  const double dn = static_cast<double>(n);
  std::vector<std::vector<double>> table(static_cast<std::size_t>(max_a + 1));
  for (int a = 0; a <= max_a; ++a) {
    auto& row = table[static_cast<std::size_t>(a)];
    row.assign(static_cast<std::size_t>(a + 1), 0.0);
    for (int j = 0; j <= a; ++j) {
      // (n)_j / n^a = prod_{k<j} (n - k)/n * n^(j - a)
      double falling = 1.0;
      for (int k = 0; k < j; ++k) falling *= (dn - k) / dn;
      row[static_cast<std::size_t>(j)] =
          S[static_cast<std::size_t>(a)][static_cast<std::size_t>(j)] * falling / std::pow(dn, a - j);
    }
  }
  return table;
}

}  // namespace detail

/// Exact Bernstein operator B_N f: the expectation of f under independent
/// Binomial(N_i, x_i)/N_i resampling of each coordinate. Acts monomial by
/// monomial through the one-dimensional factorial-moment transform.
inline Polynomial bernstein_apply(const Polynomial& f, const ModelSpec& spec, long N) {
  const std::size_t m = spec.m();
  if (f.dim() != m) throw DomainError("polynomial dimension does not match the model");
  const auto sizes = population_sizes(spec, N);
  const int deg = f.degree();
  std::vector<std::vector<std::vector<double>>> tables;
  for (long n : sizes) tables.push_back(detail::binomial_moment_table(n, deg));

  Polynomial out(m);
  for (const auto& [a, c] : f.terms()) {
    Polynomial term = Polynomial::constant(m, c);
    for (std::size_t i = 0; i < m; ++i) {
      if (a[i] == 0) continue;
      Polynomial factor(m);
      const auto& row = tables[i][static_cast<std::size_t>(a[i])];
      for (int j = 0; j <= a[i]; ++j) {
        MultiIndex e(m, 0);
        e[i] = j;
        factor.add_term(std::move(e), row[static_cast<std::size_t>(j)]);
      }
      term = term * factor;
    }
    out += term;
  }
  return out;
}

/// f o Phi_N for the LinearExchange family, Phi_N(x) = (I + M/N) x.
inline Polynomial compose_exchange(const Polynomial& f, const ModelSpec& spec, long N) {
  if (!spec.is_linear()) throw UnsupportedDriftError("exchange composition needs a LinearExchange drift");
  const auto m = static_cast<Eigen::Index>(spec.m());
  const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(m, m) + spec.drift_matrix() / static_cast<double>(N);
  return f.compose_affine(A, Eigen::VectorXd::Zero(m));
}

/// G_N f = N (B_N(f o Phi_N) - f).
inline Polynomial discrete_generator_apply(const Polynomial& f, const ModelSpec& spec, long N) {
  population_sizes(spec, N);
  Polynomial g = bernstein_apply(compose_exchange(f, spec, N), spec, N);
  g -= f;
  g *= static_cast<double>(N);
  return g;
}

/// Monomial basis of P_n in graded-lex order.
inline std::vector<MultiIndex> monomial_basis(std::size_t m, int n) {
  std::vector<MultiIndex> basis;
  MultiIndex a(m, 0);
  std::function<void(std::size_t, int)> rec = [&](std::size_t i, int left) {
    if (i == m) {
      basis.push_back(a);
      return;
    }
    for (int e = 0; e <= left; ++e) {
      a[i] = e;
      rec(i + 1, left - e);
    }
    a[i] = 0;
  };
  rec(0, n);
  std::sort(basis.begin(), basis.end(), GradedLex{});
  return basis;
}

/// Dense matrix of a linear operator restricted to P_n; column k holds the
/// coefficients of op(basis[k]).
struct OperatorMatrix {
  std::vector<MultiIndex> basis;
  Eigen::MatrixXd entries;
  int n = 0;

  Eigen::VectorXd coefficients(const Polynomial& f) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis.size()));
    for (const auto& [a, c] : f.terms()) {
      const auto it = std::lower_bound(basis.begin(), basis.end(), a, GradedLex{});
      if (it == basis.end() || *it != a) throw DomainError("polynomial is not in P_n");
      v(it - basis.begin()) = c;
    }
    return v;
  }

  Polynomial polynomial(const Eigen::VectorXd& v) const {
    Polynomial p(basis.empty() ? 0 : basis.front().size());
    for (std::size_t k = 0; k < basis.size(); ++k) p.add_term(basis[k], v(static_cast<Eigen::Index>(k)));
    return p;
  }
};

inline OperatorMatrix operator_matrix(std::size_t m, int n,
                                      const std::function<Polynomial(const Polynomial&)>& op) {
  OperatorMatrix M{monomial_basis(m, n), {}, n};
  const auto dim = static_cast<Eigen::Index>(M.basis.size());
  M.entries = Eigen::MatrixXd::Zero(dim, dim);
  for (Eigen::Index k = 0; k < dim; ++k) {
    const Polynomial image = op(Polynomial::monomial(M.basis[static_cast<std::size_t>(k)]));
    if (image.degree() > n) throw InvariantError("operator does not preserve P_n");
    M.entries.col(k) = M.coefficients(image);
  }
  return M;
}

inline OperatorMatrix generator_matrix(const ModelSpec& spec, Operator which, int n) {
  if (which != Operator::A && !spec.is_linear())
    throw UnsupportedDriftError("generator matrix on P_n needs a LinearExchange drift");
  return operator_matrix(spec.m(), n, [&](const Polynomial& f) { return apply_generator(f, spec, which); });
}

/// exp(t M_n) f with M_n the matrix of A or L on P_n, n = degree(f).
inline Polynomial semigroup_matexp(const Polynomial& f, const ModelSpec& spec, double t, Operator which) {
  if (which == Operator::B) throw DomainError("semigroup_matexp supports A and L");
  if (t < 0.0) throw DomainError("t must be nonnegative");
  if (f.dim() != spec.m()) throw DomainError("polynomial dimension does not match the model");
  const auto G = generator_matrix(spec, which, f.degree());
  const Eigen::MatrixXd E = (t * G.entries).exp();
  return G.polynomial(E * G.coefficients(f));
}

/// exp(N t (T - I)) f, the Poissonized chain semigroup on P_n, where
/// T f = B_N(f o Phi_N). Exact for LinearExchange drift.
inline Polynomial chain_semigroup_matexp(const Polynomial& f, const ModelSpec& spec, long N, double t) {
  if (t < 0.0) throw DomainError("t must be nonnegative");
  const auto G = operator_matrix(spec.m(), f.degree(), [&](const Polynomial& g) {
    return discrete_generator_apply(g, spec, N);
  });
  const Eigen::MatrixXd E = (t * G.entries).exp();
  return G.polynomial(E * G.coefficients(f));
}

/// e^{sM}, the flow of the linear drift field b(x) = M x.
inline Eigen::MatrixXd affine_flow(const ModelSpec& spec, double s) {
  return (s * spec.drift_matrix()).exp();
}

struct FlowResult {
  StateVec state;
  double max_excursion = 0.0;  // largest distance outside K seen before projection
};

namespace detail {

inline void project_onto_cube(std::span<double> y) {
  for (double& v : y) v = std::clamp(v, 0.0, 1.0);
}

inline double excursion(std::span<const double> y) {
  double e = 0.0;
  for (double v : y) e = std::max({e, -v, v - 1.0});
  return e;
}

}  // namespace detail

/// Classical RK4 for y' = b(rho(y)), rho the projection onto K.
inline FlowResult ode_flow_detailed(const StateVec& x, const ModelSpec& spec, double t, double h) {
  require_validated(spec);
  require_dim(spec, x);
  if (t < 0.0) throw DomainError("t must be nonnegative");
  if (!(h > 0.0)) throw DomainError("step must be positive");
  const std::size_t m = spec.m();
  std::vector<double> y = x.vector(), tmp(m), p(m), k1(m), k2(m), k3(m), k4(m);
  auto field = [&](const std::vector<double>& at, std::vector<double>& out) {
    p = at;
    detail::project_onto_cube(p);
    spec.drift_into(p, out);
  };
  double worst = 0.0;
  const long steps = t == 0.0 ? 0 : std::max(1L, static_cast<long>(std::ceil(t / h - 1e-9)));
  const double hh = steps ? t / static_cast<double>(steps) : 0.0;
  for (long s = 0; s < steps; ++s) {
    field(y, k1);
    for (std::size_t i = 0; i < m; ++i) tmp[i] = y[i] + 0.5 * hh * k1[i];
    field(tmp, k2);
    for (std::size_t i = 0; i < m; ++i) tmp[i] = y[i] + 0.5 * hh * k2[i];
    field(tmp, k3);
    for (std::size_t i = 0; i < m; ++i) tmp[i] = y[i] + hh * k3[i];
    field(tmp, k4);
    for (std::size_t i = 0; i < m; ++i) y[i] += hh / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    worst = std::max(worst, detail::excursion(y));
  }
  detail::project_onto_cube(y);
  return {StateVec(std::move(y)), worst};
}

inline StateVec ode_flow(const StateVec& x, const ModelSpec& spec, double t, double h) {
  return ode_flow_detailed(x, spec, t, h).state;
}

/// (U(t/n) V(t/n))^n f with U = exp(s A_n) and V(s) f = f o e^{sM}. V is
/// applied first in each factor.
inline Polynomial trotter_product(const Polynomial& f, const ModelSpec& spec, double t, int n_steps) {
  if (!spec.is_linear()) throw UnsupportedDriftError("trotter_product needs a LinearExchange drift");
  if (n_steps < 1) throw DomainError("n_steps must be >= 1");
  if (t < 0.0) throw DomainError("t must be nonnegative");
  const double s = t / n_steps;
  const int n = f.degree();
  const auto A = generator_matrix(spec, Operator::A, n);
  const Eigen::MatrixXd U = (s * A.entries).exp();
  const auto m = static_cast<Eigen::Index>(spec.m());
  const Eigen::MatrixXd flow = affine_flow(spec, s);
  const auto V = operator_matrix(spec.m(), n, [&](const Polynomial& g) {
    return g.compose_affine(flow, Eigen::VectorXd::Zero(m));
  });
  Eigen::VectorXd v = A.coefficients(f);
  for (int k = 0; k < n_steps; ++k) v = U * (V.entries * v);
  return A.polynomial(v);
}

/// max over the uniform grid {0, 1/r, ..., 1}^m of |f - g|.
template <typename F, typename G>
double sup_error_on_grid(std::size_t m, F&& f, G&& g, int resolution) {
  if (resolution < 1) throw DomainError("resolution must be >= 1");
  double worst = 0.0;
  detail::for_each_grid_point(m, resolution, [&](std::span<const double> x) {
    worst = std::max(worst, std::fabs(f(x) - g(x)));
  });
  return worst;
}

inline double sup_error_on_grid(const Polynomial& f, const Polynomial& g, int resolution) {
  if (f.dim() != g.dim()) throw DomainError("polynomial dimension mismatch");
  const Polynomial diff = f - g;
  return sup_error_on_grid(
      f.dim(), [&](std::span<const double> x) { return diff(x); }, [](std::span<const double>) { return 0.0; },
      resolution);
}

}  // namespace patchdiff
