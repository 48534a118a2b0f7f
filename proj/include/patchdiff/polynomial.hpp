#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "errors.hpp"

namespace patchdiff {

using MultiIndex = std::vector<int>;

inline int total_degree(const MultiIndex& a) { return std::accumulate(a.begin(), a.end(), 0); }

// Graded lexicographic: lower total degree first, ties broken by comparing
// exponents from the first coordinate with larger exponent first.
struct GradedLex {
  bool operator()(const MultiIndex& a, const MultiIndex& b) const {
    const int da = total_degree(a);
    const int db = total_degree(b);
    if (da != db) return da < db;
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(),
                                        [](int u, int v) { return u > v; });
  }
};

/// Sparse polynomial on [0,1]^m in the monomial basis. Zero coefficients are
/// never stored.
class Polynomial {
 public:
  using Terms = std::map<MultiIndex, double, GradedLex>;

  Polynomial() = default;
  explicit Polynomial(std::size_t m) : m_(m) {}

  static Polynomial constant(std::size_t m, double c) {
    Polynomial p(m);
    p.add_term(MultiIndex(m, 0), c);
    return p;
  }

  static Polynomial monomial(MultiIndex exponents, double coeff = 1.0) {
    Polynomial p(exponents.size());
    p.add_term(std::move(exponents), coeff);
    return p;
  }

  // The coordinate function x_i.
  static Polynomial variable(std::size_t m, std::size_t i) {
    MultiIndex a(m, 0);
    a.at(i) = 1;
    return monomial(std::move(a));
  }

  std::size_t dim() const { return m_; }
  const Terms& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }
  std::size_t size() const { return terms_.size(); }

  int degree() const { return terms_.empty() ? 0 : total_degree(terms_.rbegin()->first); }

  double coeff(const MultiIndex& a) const {
    const auto it = terms_.find(a);
    return it == terms_.end() ? 0.0 : it->second;
  }

  void add_term(MultiIndex a, double c) {
    if (a.size() != m_) throw DomainError("monomial dimension mismatch");
    if (std::any_of(a.begin(), a.end(), [](int e) { return e < 0; }))
      throw DomainError("negative exponent");
    if (c == 0.0) return;
    auto [it, inserted] = terms_.try_emplace(std::move(a), c);
    if (!inserted) {
      it->second += c;
      if (it->second == 0.0) terms_.erase(it);
    }
  }

  template <typename Vec>
  double operator()(const Vec& x) const {
    double sum = 0.0;
    for (const auto& [a, c] : terms_) {
      double v = c;
      for (std::size_t i = 0; i < m_; ++i)
        for (int e = 0; e < a[i]; ++e) v *= x[i];
      sum += v;
    }
    return sum;
  }

  Polynomial partial(std::size_t i) const {
    Polynomial out(m_);
    for (const auto& [a, c] : terms_) {
      if (a[i] == 0) continue;
      MultiIndex b = a;
      --b[i];
      out.add_term(std::move(b), c * a[i]);
    }
    return out;
  }

  // Drops coefficients with |c| <= tol.
  Polynomial pruned(double tol) const {
    Polynomial out(m_);
    for (const auto& [a, c] : terms_)
      if (std::fabs(c) > tol) out.terms_.emplace(a, c);
    return out;
  }

  Polynomial& operator+=(const Polynomial& o) {
    check_dim(o);
    for (const auto& [a, c] : o.terms_) add_term(a, c);
    return *this;
  }
  Polynomial& operator-=(const Polynomial& o) {
    check_dim(o);
    for (const auto& [a, c] : o.terms_) add_term(a, -c);
    return *this;
  }
  Polynomial& operator*=(double s) {
    if (s == 0.0) {
      terms_.clear();
      return *this;
    }
    for (auto& [a, c] : terms_) c *= s;
    return *this;
  }

  friend Polynomial operator+(Polynomial a, const Polynomial& b) { return a += b; }
  friend Polynomial operator-(Polynomial a, const Polynomial& b) { return a -= b; }
  friend Polynomial operator*(Polynomial a, double s) { return a *= s; }
  friend Polynomial operator*(double s, Polynomial a) { return a *= s; }

  friend Polynomial operator*(const Polynomial& a, const Polynomial& b) {
    a.check_dim(b);
    Polynomial out(a.m_);
    for (const auto& [ea, ca] : a.terms_)
      for (const auto& [eb, cb] : b.terms_) {
        MultiIndex e(a.m_);
        for (std::size_t i = 0; i < a.m_; ++i) e[i] = ea[i] + eb[i];
        out.add_term(std::move(e), ca * cb);
      }
    return out;
  }

  friend bool operator==(const Polynomial& a, const Polynomial& b) {
    return a.m_ == b.m_ && a.terms_ == b.terms_;
  }

  // Largest absolute coefficient difference.
  friend double coeff_distance(const Polynomial& a, const Polynomial& b) {
    double worst = 0.0;
    for (const auto& [e, c] : (a - b).terms_) worst = std::max(worst, std::fabs(c));
    return worst;
  }

  /// Returns x -> f(A x + c).
  Polynomial compose_affine(const Eigen::MatrixXd& A, const Eigen::VectorXd& c) const {
    if (static_cast<std::size_t>(A.rows()) != m_ || static_cast<std::size_t>(A.cols()) != m_ ||
        static_cast<std::size_t>(c.size()) != m_)
      throw DomainError("affine map dimension mismatch");
    std::vector<Polynomial> y;
    y.reserve(m_);
    for (std::size_t i = 0; i < m_; ++i) {
      Polynomial yi = constant(m_, c(static_cast<Eigen::Index>(i)));
      for (std::size_t j = 0; j < m_; ++j)
        yi.add_term(variable(m_, j).terms_.begin()->first,
                    A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      y.push_back(std::move(yi));
    }
    // powers[i][e] = y_i^e
    std::vector<std::vector<Polynomial>> powers(m_);
    for (std::size_t i = 0; i < m_; ++i) powers[i].push_back(constant(m_, 1.0));
    Polynomial out(m_);
    for (const auto& [a, coef] : terms_) {
      Polynomial term = constant(m_, coef);
      for (std::size_t i = 0; i < m_; ++i) {
        while (static_cast<int>(powers[i].size()) <= a[i])
          powers[i].push_back(powers[i].back() * y[i]);
        if (a[i] > 0) term = term * powers[i][static_cast<std::size_t>(a[i])];
      }
      out += term;
    }
    return out;
  }

 private:
  void check_dim(const Polynomial& o) const {
    if (o.m_ != m_) throw DomainError("polynomial dimension mismatch");
  }

  std::size_t m_ = 0;
  Terms terms_;
};

// Serialized form: [{"exponents": [..], "coeff": c}, ...]
inline nlohmann::json to_json_terms(const Polynomial& p) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [a, c] : p.terms()) out.push_back({{"exponents", a}, {"coeff", c}});
  return out;
}

inline Polynomial polynomial_from_json(const nlohmann::json& j, std::size_t m) {
  if (!j.is_array()) throw ConfigError("polynomial must be a list of {exponents, coeff}");
  Polynomial p(m);
  for (const auto& term : j) {
    if (!term.contains("exponents") || !term.contains("coeff"))
      throw ConfigError("polynomial term needs 'exponents' and 'coeff'");
    auto a = term.at("exponents").get<MultiIndex>();
    if (a.size() != m) throw ConfigError("polynomial term has wrong number of exponents");
    p.add_term(std::move(a), term.at("coeff").get<double>());
  }
  return p;
}

}  // namespace patchdiff
