#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "polynomial.hpp"

namespace patchdiff {

inline constexpr double kStateTol = 1e-12;

/// A point of the hypercube K = [0,1]^m. Coordinates within kStateTol of
/// the cube are clamped onto it; anything further out is rejected.
class StateVec {
 public:
  StateVec() = default;

  explicit StateVec(std::vector<double> x, double tol = kStateTol) : x_(std::move(x)) {
    for (double& v : x_) {
      if (!(v >= -tol && v <= 1.0 + tol)) {
        std::ostringstream os;
        os << "state coordinate " << v << " outside [0,1]";
        throw DomainError(os.str());
      }
      v = std::clamp(v, 0.0, 1.0);
    }
  }

  StateVec(std::initializer_list<double> x) : StateVec(std::vector<double>(x)) {}

  static StateVec zeros(std::size_t m) { return StateVec(std::vector<double>(m, 0.0)); }
  static StateVec ones(std::size_t m) { return StateVec(std::vector<double>(m, 1.0)); }

  std::size_t size() const { return x_.size(); }
  double operator[](std::size_t i) const { return x_[i]; }
  std::span<const double> values() const { return x_; }
  const std::vector<double>& vector() const { return x_; }

  bool is_zero() const {
    return std::all_of(x_.begin(), x_.end(), [](double v) { return v == 0.0; });
  }
  bool is_one() const {
    return std::all_of(x_.begin(), x_.end(), [](double v) { return v == 1.0; });
  }

  StateVec mirrored() const {
    std::vector<double> y(x_.size());
    for (std::size_t i = 0; i < x_.size(); ++i) y[i] = 1.0 - x_[i];
    return StateVec(std::move(y));
  }

  friend bool operator==(const StateVec&, const StateVec&) = default;

 private:
  std::vector<double> x_;
};

struct BoundaryInfo {
  std::vector<std::size_t> I0;
  std::vector<std::size_t> I1;
  std::vector<int> normal;  // inward normal, entries in {-1, 0, 1}

  bool on_boundary() const { return !I0.empty() || !I1.empty(); }
};

inline BoundaryInfo boundary_info(const StateVec& x, double tol) {
  if (tol < 0.0) throw DomainError("boundary tolerance must be nonnegative");
  BoundaryInfo info;
  info.normal.assign(x.size(), 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] <= tol) {
      info.I0.push_back(i);
      info.normal[i] = 1;
    } else if (x[i] >= 1.0 - tol) {
      info.I1.push_back(i);
      info.normal[i] = -1;
    }
  }
  return info;
}

/// b_i(x) = sum_j (s_ij / d_i)(x_j - x_i) for a symmetric nonnegative
/// coupling matrix S with zero diagonal.
struct LinearExchange {
  Eigen::MatrixXd S;
};

/// User-supplied drift. `polynomial` carries the closed form when there is
/// one; the generator algebra needs it.
struct Tabulated {
  std::function<void(std::span<const double>, std::span<double>)> value;
  std::optional<std::vector<Polynomial>> polynomial;

  static Tabulated from_polynomials(std::vector<Polynomial> b) {
    Tabulated t;
    t.value = [b](std::span<const double> x, std::span<double> out) {
      for (std::size_t i = 0; i < b.size(); ++i) out[i] = b[i](x);
    };
    t.polynomial = std::move(b);
    return t;
  }
};

using DriftSpec = std::variant<LinearExchange, Tabulated>;

struct Tolerances {
  double conservation = 1e-10;
  double boundary = 1e-12;
};

// Smallest q <= max_q such that every d_i * q is an integer (to 1e-9).
inline std::optional<long> distortion_denominator(std::span<const double> d, long max_q = 1000000) {
  for (long q = 1; q <= max_q; ++q) {
    bool ok = true;
    for (double di : d) {
      const double v = di * static_cast<double>(q);
      if (std::fabs(v - std::round(v)) > 1e-9 * std::max(1.0, v)) {
        ok = false;
        break;
      }
    }
    if (ok) return q;
  }
  return std::nullopt;
}

class ModelSpec;
ModelSpec validated(ModelSpec spec, int grid_resolution = 20);

/// Static model data: distortions, drift and the derived constants.
/// Immutable; becomes usable by the simulators only through validated().
class ModelSpec {
 public:
  ModelSpec(std::vector<double> distortions, DriftSpec drift,
            std::optional<long> n_min = std::nullopt, Tolerances tol = {})
      : d_(std::move(distortions)), drift_(std::move(drift)), tol_(tol) {
    if (d_.size() < 2) throw ConfigError("model needs m >= 2 patches");
    for (double v : d_)
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("distortions must be positive");
    dprod_ = 1.0;
    for (double v : d_) dprod_ *= v;
    if (const auto* lin = std::get_if<LinearExchange>(&drift_)) {
      const auto m = static_cast<Eigen::Index>(d_.size());
      if (lin->S.rows() != m || lin->S.cols() != m)
        throw ConfigError("coupling matrix must be m x m");
      rate_.assign(d_.size() * d_.size(), 0.0);
      long worst = 1;
      for (Eigen::Index i = 0; i < m; ++i) {
        double row = 0.0;
        for (Eigen::Index j = 0; j < m; ++j) {
          if (i == j) continue;
          const double w = lin->S(i, j) / d_[static_cast<std::size_t>(i)];
          rate_[static_cast<std::size_t>(i * m + j)] = w;
          row += w;
        }
        rate_[static_cast<std::size_t>(i * m + i)] = -row;
        worst = std::max(worst, static_cast<long>(std::ceil(row - 1e-12)));
      }
      n_min_ = n_min ? std::max(*n_min, worst) : worst;
    } else {
      const auto& tab = std::get<Tabulated>(drift_);
      if (!tab.value) throw ConfigError("tabulated drift has no value function");
      if (tab.polynomial && tab.polynomial->size() != d_.size())
        throw ConfigError("tabulated drift needs one polynomial per patch");
      n_min_ = n_min.value_or(1);
    }
    if (n_min_ < 1) throw ConfigError("N_min must be positive");
    denominator_ = distortion_denominator(d_);
  }

  std::size_t m() const { return d_.size(); }
  std::span<const double> distortions() const { return d_; }
  double distortion(std::size_t i) const { return d_[i]; }
  const DriftSpec& drift() const { return drift_; }
  const Tolerances& tolerances() const { return tol_; }
  bool is_linear() const { return std::holds_alternative<LinearExchange>(drift_); }
  long n_min() const { return n_min_; }
  double dprod() const { return dprod_; }
  std::optional<long> denominator() const { return denominator_; }
  bool is_validated() const { return validated_; }

  // Row-major drift matrix M with b(x) = M x; LinearExchange only.
  std::span<const double> drift_matrix_data() const { return rate_; }

  Eigen::MatrixXd drift_matrix() const {
    if (!is_linear()) throw UnsupportedDriftError("drift matrix needs a LinearExchange drift");
    const auto m = static_cast<Eigen::Index>(d_.size());
    Eigen::MatrixXd M(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < m; ++j) M(i, j) = rate_[static_cast<std::size_t>(i * m + j)];
    return M;
  }

  // Marks the spec usable without running the checks. Meant for negative
  // controls that deliberately simulate a broken drift.
  ModelSpec assume_validated() const {
    ModelSpec copy = *this;
    copy.validated_ = true;
    return copy;
  }

  // Smallest admissible population scale: >= N_min and a multiple of the
  // distortion denominator.
  long smallest_admissible_n() const {
    const long q = denominator_.value_or(1);
    return ((n_min_ + q - 1) / q) * q;
  }

  // Evaluates b(x) into out without the validation gate; hot-path helper.
  void drift_into(std::span<const double> x, std::span<double> out) const {
    const std::size_t m = d_.size();
    if (!rate_.empty()) {
      for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        const double xi = x[i];
        for (std::size_t j = 0; j < m; ++j)
          if (j != i) s += rate_[i * m + j] * (x[j] - xi);
        out[i] = s;
      }
    } else {
      std::get<Tabulated>(drift_).value(x, out);
    }
  }

 private:
  friend ModelSpec validated(ModelSpec spec, int grid_resolution);

  std::vector<double> d_;
  DriftSpec drift_;
  Tolerances tol_;
  std::vector<double> rate_;
  double dprod_ = 1.0;
  long n_min_ = 1;
  std::optional<long> denominator_;
  bool validated_ = false;
};

inline ModelSpec linear_exchange_model(std::vector<double> d, Eigen::MatrixXd S) {
  return ModelSpec(std::move(d), LinearExchange{std::move(S)});
}

// Two-patch model with symmetric coupling s_12 = s_21 = s.
inline ModelSpec two_patch_model(double d2, double s) {
  Eigen::MatrixXd S(2, 2);
  S << 0.0, s, s, 0.0;
  return linear_exchange_model({1.0, d2}, std::move(S));
}

inline void require_validated(const ModelSpec& spec) {
  if (!spec.is_validated()) throw ConfigError("model spec has not been validated");
}

inline void require_dim(const ModelSpec& spec, const StateVec& x) {
  if (x.size() != spec.m()) throw DomainError("state dimension does not match the model");
}

inline std::vector<double> drift_eval(const ModelSpec& spec, const StateVec& x) {
  require_validated(spec);
  require_dim(spec, x);
  std::vector<double> b(spec.m());
  spec.drift_into(x.values(), b);
  return b;
}

/// Polynomial form of each drift coordinate.
inline std::vector<Polynomial> drift_polynomials(const ModelSpec& spec) {
  const std::size_t m = spec.m();
  if (spec.is_linear()) {
    const auto M = spec.drift_matrix_data();
    std::vector<Polynomial> b;
    for (std::size_t i = 0; i < m; ++i) {
      Polynomial bi(m);
      for (std::size_t j = 0; j < m; ++j)
        if (M[i * m + j] != 0.0) bi += Polynomial::variable(m, j) * M[i * m + j];
      b.push_back(std::move(bi));
    }
    return b;
  }
  const auto& tab = std::get<Tabulated>(spec.drift());
  if (!tab.polynomial) throw UnsupportedDriftError("tabulated drift has no polynomial form");
  return *tab.polynomial;
}

// Irreducibility of the coupling graph (s_ij > 0 edges).
inline bool coupling_irreducible(const Eigen::MatrixXd& S) {
  const auto m = S.rows();
  std::vector<bool> seen(static_cast<std::size_t>(m), false);
  std::vector<Eigen::Index> stack{0};
  seen[0] = true;
  while (!stack.empty()) {
    const auto i = stack.back();
    stack.pop_back();
    for (Eigen::Index j = 0; j < m; ++j)
      if (!seen[static_cast<std::size_t>(j)] && (S(i, j) > 0.0 || S(j, i) > 0.0)) {
        seen[static_cast<std::size_t>(j)] = true;
        stack.push_back(j);
      }
  }
  return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
}

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ValidationReport {
  std::vector<CheckResult> checks;

  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
  }
  const CheckResult* find(std::string_view name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }
};

namespace detail {

// Visits every point of the uniform grid {0, 1/g, ..., 1}^m.
template <typename Fn>
void for_each_grid_point(std::size_t m, int g, Fn&& fn) {
  std::vector<int> idx(m, 0);
  std::vector<double> x(m, 0.0);
  for (;;) {
    for (std::size_t i = 0; i < m; ++i) x[i] = static_cast<double>(idx[i]) / g;
    fn(std::span<const double>(x));
    std::size_t k = 0;
    while (k < m && ++idx[k] > g) idx[k++] = 0;
    if (k == m) return;
  }
}

inline std::string fmt_point(std::span<const double> x) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < x.size(); ++i) os << (i ? "," : "") << x[i];
  os << ')';
  return os.str();
}

}  // namespace detail

/// Runs the six structural checks on the model: distortions, conservation,
/// boundary signs, strict inward drift, fixed corners, N_min. Failures are
/// reported, never thrown.
inline ValidationReport validate_model(const ModelSpec& spec, int grid_resolution) {
  if (grid_resolution < 2) throw DomainError("grid_resolution must be >= 2");
  const std::size_t m = spec.m();
  const auto d = spec.distortions();
  const auto& tol = spec.tolerances();
  ValidationReport report;

  {
    CheckResult c{"distortions", true, {}};
    std::ostringstream os;
    for (std::size_t i = 0; i < m; ++i)
      if (!(d[i] > 0.0 && d[i] <= 1.0)) {
        c.passed = false;
        os << "d_" << i + 1 << "=" << d[i] << " not in (0,1]; ";
      }
    if (d[0] != 1.0) {
      c.passed = false;
      os << "d_1=" << d[0] << " != 1; ";
    }
    for (std::size_t i = 1; i < m; ++i)
      if (d[i] > d[i - 1]) {
        c.passed = false;
        os << "not nonincreasing at index " << i + 1 << "; ";
      }
    os << "dprod=" << spec.dprod();
    c.detail = os.str();
    report.checks.push_back(std::move(c));
  }

  std::vector<double> b(m);
  double worst_cons = 0.0;
  std::string worst_cons_at;
  double worst_sign = 0.0;
  std::string sign_at;
  bool strict_ok = true;
  std::string strict_at;
  detail::for_each_grid_point(m, grid_resolution, [&](std::span<const double> x) {
    spec.drift_into(x, b);
    double cons = 0.0;
    for (std::size_t i = 0; i < m; ++i) cons += d[i] * b[i];
    if (std::fabs(cons) > worst_cons) {
      worst_cons = std::fabs(cons);
      worst_cons_at = detail::fmt_point(x);
    }
    bool boundary = false;
    bool corner0 = true;
    bool corner1 = true;
    double inward = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      corner0 = corner0 && x[i] == 0.0;
      corner1 = corner1 && x[i] == 1.0;
      if (x[i] == 0.0) {
        boundary = true;
        inward += b[i];
        if (-b[i] > worst_sign) {
          worst_sign = -b[i];
          sign_at = detail::fmt_point(x);
        }
      } else if (x[i] == 1.0) {
        boundary = true;
        inward -= b[i];
        if (b[i] > worst_sign) {
          worst_sign = b[i];
          sign_at = detail::fmt_point(x);
        }
      }
    }
    if (boundary && !corner0 && !corner1 && !(inward > 0.0) && strict_ok) {
      strict_ok = false;
      strict_at = detail::fmt_point(x);
    }
  });

  {
    std::ostringstream os;
    os << "max |sum d_i b_i| = " << worst_cons;
    if (!worst_cons_at.empty()) os << " at " << worst_cons_at;
    report.checks.push_back({"conservation", worst_cons <= tol.conservation, os.str()});
  }
  {
    std::ostringstream os;
    os << "max outward drift on faces = " << worst_sign;
    if (!sign_at.empty()) os << " at " << sign_at;
    report.checks.push_back({"boundary_signs", worst_sign <= tol.boundary, os.str()});
  }
  {
    bool irreducible = true;
    std::ostringstream os;
    if (const auto* lin = std::get_if<LinearExchange>(&spec.drift())) {
      irreducible = coupling_irreducible(lin->S);
      os << "irreducible=" << (irreducible ? "true" : "false") << "; ";
    }
    if (strict_ok)
      os << "<b,n> > 0 on all non-corner boundary grid points";
    else
      os << "<b,n> <= 0 at " << strict_at;
    report.checks.push_back({"strict_inward", strict_ok && irreducible, os.str()});
  }
  {
    std::vector<double> zero(m, 0.0), one(m, 1.0), b0(m), b1(m);
    spec.drift_into(zero, b0);
    spec.drift_into(one, b1);
    const bool ok = std::all_of(b0.begin(), b0.end(), [](double v) { return v == 0.0; }) &&
                    std::all_of(b1.begin(), b1.end(), [](double v) { return v == 0.0; });
    report.checks.push_back({"fixed_corners", ok, ok ? "b(0)=b(1)=0" : "b does not vanish at a corner"});
  }
  {
    std::ostringstream os;
    bool ok = spec.denominator().has_value();
    os << "N_min=" << spec.n_min();
    if (spec.denominator())
      os << "; denominator=" << *spec.denominator()
         << "; smallest admissible N=" << spec.smallest_admissible_n();
    else
      os << "; distortions have no small common denominator";
    if (const auto* lin = std::get_if<LinearExchange>(&spec.drift())) {
      const auto& S = lin->S;
      for (Eigen::Index i = 0; i < S.rows(); ++i) {
        if (S(i, i) != 0.0) {
          ok = false;
          os << "; s_" << i + 1 << i + 1 << " != 0";
        }
        for (Eigen::Index j = 0; j < S.cols(); ++j)
          if (S(i, j) < 0.0) {
            ok = false;
            os << "; negative coupling s_" << i + 1 << j + 1;
          }
      }
    }
    report.checks.push_back({"n_min", ok, os.str()});
  }
  return report;
}

/// Returns a copy marked as validated; throws ConfigError listing the
/// failed checks otherwise.
inline ModelSpec validated(ModelSpec spec, int grid_resolution) {
  const auto report = validate_model(spec, grid_resolution);
  if (!report.all_passed()) {
    std::string msg = "model validation failed:";
    for (const auto& c : report.checks)
      if (!c.passed) msg += " [" + c.name + ": " + c.detail + "]";
    throw ConfigError(msg);
  }
  spec.validated_ = true;
  return spec;
}

/// Patch sizes N_i = d_i N; throws RangeError when N is not admissible.
inline std::vector<long> population_sizes(const ModelSpec& spec, long N) {
  if (N < spec.n_min()) {
    std::ostringstream os;
    os << "N=" << N << " below N_min=" << spec.n_min();
    throw RangeError(os.str());
  }
  std::vector<long> sizes(spec.m());
  for (std::size_t i = 0; i < spec.m(); ++i) {
    const double v = spec.distortion(i) * static_cast<double>(N);
    const double r = std::round(v);
    if (std::fabs(v - r) > 1e-9 * std::max(1.0, v) || r < 1.0) {
      std::ostringstream os;
      os << "d_" << i + 1 << "*N=" << v << " is not a positive integer";
      throw RangeError(os.str());
    }
    sizes[i] = static_cast<long>(r);
  }
  return sizes;
}

namespace detail {

// x <- x + b(x)/N in place; assumes N admissible.
inline void exchange_inplace(const ModelSpec& spec, double N, std::span<double> x,
                             std::span<double> scratch) {
  spec.drift_into(x, scratch);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double y = x[i] + scratch[i] / N;
    if (!(y >= -kStateTol && y <= 1.0 + kStateTol))
      throw InvariantError("exchange map left the hypercube");
    x[i] = std::clamp(y, 0.0, 1.0);
  }
}

}  // namespace detail

/// Phi_N(x) = x + b(x)/N.
inline StateVec exchange_eval(const ModelSpec& spec, long N, const StateVec& x) {
  require_validated(spec);
  require_dim(spec, x);
  population_sizes(spec, N);
  std::vector<double> y = x.vector();
  std::vector<double> scratch(spec.m());
  detail::exchange_inplace(spec, static_cast<double>(N), y, scratch);
  return StateVec(std::move(y));
}

/// Fichera function psi(x) = sum_i (b_i(x) - (1 - 2 x_i)/d_i) n_i(x).
inline double fichera_eval(const ModelSpec& spec, const StateVec& x) {
  const auto info = boundary_info(x, 0.0);
  if (!info.on_boundary()) throw DomainError("Fichera function is defined on the boundary only");
  const auto b = drift_eval(spec, x);
  double psi = 0.0;
  for (std::size_t i = 0; i < spec.m(); ++i)
    if (info.normal[i] != 0)
      psi += (b[i] - (1.0 - 2.0 * x[i]) / spec.distortion(i)) * info.normal[i];
  return psi;
}

}  // namespace patchdiff
