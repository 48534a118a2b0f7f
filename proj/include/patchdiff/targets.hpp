#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "model.hpp"

namespace patchdiff {

// D(y) = <d, y> / dprod.
inline double weighted_mass(const ModelSpec& spec, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += spec.distortion(i) * y[i];
  return s / spec.dprod();
}

inline double weighted_mass_mirror(const ModelSpec& spec, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += spec.distortion(i) * (1.0 - y[i]);
  return s / spec.dprod();
}

enum class TargetKind { Corner0, Corner1, Delta0, Delta1, Custom };

/// A set whose first entry time is recorded along a trajectory. Corner sets
/// are exact: chain states are lattice fractions and SDE states are snapped
/// onto corners. Delta sets use the strict inequality on D with no slack.
struct Target {
  TargetKind kind = TargetKind::Corner0;
  double alpha = 0.0;
  std::string name;
  std::function<bool(std::span<const double>)> predicate;

  static Target corner0() { return {TargetKind::Corner0, 0.0, "corner-0", {}}; }
  static Target corner1() { return {TargetKind::Corner1, 0.0, "corner-1", {}}; }
  static Target delta0(double alpha) { return {TargetKind::Delta0, alpha, "delta-0", {}}; }
  static Target delta1(double alpha) { return {TargetKind::Delta1, alpha, "delta-1", {}}; }
  static Target custom(std::string name, std::function<bool(std::span<const double>)> pred) {
    return {TargetKind::Custom, 0.0, std::move(name), std::move(pred)};
  }

  bool contains(const ModelSpec& spec, std::span<const double> x) const {
    switch (kind) {
      case TargetKind::Corner0:
        for (double v : x)
          if (v != 0.0) return false;
        return true;
      case TargetKind::Corner1:
        for (double v : x)
          if (v != 1.0) return false;
        return true;
      case TargetKind::Delta0:
        return weighted_mass(spec, x) < alpha;
      case TargetKind::Delta1:
        return weighted_mass_mirror(spec, x) < alpha;
      case TargetKind::Custom:
        return predicate && predicate(x);
    }
    return false;
  }
};

struct HittingRecord {
  std::string target;
  std::optional<double> time;  // nullopt: censored at the horizon

  bool censored() const { return !time.has_value(); }
};

struct Trajectory {
  std::vector<double> times;
  std::vector<StateVec> states;
  std::vector<HittingRecord> hits;

  const HittingRecord* hit(std::string_view target) const {
    for (const auto& h : hits)
      if (h.target == target) return &h;
    return nullptr;
  }
};

namespace detail {

// Tracks first entry into each target.
class HitTracker {
 public:
  HitTracker(const ModelSpec& spec, const std::vector<Target>& targets)
      : spec_(spec), targets_(targets), times_(targets.size()) {}

  void observe(double t, std::span<const double> x) {
    for (std::size_t k = 0; k < targets_.size(); ++k)
      if (!times_[k] && targets_[k].contains(spec_, x)) times_[k] = t;
  }

  std::vector<HittingRecord> records() const {
    std::vector<HittingRecord> out;
    for (std::size_t k = 0; k < targets_.size(); ++k) out.push_back({targets_[k].name, times_[k]});
    return out;
  }

 private:
  const ModelSpec& spec_;
  const std::vector<Target>& targets_;
  std::vector<std::optional<double>> times_;
};

inline bool at_corner(std::span<const double> x) {
  bool zero = true;
  bool one = true;
  for (double v : x) {
    zero = zero && v == 0.0;
    one = one && v == 1.0;
  }
  return zero || one;
}

}  // namespace detail

}  // namespace patchdiff
