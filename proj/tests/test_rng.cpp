#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "patchdiff/rng.hpp"

using patchdiff::RandomStream;

namespace {

double binom_pmf(long n, long k, double p) {
  return std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) +
                  k * std::log(p) + (n - k) * std::log1p(-p));
}

// Checks the first three central moments of Binomial(n, p) draws against the
// exact values, each within 4 empirical standard errors.
void check_binomial_moments(long n, double p, std::uint64_t seed) {
  constexpr int R = 1'000'000;
  RandomStream rng(seed, 0);
  std::vector<double> xs(R);
  for (auto& x : xs) x = static_cast<double>(rng.binomial(n, p));
  const double mu = n * p;
  const double var = n * p * (1 - p);
  const double m3 = var * (1 - 2 * p);
  double s1 = 0, s2 = 0, s3 = 0, q1 = 0, q2 = 0, q3 = 0;
  for (double x : xs) {
    const double c = x - mu;
    s1 += c;
    s2 += c * c;
    s3 += c * c * c;
    q1 += c * c;
    q2 += std::pow(c * c - var, 2);
    q3 += std::pow(c * c * c - m3, 2);
  }
  const double se1 = std::sqrt(q1 / R / R);
  const double se2 = std::sqrt(q2 / R / R);
  const double se3 = std::sqrt(q3 / R / R);
  EXPECT_NEAR(s1 / R, 0.0, 4 * se1) << "mean n=" << n << " p=" << p;
  EXPECT_NEAR(s2 / R, var, 4 * se2) << "variance n=" << n << " p=" << p;
  EXPECT_NEAR(s3 / R, m3, 4 * se3) << "third moment n=" << n << " p=" << p;
}

void check_binomial_pmf(long n, double p, std::uint64_t seed) {
  constexpr int R = 400'000;
  RandomStream rng(seed, 3);
  std::vector<long> counts(static_cast<std::size_t>(n + 1), 0);
  for (int r = 0; r < R; ++r) ++counts[static_cast<std::size_t>(rng.binomial(n, p))];
  for (long k = 0; k <= n; ++k) {
    const double e = R * binom_pmf(n, k, p);
    if (e < 20) continue;
    EXPECT_NEAR(counts[static_cast<std::size_t>(k)], e, 5 * std::sqrt(e)) << "k=" << k;
  }
}

}  // namespace

TEST(RandomStream, SameKeyGivesSameSequence) {
  RandomStream a(42, 7), b(42, 7);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a(), b());
  EXPECT_EQ(a.counter(), b.counter());
}

TEST(RandomStream, ReplicatesAndSeedsDiffer) {
  RandomStream a(42, 7), b(42, 8), c(43, 7);
  int same_ab = 0, same_ac = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a();
    same_ab += x == b();
    same_ac += x == c();
  }
  EXPECT_EQ(same_ab, 0);
  EXPECT_EQ(same_ac, 0);
}

TEST(RandomStream, PhiloxKnownAnswer) {
  // Random123 kat_vectors: philox4x32 10 rounds, counter/key all zero.
  const auto out = patchdiff::detail::philox4x32({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out[0], 0x6627e8d5u);
  EXPECT_EQ(out[1], 0xe169c58du);
  EXPECT_EQ(out[2], 0xbc57ac4cu);
  EXPECT_EQ(out[3], 0x9b00dbd8u);
}

TEST(RandomStream, UniformAndNormalMoments) {
  RandomStream rng(1, 0);
  constexpr int R = 400'000;
  double su = 0, sz = 0, sz2 = 0;
  for (int i = 0; i < R; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = rng.normal();
    sz += z;
    sz2 += z * z;
  }
  EXPECT_NEAR(su / R, 0.5, 4 * std::sqrt(1.0 / 12 / R));
  EXPECT_NEAR(sz / R, 0.0, 4 / std::sqrt(R));
  EXPECT_NEAR(sz2 / R, 1.0, 4 * std::sqrt(2.0 / R));
}

TEST(RandomStream, ExponentialMean) {
  RandomStream rng(2, 0);
  constexpr int R = 200'000;
  double s = 0;
  for (int i = 0; i < R; ++i) s += rng.exponential(4.0);
  EXPECT_NEAR(s / R, 0.25, 4 * 0.25 / std::sqrt(R));
}

TEST(Binomial, DegenerateParameters) {
  RandomStream rng(3, 0);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(rng.binomial(50, 0.0), 0);
    EXPECT_EQ(rng.binomial(50, 1.0), 50);
    EXPECT_EQ(rng.binomial(0, 0.4), 0);
  }
}

TEST(Binomial, InversionBranchMoments) { check_binomial_moments(20, 0.3, 11); }
TEST(Binomial, RejectionBranchMoments) { check_binomial_moments(100, 0.3, 12); }
TEST(Binomial, FlippedRejectionBranchMoments) { check_binomial_moments(200, 0.83, 13); }
TEST(Binomial, LargeNMoments) { check_binomial_moments(100000, 0.01, 14); }

TEST(Binomial, InversionBranchPmf) { check_binomial_pmf(12, 0.37, 21); }
TEST(Binomial, RejectionBranchPmf) { check_binomial_pmf(200, 0.45, 22); }
