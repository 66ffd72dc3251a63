#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fastcaps/capsnet.hpp"
#include "fastcaps/random.hpp"
#include "fastcaps/routing.hpp"
#include "oracles.hpp"

using namespace fastcaps;

namespace {

Tensor<double> random_u(std::size_t in, std::size_t out, std::size_t dim, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 g(seed);
  return random_tensor({in, out, dim}, g, -scale, scale);
}

std::vector<std::vector<oracle::Vec>> nested(const Tensor<double>& u) {
  std::vector<std::vector<oracle::Vec>> n(u.dim(0), std::vector<oracle::Vec>(u.dim(1), oracle::Vec(u.dim(2))));
  for (std::size_t i = 0; i < u.dim(0); ++i)
    for (std::size_t j = 0; j < u.dim(1); ++j)
      for (std::size_t k = 0; k < u.dim(2); ++k) n[i][j][k] = u(i, j, k);
  return n;
}

std::vector<std::size_t> divisors(std::size_t n) {
  std::vector<std::size_t> d;
  for (std::size_t f = 1; f <= n; ++f)
    if (n % f == 0) d.push_back(f);
  return d;
}

}  // namespace

TEST(Squash, ZeroNormAndDirection) {
  EXPECT_EQ(squash(std::vector<double>{0, 0, 0}), (std::vector<double>{0, 0, 0}));
  auto g = oracle::rng(1);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> s(8);
    const double scale = std::pow(10.0, oracle::uniform(g, -3, 3));
    for (double& x : s) x = oracle::uniform(g, -scale, scale);
    const auto v = squash(std::span<const double>(s));
    double nv = 0, ns = 0, dot = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      nv += v[i] * v[i];
      ns += s[i] * s[i];
      dot += v[i] * s[i];
    }
    ASSERT_GE(std::sqrt(nv), 0.0);
    ASSERT_LT(std::sqrt(nv), 1.0);
    ASSERT_NEAR(dot / std::sqrt(nv * ns), 1.0, 1e-6);
    ASSERT_NEAR(std::sqrt(nv), ns / (1 + ns), 1e-12);
  }
}

TEST(PrimaryCaps, GroupsConsecutiveChannelsByType) {
  const Tensor<double> zeros({256, 6, 6});
  const auto caps = primary_caps(zeros, 8);
  EXPECT_EQ(caps.dims(), (Dims{1152, 8}));
  for (double v : caps.data()) EXPECT_EQ(v, 0.0);

  Tensor<double> f({256, 6, 6});
  const std::size_t t = 5, p = 17;
  for (std::size_t d = 0; d < 8; ++d) f[(t * 8 + d) * 36 + p] = 1.0 + d;
  const auto c = primary_caps(f, 8, false);
  for (std::size_t i = 0; i < 1152; ++i) {
    double n = 0;
    for (std::size_t d = 0; d < 8; ++d) n += std::fabs(c(i, d));
    if (i == t * 36 + p) {
      for (std::size_t d = 0; d < 8; ++d) EXPECT_EQ(c(i, d), 1.0 + d);
    } else {
      EXPECT_EQ(n, 0.0) << i;
    }
  }
  EXPECT_THROW(primary_caps(Tensor<double>({10, 2, 2}), 8), ShapeError);
}

TEST(Agreement, ParallelEqualsReferenceBitwiseForEveryDivisor) {
  for (std::size_t in : {8u, 36u}) {
    for (int trial = 0; trial < 10; ++trial) {
      const auto u = quantize(random_u(in, 10, 16, 100 + trial, 4.0), kQ8_8);
      std::mt19937_64 g(200 + trial);
      const auto v = quantize(random_tensor({10, 16}, g, -1, 1), kQ8_8);
      const auto ref = agreement_reference(u, v);
      for (std::size_t f : divisors(in)) ASSERT_EQ(agreement_parallel(u, v, f), ref) << "fact " << f;
    }
  }
}

TEST(Agreement, NonDivisorFactRejected) {
  const auto u = random_u(1152, 2, 2, 3);
  const Tensor<double> v({2, 2});
  EXPECT_THROW(agreement_parallel(u, v, 10), ContractError);
  EXPECT_THROW(agreement_parallel(u, v, 0), ContractError);
  EXPECT_NO_THROW(agreement_parallel(u, v, 9));
  EXPECT_THROW(route_optimized(u, 3, 10), ContractError);
}

TEST(Route, ReferenceMatchesStraightLineOracle) {
  for (int trial = 0; trial < 20; ++trial) {
    const auto u = random_u(8, 3, 4, 300 + trial);
    const auto st = route_reference(u, 3);
    const auto want = oracle::route(nested(u), 3);
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) ASSERT_NEAR(st.v(j, k), want.v[j][k], 1e-10);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 3; ++j) ASSERT_NEAR(st.c(i, j), want.c[i][j], 1e-10);
  }
}

TEST(Route, IdenticalPredictionsKeepCouplingUniform) {
  Tensor<double> u({6, 4, 5});
  auto g = oracle::rng(4);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t k = 0; k < 5; ++k) {
      const double x = oracle::uniform(g, -1, 1);
      for (std::size_t j = 0; j < 4; ++j) u(i, j, k) = x;
    }
  for (RoutingMode mode : {RoutingMode::reference, RoutingMode::optimized}) {
    const auto st = route(u, {3, mode, 2, false});
    for (double c : st.c.data()) EXPECT_NEAR(c, 0.25, 1e-3);
  }
}

TEST(Route, CouplingRowsSumToOneEveryIteration) {
  const auto u = random_u(36, 10, 16, 5, 0.5);
  for (RoutingMode mode : {RoutingMode::reference, RoutingMode::optimized}) {
    for (int iters = 1; iters <= 4; ++iters) {
      const auto st = route(u, {iters, mode, 6, false});
      for (std::size_t i = 0; i < 36; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 10; ++j) s += st.c(i, j);
        ASSERT_NEAR(s, 1.0, 1e-3);
      }
    }
  }
}

TEST(Route, OptimizedSingleIterationIsUniform) {
  const auto st = route_optimized(random_u(12, 10, 16, 6), 1, 4);
  for (double c : st.c.data()) EXPECT_NEAR(c, 0.1, 1e-3);
}

TEST(Route, OptimizedCloseToReference) {
  for (int trial = 0; trial < 20; ++trial) {
    const auto u = random_u(36, 10, 16, 400 + trial, 0.3);
    const auto ref = route_reference(u, 3);
    const auto opt = route_optimized(u, 3, 9);
    for (std::size_t p = 0; p < ref.v.size(); ++p) ASSERT_NEAR(opt.v[p], ref.v[p], 0.02);
  }
}

TEST(Route, FixedPointTracksReal) {
  const auto u = random_u(36, 10, 16, 7, 0.3);
  const auto real = route_reference(u, 3);
  const auto fx = route_reference(quantize(u, kQ8_8), 3);
  for (std::size_t p = 0; p < real.v.size(); ++p) EXPECT_NEAR(fx.v[p].to_real(), real.v[p], 0.02);
  const auto fx_opt = route_optimized(quantize(u, kQ8_8), 3, 12);
  for (std::size_t p = 0; p < real.v.size(); ++p) EXPECT_NEAR(fx_opt.v[p].to_real(), real.v[p], 0.03);
}

TEST(Route, UpdateLastOnlyChangesLogits) {
  const auto u = random_u(8, 3, 4, 8);
  const auto a = route(u, {2, RoutingMode::reference, 1, false});
  const auto b = route(u, {2, RoutingMode::reference, 1, true});
  EXPECT_EQ(a.v, b.v);
  EXPECT_NE(a.b, b.b);
}

TEST(Route, PreconditionErrors) {
  EXPECT_THROW(route_reference(random_u(4, 2, 2, 9), 0), ContractError);
  EXPECT_THROW(route_reference(Tensor<double>({4, 2}), 1), ShapeError);
  EXPECT_THROW(agreement_reference(random_u(4, 2, 2, 9), Tensor<double>({3, 2})), ShapeError);
}

TEST(LargestDivisor, PicksLargestDivisorNotAboveLimit) {
  EXPECT_EQ(largest_divisor_at_most(1152, 10), 9u);
  EXPECT_EQ(largest_divisor_at_most(252, 10), 9u);
  EXPECT_EQ(largest_divisor_at_most(432, 10), 9u);
  EXPECT_EQ(largest_divisor_at_most(7, 10), 7u);
  EXPECT_EQ(largest_divisor_at_most(13, 10), 1u);
}
