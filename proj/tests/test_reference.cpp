#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "test_util.hpp"
#include "trsbts/reference.hpp"

using namespace trsbts;
using namespace trsbts::testing;

namespace {

FrozenInterval make_fi(Rng& rng, Eigen::Index d, Eigen::Index rank, double eps) {
  const double t0 = uniform(rng, 0.0, 2.0);
  return FrozenInterval(t0, t0 + uniform(rng, 0.2, 1.5), spectral_floor(random_psd(rng, d, rank), eps),
                        random_vec(rng, d));
}

// log N(y; 0, s A) evaluated in extended precision from the eigendecomposition.
long double log_gauss(const FlooredPsd& a, double s, const Vec& y) {
  const Mat& q = a.eigenvectors();
  const Vec& lam = a.floored_eigs();
  long double out = 0.0L;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    long double proj = 0.0L;
    for (Eigen::Index k = 0; k < y.size(); ++k) proj += static_cast<long double>(q(k, i)) * y(k);
    const long double var = static_cast<long double>(s) * lam(i);
    out += -0.5L * proj * proj / var - 0.5L * std::log(2.0L * std::numbers::pi_v<long double> * var);
  }
  return out;
}

}  // namespace

TEST(KernelRatio, EqualsOneAtIntervalStart) {
  Rng rng = make_stream(10, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const FrozenInterval fi = make_fi(rng, 3, 2, 1e-3);
    EXPECT_NEAR(kernel_ratio(fi, fi.t_start, fi.anchor, random_vec(rng, 3)), 1.0, 1e-12);
  }
}

TEST(KernelRatio, PrefactorAtHalfTime) {
  for (Eigen::Index d : {1, 2, 5}) {
    const FrozenInterval fi(0.0, 2.0, spectral_floor(SymMatrix::identity(d), 0.1), Vec::Zero(d));
    EXPECT_NEAR(kernel_ratio(fi, 1.0, fi.anchor, Vec::Zero(d)), std::pow(2.0, d / 2.0), 1e-12);
  }
}

TEST(KernelRatio, TwoDensityQuotientOracle) {
  Rng rng = make_stream(11, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const FrozenInterval fi = make_fi(rng, 3, 1 + trial % 3, 0.05);
    const double t = fi.t_start + uniform(rng, 0.0, 0.95) * fi.duration();
    const Vec x = fi.anchor + 0.3 * random_vec(rng, 3);
    const Vec delta = 0.5 * random_vec(rng, 3);
    const long double num = log_gauss(fi.cov, fi.t_end - t, fi.anchor + delta - x);
    const long double den = log_gauss(fi.cov, fi.duration(), delta);
    const double oracle = static_cast<double>(num - den);
    EXPECT_NEAR(log_kernel_ratio(fi, t, x, delta), oracle, 1e-9 * (1.0 + std::abs(oracle)));
  }
}

TEST(KernelRatio, TimeOutOfRange) {
  const FrozenInterval fi(1.0, 2.0, spectral_floor(SymMatrix::identity(2), 1.0), Vec::Zero(2));
  for (double t : {0.5, 2.0, 3.0}) {
    try {
      (void)kernel_ratio(fi, t, Vec::Zero(2), Vec::Zero(2));
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::TimeOutOfRange);
    }
  }
}

TEST(KernelRatio, ConcaveQuadraticInDelta) {
  Rng rng = make_stream(12, 0);
  for (int trial = 0; trial < 30; ++trial) {
    const FrozenInterval fi = make_fi(rng, 2, 2, 1e-2);
    const double t = fi.t_start + uniform(rng, 0.05, 0.95) * fi.duration();
    const double alpha = fi.t_end - t;
    EXPECT_GT(1.0 / alpha - 1.0 / fi.duration(), 0.0);
    const Vec x = random_vec(rng, 2), d0 = random_vec(rng, 2), u = random_vec(rng, 2);
    // second difference along u equals -u^T A^{-1} u (1/alpha - 1/beta)
    const double h = 0.1;
    const double second = log_kernel_ratio(fi, t, x, d0 + h * u) - 2.0 * log_kernel_ratio(fi, t, x, d0) +
                          log_kernel_ratio(fi, t, x, d0 - h * u);
    const double expect = -h * h * u.dot(fi.cov.inv() * u) * (1.0 / alpha - 1.0 / fi.duration());
    EXPECT_LT(second, 0.0);
    EXPECT_NEAR(second, expect, 1e-8 * (1.0 + std::abs(expect)));
    EXPECT_TRUE(std::isfinite(log_kernel_ratio(fi, t, x, d0)));
  }
}

TEST(KernelRatio, OnLeafEpsilonIndependence) {
  Rng rng = make_stream(13, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const SymMatrix base = random_psd(rng, 4, 2);
    const double lmin = base.eigenvalues()(2);
    const double e1 = 1e-3 * lmin, e2 = 1e-6 * lmin;
    const Vec anchor = random_vec(rng, 4);
    const FrozenInterval f1(0.0, 1.0, spectral_floor(base, e1), anchor);
    const FrozenInterval f2(0.0, 1.0, spectral_floor(base, e2), anchor);
    const Vec delta = base.matrix() * random_vec(rng, 4);
    const Vec x = anchor + base.matrix() * random_vec(rng, 4) * 0.2;
    const double t = uniform(rng, 0.0, 0.9);
    const double a = log_kernel_ratio(f1, t, x, delta), b = log_kernel_ratio(f2, t, x, delta);
    EXPECT_NEAR(std::exp(a - b), 1.0, 1e-10);
  }
}

TEST(KernelRatioGrad, Examples) {
  const FrozenInterval fi(0.0, 2.0, spectral_floor(SymMatrix::identity(1), 1e-6), Vec::Zero(1));
  Vec x(1), delta(1);
  x << 1.0;
  delta << 2.0;
  EXPECT_NEAR(kernel_ratio_grad(fi, 1.0, x, delta)(0), 1.0, 1e-12);
  Rng rng = make_stream(14, 0);
  const FrozenInterval g = make_fi(rng, 3, 3, 1e-3);
  const Vec d = random_vec(rng, 3);
  EXPECT_LE(kernel_ratio_grad(g, g.t_start, g.anchor + d, d).norm(), 1e-12);
}

TEST(KernelRatioGrad, FiniteDifferenceOracle) {
  Rng rng = make_stream(15, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const FrozenInterval fi = make_fi(rng, 3, 3, 0.1);
    const double t = fi.t_start + uniform(rng, 0.0, 0.8) * fi.duration();
    const Vec x = fi.anchor + random_vec(rng, 3) * 0.5, delta = random_vec(rng, 3) * 0.5;
    const Vec g = kernel_ratio_grad(fi, t, x, delta);
    const double h = 1e-5;
    Vec fd(3);
    for (Eigen::Index i = 0; i < 3; ++i) {
      Vec xp = x, xm = x;
      xp(i) += h;
      xm(i) -= h;
      fd(i) = (log_kernel_ratio(fi, t, xp, delta) - log_kernel_ratio(fi, t, xm, delta)) / (2 * h);
    }
    EXPECT_LE((g - fd).norm(), 1e-6 * (1.0 + g.norm()));
  }
}

TEST(CumulantPath, RejectsNonMonotone) {
  EXPECT_THROW(CumulantPath({0.0, 1.0}, {SymMatrix::identity(2), SymMatrix::zero(2)}), Error);
  EXPECT_THROW(CumulantPath({1.0, 0.0}, {SymMatrix::zero(2), SymMatrix::identity(2)}), Error);
}

TEST(FrozenBridgeMean, SingleKnotIsLinearInterpolation) {
  Rng rng = make_stream(16, 0);
  const SymMatrix c = random_psd(rng, 3, 3);
  const CumulantPath cum = CumulantPath::frozen(1.0, 3.0, c);
  const Vec x = random_vec(rng, 3), z = random_vec(rng, 3);
  for (double t : {1.0, 1.5, 2.2, 3.0}) {
    const Vec expect = x + ((t - 1.0) / 2.0) * (z - x);
    EXPECT_LE((frozen_bridge_mean(cum, t, x, z) - expect).norm(), 1e-9);
  }
}

TEST(FrozenBridgeMean, TerminalHitsEndpointOnLeaf) {
  Rng rng = make_stream(17, 0);
  const SymMatrix c = random_psd(rng, 4, 2);
  const CumulantPath cum = CumulantPath::frozen(0.0, 1.0, c);
  const Vec x = random_vec(rng, 4);
  const Vec z = x + c.matrix() * random_vec(rng, 4);
  EXPECT_LE((frozen_bridge_mean(cum, 1.0, x, z) - z).norm(), 1e-8 * (1.0 + z.norm()));
  const Vec off = x + Vec::Ones(4) * 0.0 + c.eigenvectors().col(0);
  try {
    (void)frozen_bridge_mean(cum, 0.5, x, off);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EndpointOffLeaf);
  }
}

TEST(FrozenBridgeMean, SymbolicTwoKnotOracle) {
  // Gamma(t) = diag(t^2, t) on [0, 1], sampled at knots {0, 0.5, 1}.
  auto gam = [](double t) {
    Mat m = Mat::Zero(2, 2);
    m(0, 0) = t * t;
    m(1, 1) = t;
    return SymMatrix(m);
  };
  const CumulantPath cum({0.0, 0.5, 1.0}, {gam(0.0), gam(0.5), gam(1.0)});
  Vec x(2), z(2);
  x << 0.3, -0.2;
  z << 1.1, 0.7;
  for (double t : {0.1, 0.25, 0.5, 0.8}) {
    // piecewise-linear interpolation of t^2 and t, C = I
    const double g1 = t <= 0.5 ? 0.5 * t : 0.25 + (t - 0.5) * 1.5;
    Vec expect(2);
    expect << x(0) + g1 * (z(0) - x(0)), x(1) + t * (z(1) - x(1));
    EXPECT_LE((frozen_bridge_mean(cum, t, x, z) - expect).norm(), 1e-12);
  }
}

TEST(CumulantInterpError, ZeroCases) {
  Rng rng = make_stream(18, 0);
  const SymMatrix c = random_psd(rng, 3, 2);
  const CumulantPath lin = CumulantPath::frozen(0.0, 1.0, c);
  EXPECT_NEAR(cumulant_interp_error(lin, lin), 0.0, 1e-14);
  std::vector<double> knots;
  for (int k = 0; k <= 10; ++k) knots.push_back(k / 10.0);
  EXPECT_NEAR(cumulant_interp_error(lin, CumulantPath::sampled(lin, knots)), 0.0, 1e-12);
}

TEST(CumulantInterpError, KnotMismatch) {
  const CumulantPath a = CumulantPath::frozen(0.0, 1.0, SymMatrix::identity(2));
  const CumulantPath b({0.0, 0.3, 1.0}, {SymMatrix::zero(2), SymMatrix::identity(2) * 0.3, SymMatrix::identity(2)});
  try {
    (void)cumulant_interp_error(b, a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::KnotMismatch);
  }
}

TEST(CumulantInterpError, DenseGridSupOracle) {
  // truth Gamma(t) = diag(t^2, t^2) on 10 knots vs one-piece frozen
  std::vector<double> knots;
  std::vector<SymMatrix> g;
  for (int k = 0; k <= 10; ++k) {
    const double t = k / 10.0;
    knots.push_back(t);
    g.push_back(SymMatrix::identity(2) * (t * t));
  }
  const CumulantPath fine(knots, g);
  const CumulantPath coarse = CumulantPath::frozen(0.0, 1.0, SymMatrix::identity(2));
  const double eta = cumulant_interp_error(coarse, fine);
  double sup = 0.0;
  for (int k = 0; k <= 1000; ++k) {
    const double t = k / 1000.0;
    sup = std::max(sup, op_norm(fine.gamma_at(t).matrix() - coarse.gamma_at(t).matrix()));
  }
  EXPECT_GT(eta, 0.0);
  EXPECT_NEAR(eta, sup, 1e-12);
  EXPECT_NEAR(eta, 0.25, 1e-12);  // max of t - t^2 over the knots, at t = 0.5
}

TEST(FrozenBridgeMean, StabilityBound) {
  Rng rng = make_stream(19, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index d = 3;
    const int n = 6;
    std::vector<double> knots{0.0};
    std::vector<SymMatrix> g{SymMatrix::zero(d)};
    const Eigen::Index rank = 1 + trial % 3;
    const Mat basis = random_matrix(rng, d, rank);
    for (int k = 1; k <= n; ++k) {
      knots.push_back(knots.back() + uniform(rng, 0.05, 0.4));
      const Mat inc = basis * random_psd(rng, rank, rank).matrix() * basis.transpose();
      g.push_back(SymMatrix(g.back().matrix() + inc));
    }
    const CumulantPath fine(knots, g);
    std::vector<double> ck{knots.front()};
    for (int k = 1; k < n; ++k)
      if (uniform(rng, 0.0, 1.0) < 0.4) ck.push_back(knots[static_cast<std::size_t>(k)]);
    ck.push_back(knots.back());
    const CumulantPath coarse = CumulantPath::sampled(fine, ck);
    const Vec x = random_vec(rng, d);
    const Vec z = x + fine.terminal().matrix() * random_vec(rng, d);
    const double eta = cumulant_interp_error(coarse, fine);
    const double scale = (pinv_sqrt(fine.terminal()).matrix() * (z - x)).norm();
    double sup = 0.0;
    for (int s = 0; s <= 200; ++s) {
      const double t = std::min(knots.back(), knots.front() + (knots.back() - knots.front()) * s / 200.0);
      sup = std::max(sup, (frozen_bridge_mean(fine, t, x, z) - frozen_bridge_mean(coarse, t, x, z)).norm());
    }
    EXPECT_LE(sup, eta * scale * (1.0 + 1e-8) + 1e-10);
  }
}
