#pragma once

// Synthetic data generators: a Hopf limit cycle embedded in R^d with a fast
// Ornstein-Uhlenbeck complement, and Heston paths with per-path parameters
// plus a moment-based per-path estimator.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "trsbts/types.hpp"

namespace trsbts {

struct HopfConfig {
  int d = 4;
  double dt = 1.0 / 250.0;
  double years = 8.6;  // 2151 steps, about 1500 training atoms under a 70% split
  double omega = 350.0;        // angular speed of the cycle
  double radial_gain = 1.0;    // strength of the cubic pull toward r = 1
  double sigma_signal = 1.0;   // per-coordinate diffusion of the signal block
  double lambda_perp = 250.0;  // OU mean-reversion rate of the complement
  double sigma_perp = 1.0;     // OU diffusion of the complement
  int substeps = 32;
  std::uint64_t seed = 0;

  int steps() const { return static_cast<int>(std::lround(years / dt)) + 1; }
  double perp_stationary_variance() const { return sigma_perp * sigma_perp / (2.0 * lambda_perp); }

  void validate() const {
    require(d >= 2, Errc::InvalidArgument, "hopf: ambient dimension must be >= 2");
    require(dt > 0.0 && years > 0.0, Errc::InvalidArgument, "hopf: dt and years must be positive");
    require(lambda_perp > 0.0 && sigma_signal >= 0.0 && sigma_perp >= 0.0 && radial_gain >= 0.0,
            Errc::InvalidArgument, "hopf: rates and scales must be non-negative");
    require(substeps >= 1, Errc::InvalidArgument, "hopf: substeps must be >= 1");
  }
};

/// Deterministic signal flow over time h. Rotation and the radial flow
/// r' = g r (1 - r^2) commute, so composing their closed forms is exact.
inline Eigen::Vector2d hopf_flow(const HopfConfig& cfg, const Eigen::Vector2d& x, double h) {
  const double r2 = x.squaredNorm();
  if (r2 == 0.0) return x;
  const double decay = std::exp(-2.0 * cfg.radial_gain * h);
  const double r2_new = 1.0 / (1.0 + (1.0 / r2 - 1.0) * decay);
  const double c = std::cos(cfg.omega * h), s = std::sin(cfg.omega * h);
  const Eigen::Vector2d rot(c * x(0) - s * x(1), s * x(0) + c * x(1));
  return rot * std::sqrt(r2_new / r2);
}

/// One coarse step of the signal block driven by 2 * substeps given standard
/// normals (substep s uses normals[2s], normals[2s+1]). Each substep applies
/// the exact deterministic flow and then a Gaussian increment.
inline Eigen::Vector2d hopf_signal_step(const HopfConfig& cfg, Eigen::Vector2d x, std::span<const double> normals) {
  require(normals.size() == static_cast<std::size_t>(2 * cfg.substeps), Errc::ShapeMismatch,
          "hopf_signal_step: two normals per substep");
  const double h = cfg.dt / cfg.substeps;
  const double sh = cfg.sigma_signal * std::sqrt(h);
  for (int s = 0; s < cfg.substeps; ++s) {
    x = hopf_flow(cfg, x, h) + sh * Eigen::Vector2d(normals[2 * s], normals[2 * s + 1]);
  }
  return x;
}

inline Eigen::Vector2d hopf_signal_step(const HopfConfig& cfg, Eigen::Vector2d x, Rng& rng) {
  std::normal_distribution<double> n01;
  std::vector<double> z(static_cast<std::size_t>(2 * cfg.substeps));
  for (auto& v : z) v = n01(rng);
  return hopf_signal_step(cfg, x, z);
}

/// Signal on coordinates 1-2 starting at (1, 0); the complement starts from
/// its stationary law. The two blocks draw from separate streams, so the
/// signal realization does not depend on d.
inline CoarsePath simulate_hopf(const HopfConfig& cfg) {
  cfg.validate();
  Rng sig = make_stream(cfg.seed, 0);
  Rng perp = make_stream(cfg.seed, 1);
  std::normal_distribution<double> n01;
  const int n = cfg.steps();
  const Eigen::Index dp = cfg.d - 2;
  const double decay = std::exp(-cfg.lambda_perp * cfg.dt);
  const double v_stat = cfg.perp_stationary_variance();
  const double step_sd = std::sqrt(v_stat * (1.0 - decay * decay));

  CoarsePath out;
  out.states.reserve(static_cast<std::size_t>(n));
  Eigen::Vector2d x(1.0, 0.0);
  Vec y(dp);
  for (Eigen::Index k = 0; k < dp; ++k) y(k) = std::sqrt(v_stat) * n01(perp);
  for (int t = 0; t < n; ++t) {
    if (t > 0) {
      x = hopf_signal_step(cfg, x, sig);
      for (Eigen::Index k = 0; k < dp; ++k) y(k) = decay * y(k) + step_sd * n01(perp);
    }
    Vec s(cfg.d);
    s.head(2) = x;
    s.tail(dp) = y;
    out.states.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Heston

struct HestonParams {
  double kappa = 2.0;
  double theta = 0.04;
  double xi = 0.3;
  double rho = -0.5;
};

struct Range {
  double lo = 0.0, hi = 0.0;
};

struct HestonPrior {
  Range kappa{1.0, 4.0};
  Range theta{0.02, 0.09};
  Range xi{0.15, 0.4};
  Range rho{-0.8, -0.2};
};

struct HestonConfig {
  double mu = 0.05;
  HestonParams params;
  HestonPrior prior;
  int T = 252;
  double dt = 1.0 / 252.0;
  double S0 = 1.0;
  double V0 = 0.04;
  int substeps = 16;
  std::uint64_t seed = 0;

  void validate() const {
    require(params.kappa > 0.0 && params.theta > 0.0 && params.xi >= 0.0, Errc::InvalidArgument,
            "heston: kappa, theta must be positive and xi non-negative");
    require(std::abs(params.rho) <= 1.0, Errc::InvalidArgument, "heston: |rho| must be <= 1");
    require(T >= 2 && dt > 0.0 && S0 > 0.0 && V0 >= 0.0 && substeps >= 1, Errc::InvalidArgument,
            "heston: invalid grid or initial state");
  }
};

/// Independent uniform draw of every parameter from the prior box.
inline HestonParams draw_heston_params(const HestonPrior& prior, Rng& rng) {
  auto u = [&](const Range& r) { return std::uniform_real_distribution<double>(r.lo, r.hi)(rng); };
  HestonParams p;
  p.kappa = u(prior.kappa);
  p.theta = u(prior.theta);
  p.xi = u(prior.xi);
  p.rho = u(prior.rho);
  return p;
}

/// Full-truncation Euler; returns T states of (log S, V).
inline CoarsePath simulate_heston(const HestonConfig& cfg, Rng& rng) {
  cfg.validate();
  std::normal_distribution<double> n01;
  const auto& p = cfg.params;
  const double h = cfg.dt / cfg.substeps;
  const double sh = std::sqrt(h);
  const double rc = std::sqrt(std::max(0.0, 1.0 - p.rho * p.rho));
  double ls = std::log(cfg.S0), v = cfg.V0;
  CoarsePath out;
  out.states.reserve(static_cast<std::size_t>(cfg.T));
  auto emit = [&] {
    Vec z(2);
    z << ls, v;
    out.states.push_back(std::move(z));
  };
  emit();
  for (int t = 1; t < cfg.T; ++t) {
    for (int s = 0; s < cfg.substeps; ++s) {
      const double z1 = n01(rng), z2 = n01(rng);
      const double vp = std::max(v, 0.0);
      const double sv = std::sqrt(vp);
      ls += (cfg.mu - 0.5 * vp) * h + sv * sh * z1;
      v += p.kappa * (p.theta - vp) * h + p.xi * sv * sh * (p.rho * z1 + rc * z2);
    }
    emit();
  }
  return out;
}

struct HestonEstimate {
  double kappa = 0.0, theta = 0.0, xi = 0.0, rho = 0.0;
  bool kappa_clamped = false;
};

/// Moment/regression estimator on a (log S, V) path.
inline HestonEstimate estimate_heston(const CoarsePath& path, double dt) {
  if (path.size() < 32) fail(Errc::DegeneratePath, "estimate_heston needs >= 32 points");
  require(dt > 0.0 && path.dim() == 2, Errc::InvalidArgument, "estimate_heston expects (log S, V) and dt > 0");
  const std::size_t n = path.size();
  std::vector<double> V(n), L(n);
  for (std::size_t t = 0; t < n; ++t) {
    L[t] = path.states[t](0);
    V[t] = std::max(path.states[t](1), 1e-10);
    if (!std::isfinite(L[t]) || !std::isfinite(path.states[t](1)))
      fail(Errc::DegeneratePath, "estimate_heston: non-finite path value");
  }
  HestonEstimate e;
  double mv = 0.0;
  for (double v : V) mv += v;
  mv /= static_cast<double>(n);
  e.theta = mv;

  // AR(1): V_{t+1} = a + b V_t + resid
  const std::size_t m = n - 1;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t t = 0; t < m; ++t) {
    sx += V[t];
    sy += V[t + 1];
    sxx += V[t] * V[t];
    sxy += V[t] * V[t + 1];
  }
  const double md = static_cast<double>(m);
  const double vx = sxx - sx * sx / md;
  double b = vx > 1e-300 ? (sxy - sx * sy / md) / vx : 1.0;
  const double a = (sy - b * sx) / md;
  double kappa = (b > 0.0) ? -std::log(b) / dt : 1e3;
  if (!std::isfinite(kappa) || kappa < 1e-3 || kappa > 1e3) {
    e.kappa_clamped = true;
    kappa = std::isfinite(kappa) ? std::clamp(kappa, 1e-3, 1e3) : 1e-3;
  }
  e.kappa = kappa;

  std::vector<double> rv(m), rs(m);
  double ssr = 0.0, mres = 0.0;
  for (std::size_t t = 0; t < m; ++t) {
    const double r = V[t + 1] - (a + b * V[t]);
    mres += r;
    rv[t] = r / std::sqrt(V[t] * dt);
    rs[t] = (L[t + 1] - L[t] + 0.5 * V[t] * dt) / std::sqrt(V[t] * dt);
  }
  mres /= md;
  for (std::size_t t = 0; t < m; ++t) {
    const double r = V[t + 1] - (a + b * V[t]);
    ssr += (r - mres) * (r - mres);
  }
  const double var_res = ssr / (md - 1.0);
  e.xi = std::sqrt(std::max(var_res, 0.0) / (mv * dt));

  auto mean = [](const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
  };
  const double ma = mean(rs), mb = mean(rv);
  double cab = 0.0, caa = 0.0, cbb = 0.0;
  for (std::size_t t = 0; t < m; ++t) {
    cab += (rs[t] - ma) * (rv[t] - mb);
    caa += (rs[t] - ma) * (rs[t] - ma);
    cbb += (rv[t] - mb) * (rv[t] - mb);
  }
  e.rho = (caa > 0.0 && cbb > 0.0) ? cab / std::sqrt(caa * cbb) : 0.0;
  return e;
}

}  // namespace trsbts
