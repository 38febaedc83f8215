#pragma once

// Empirical regularised potential, its log-gradient drift and the inner
// Euler-Maruyama integration of one coarse interval.

#include <cmath>
#include <optional>

#include "trsbts/conditioning.hpp"
#include "trsbts/reference.hpp"

namespace trsbts {

struct BridgeStepConfig {
  int n_inner = 16;
  double epsilon = 1e-6;
  std::optional<double> drift_clip;  // ||b|| <= c / sqrt(t_end - tau)
  bool noise = true;                 // false: xi == 0, for deterministic tests

  void validate() const {
    require(n_inner >= 1, Errc::InvalidArgument, "n_inner must be >= 1");
    require(epsilon > 0.0, Errc::InvalidArgument, "epsilon must be positive");
    if (drift_clip) require(*drift_clip > 0.0, Errc::InvalidArgument, "drift_clip must be positive");
  }
};

/// Potential and drift of one interval against one surrogate. Whitened atoms
/// are cached so that each evaluation costs O(M' d) after an O(d^2) transform.
class BridgeKernel {
 public:
  BridgeKernel(const FrozenInterval& fi, const TerminalSurrogate& s) : fi_(fi), s_(s) {
    require(s.size() > 0, Errc::EmptySurrogate, "surrogate has no atoms");
    require(s.dim() == fi.dim(), Errc::DimMismatch, "surrogate/interval dimension");
    white_atoms_ = fi.cov.inv_sqrt() * s.atoms;
    q_start_ = white_atoms_.colwise().squaredNorm().transpose();
    log_w_ = s.weights.array().log().matrix();
  }

  /// log(Phi_m(t, x)) for every atom.
  Vec log_ratios(double t, const Vec& x) const {
    require(x.size() == fi_.dim(), Errc::DimMismatch, "bridge state dimension");
    const double alpha = fi_.time_to_go(t);
    const double beta = fi_.duration();
    const Vec u = fi_.cov.inv_sqrt() * (fi_.anchor - x);
    const double d = static_cast<double>(fi_.dim());
    const double pre = 0.5 * d * std::log(beta / alpha);
    Vec out(s_.size());
    for (Eigen::Index m = 0; m < s_.size(); ++m) {
      const double q_now = (white_atoms_.col(m) + u).squaredNorm();
      out(m) = -q_now / (2.0 * alpha) + q_start_(m) / (2.0 * beta) + pre;
    }
    return out;
  }

  double log_potential(double t, const Vec& x) const {
    const Vec l = log_w_ + log_ratios(t, x);
    const double top = l.maxCoeff();
    return top + std::log((l.array() - top).exp().sum());
  }

  /// Posterior responsibilities w_m Phi_m / sum.
  Vec responsibilities(double t, const Vec& x) const { return stable_softmax(log_w_ + log_ratios(t, x)); }

  /// A^eps grad log H = sum_m r_m (anchor + delta_m - x) / alpha.
  Vec drift(double t, const Vec& x) const {
    const double alpha = fi_.time_to_go(t);
    const Vec r = responsibilities(t, x);
    return (s_.atoms * r + fi_.anchor - x) / alpha;
  }

  /// Diagonal limit t -> t_start at the anchor: E[delta] / beta.
  Vec boundary_drift() const { return s_.atoms * s_.weights / fi_.duration(); }

 private:
  const FrozenInterval& fi_;
  const TerminalSurrogate& s_;
  Mat white_atoms_;
  Vec q_start_;
  Vec log_w_;
};

inline double log_empirical_potential(const FrozenInterval& fi, const TerminalSurrogate& s, double t, const Vec& x) {
  return BridgeKernel(fi, s).log_potential(t, x);
}

inline double empirical_potential(const FrozenInterval& fi, const TerminalSurrogate& s, double t, const Vec& x) {
  return std::exp(log_empirical_potential(fi, s, t, x));
}

inline Vec empirical_drift(const FrozenInterval& fi, const TerminalSurrogate& s, double t, const Vec& x) {
  return BridgeKernel(fi, s).drift(t, x);
}

inline Vec boundary_drift(const FrozenInterval& fi, const TerminalSurrogate& s) {
  require(s.size() > 0, Errc::EmptySurrogate, "surrogate has no atoms");
  require(s.dim() == fi.dim(), Errc::DimMismatch, "surrogate/interval dimension");
  return s.atoms * s.weights / fi.duration();
}

/// Integrates one coarse interval from the anchor with n_inner uniform Euler
/// substeps. The first substep uses the analytic boundary drift; the right
/// endpoint is never evaluated.
inline Vec step_interval(const FrozenInterval& fi, const TerminalSurrogate& s, const BridgeStepConfig& cfg,
                         const Vec& x0, Rng& rng) {
  cfg.validate();
  require(x0.size() == fi.dim() && x0 == fi.anchor, Errc::InvalidArgument, "step_interval must start at the anchor");
  const BridgeKernel kernel(fi, s);
  const double dtau = fi.duration() / cfg.n_inner;
  const double sdt = std::sqrt(dtau);
  const Mat& f = fi.cov.sqrt();
  Vec x = x0;
  for (int r = 0; r < cfg.n_inner; ++r) {
    const double tau = fi.t_start + r * dtau;
    Vec b = (r == 0) ? kernel.boundary_drift() : kernel.drift(tau, x);
    if (cfg.drift_clip) {
      const double cap = *cfg.drift_clip / std::sqrt(fi.t_end - tau);
      const double nb = b.norm();
      if (nb > cap) b *= cap / nb;
    }
    x += b * dtau;
    if (cfg.noise) x += f * standard_normal(rng, fi.dim()) * sdt;
    if (!x.allFinite()) fail(Errc::NonFiniteState, "bridge state became non-finite");
  }
  return x;
}

}  // namespace trsbts
