#pragma once

// Intervalwise frozen Gaussian reference: the coherent kernel ratio between
// the floored transition density at (t, x) and at the interval start, its
// log-gradient, cumulant interpolation and frozen-bridge endpoint means.

#include <cmath>
#include <string>
#include <vector>

#include "trsbts/linalg.hpp"

namespace trsbts {

/// One coarse interval [t_start, t_end] with frozen floored covariance (a rate)
/// and left state `anchor`.
struct FrozenInterval {
  double t_start = 0.0;
  double t_end = 1.0;
  FlooredPsd cov;
  Vec anchor;

  FrozenInterval() = default;
  FrozenInterval(double t0, double t1, FlooredPsd c, Vec a)
      : t_start(t0), t_end(t1), cov(std::move(c)), anchor(std::move(a)) {
    require(t_end > t_start, Errc::InvalidArgument, "FrozenInterval needs t_start < t_end");
    require(anchor.size() == cov.dim(), Errc::DimMismatch, "FrozenInterval anchor/cov dimension");
  }

  double duration() const { return t_end - t_start; }
  Eigen::Index dim() const { return anchor.size(); }

  /// Time to the right endpoint; throws unless t_start <= t < t_end.
  double time_to_go(double t) const {
    if (!(t >= t_start && t < t_end)) {
      fail(Errc::TimeOutOfRange, "t=" + std::to_string(t) + " outside [" + std::to_string(t_start) + ", " +
                                     std::to_string(t_end) + ")");
    }
    return t_end - t;
  }
};

/// log Phi(t, x, delta), assembled in log space so that the (beta/alpha)^{d/2}
/// and eps^{-d} factors never materialize.
inline double log_kernel_ratio(const FrozenInterval& fi, double t, const Vec& x, const Vec& delta) {
  require(x.size() == fi.dim() && delta.size() == fi.dim(), Errc::DimMismatch, "kernel_ratio dims");
  const double alpha = fi.time_to_go(t);
  const double beta = fi.duration();
  const Mat& w = fi.cov.inv_sqrt();
  const double q_now = (w * (fi.anchor + delta - x)).squaredNorm();
  const double q_start = (w * delta).squaredNorm();
  const double d = static_cast<double>(fi.dim());
  return -q_now / (2.0 * alpha) + q_start / (2.0 * beta) + 0.5 * d * std::log(beta / alpha);
}

inline double kernel_ratio(const FrozenInterval& fi, double t, const Vec& x, const Vec& delta) {
  return std::exp(log_kernel_ratio(fi, t, x, delta));
}

/// Gradient in x of log Phi: (1/alpha) A^{-1} (anchor + delta - x).
inline Vec kernel_ratio_grad(const FrozenInterval& fi, double t, const Vec& x, const Vec& delta) {
  require(x.size() == fi.dim() && delta.size() == fi.dim(), Errc::DimMismatch, "kernel_ratio_grad dims");
  const double alpha = fi.time_to_go(t);
  return fi.cov.inv() * (fi.anchor + delta - x) / alpha;
}

/// Piecewise-linear covariance cumulant Gamma(t) on [knots.front(), knots.back()].
class CumulantPath {
 public:
  CumulantPath(std::vector<double> knots, std::vector<SymMatrix> gammas)
      : knots_(std::move(knots)), gammas_(std::move(gammas)) {
    require(knots_.size() >= 2 && knots_.size() == gammas_.size(), Errc::InvalidArgument,
            "CumulantPath needs >= 2 knots, one Gamma per knot");
    const Eigen::Index d = gammas_.front().dim();
    for (std::size_t k = 0; k < knots_.size(); ++k) {
      require(gammas_[k].dim() == d, Errc::DimMismatch, "CumulantPath Gamma dimensions");
      if (k > 0) {
        require(knots_[k] > knots_[k - 1], Errc::InvalidArgument, "CumulantPath knots must ascend");
        const SymMatrix step = gammas_[k] - gammas_[k - 1];
        require(step.min_eigenvalue() >= -1e-10 * std::max(1.0, step.spectral_norm()), Errc::InvalidArgument,
                "CumulantPath Gamma must be nondecreasing in PSD order");
      }
    }
  }

  /// One-piece frozen cumulant: linear from 0 at s to c at t.
  static CumulantPath frozen(double s, double t, const SymMatrix& c) {
    return CumulantPath({s, t}, {SymMatrix::zero(c.dim()), c});
  }

  /// Samples `truth` at `knots` (which must lie within its span).
  static CumulantPath sampled(const CumulantPath& truth, const std::vector<double>& knots) {
    std::vector<SymMatrix> g;
    g.reserve(knots.size());
    for (double t : knots) g.push_back(truth.gamma_at(t));
    return CumulantPath(knots, std::move(g));
  }

  const std::vector<double>& knots() const { return knots_; }
  const std::vector<SymMatrix>& gammas() const { return gammas_; }
  double t_start() const { return knots_.front(); }
  double t_end() const { return knots_.back(); }
  Eigen::Index dim() const { return gammas_.front().dim(); }
  const SymMatrix& terminal() const { return gammas_.back(); }

  SymMatrix gamma_at(double t) const {
    require(t >= t_start() && t <= t_end(), Errc::TimeOutOfRange, "CumulantPath::gamma_at outside span");
    std::size_t k = 1;
    while (k + 1 < knots_.size() && knots_[k] < t) ++k;
    const double a = knots_[k - 1], b = knots_[k];
    const double w = (t - a) / (b - a);
    return SymMatrix(gammas_[k - 1].matrix() * (1.0 - w) + gammas_[k].matrix() * w);
  }

 private:
  std::vector<double> knots_;
  std::vector<SymMatrix> gammas_;
};

/// Bridge mean x + Gamma(t) C^+ (z - x), with C the terminal cumulant.
inline Vec frozen_bridge_mean(const CumulantPath& cum, double t, const Vec& x, const Vec& z) {
  require(x.size() == cum.dim() && z.size() == cum.dim(), Errc::DimMismatch, "frozen_bridge_mean dims");
  const SymMatrix cplus = pinv(cum.terminal());
  const Vec dz = z - x;
  const Vec on_leaf = cum.terminal().matrix() * (cplus.matrix() * dz);
  if ((dz - on_leaf).norm() >= 1e-8 * std::max(dz.norm(), 1e-300) && dz.norm() > 0.0) {
    fail(Errc::EndpointOffLeaf, "z - x is not in the range of the terminal cumulant");
  }
  return x + cum.gamma_at(t).matrix() * (cplus.matrix() * dz);
}

/// sup over fine knots of ||(Gamma_fine(t) - Gamma_coarse(t)) C^{+1/2}||_op.
inline double cumulant_interp_error(const CumulantPath& coarse, const CumulantPath& fine) {
  require(coarse.dim() == fine.dim(), Errc::DimMismatch, "cumulant_interp_error dims");
  const auto& fk = fine.knots();
  for (double t : coarse.knots()) {
    bool found = false;
    for (double s : fk) found = found || (s == t);
    if (!found) fail(Errc::KnotMismatch, "fine path does not refine the coarse knot set");
  }
  if (fine.t_start() != coarse.t_start() || fine.t_end() != coarse.t_end()) {
    fail(Errc::KnotMismatch, "paths span different intervals");
  }
  const Mat diff_c = fine.terminal().matrix() - coarse.terminal().matrix();
  if (diff_c.norm() > 1e-10 * std::max(1.0, fine.terminal().matrix().norm())) {
    fail(Errc::KnotMismatch, "paths have different terminal cumulants");
  }
  const Mat half = pinv_sqrt(fine.terminal()).matrix();
  double sup = 0.0;
  for (std::size_t k = 0; k < fk.size(); ++k) {
    const Mat gap = fine.gammas()[k].matrix() - coarse.gamma_at(fk[k]).matrix();
    sup = std::max(sup, op_norm(gap * half));
  }
  return sup;
}

}  // namespace trsbts
