#pragma once

// Reductions of the conditioning past (block PCR, reference-aware
// pseudo-distance, past-window WLS drift), kernel logweights and the stable
// softmax that turns them into a terminal surrogate.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trsbts/linalg.hpp"

namespace trsbts {

// ---------------------------------------------------------------------------
// Kernels

enum class KernelVariant { gaussian, quartic_compact, truncated_gaussian };

struct KernelConfig {
  KernelVariant variant = KernelVariant::gaussian;
  double bandwidth = 1.0;
  double truncation_radius = 3.0;  // truncated_gaussian only, in units of bandwidth

  void validate() const {
    require(bandwidth > 0.0, Errc::InvalidArgument, "kernel bandwidth must be positive");
    if (variant == KernelVariant::truncated_gaussian) {
      require(truncation_radius > 0.0, Errc::InvalidArgument, "truncation radius must be positive");
    }
  }
};

/// Log kernel weight of a pseudo-distance; kNegInf outside the support.
inline double kernel_logweight(const KernelConfig& cfg, double dist) {
  const double h = cfg.bandwidth;
  const double u2 = (dist * dist) / (h * h);
  switch (cfg.variant) {
    case KernelVariant::gaussian:
      return -0.5 * u2;
    case KernelVariant::quartic_compact:
      return dist < h ? std::log1p(-u2) : kNegInf;
    case KernelVariant::truncated_gaussian:
      return dist <= h * cfg.truncation_radius ? -0.5 * u2 : kNegInf;
  }
  return kNegInf;
}

/// w_j = exp(l_j - max l) / sum. Entries equal to -inf receive exactly 0.
inline Vec stable_softmax(const Vec& logw) {
  double top = kNegInf;
  for (Eigen::Index j = 0; j < logw.size(); ++j) {
    if (logw(j) > top) top = logw(j);
  }
  if (!std::isfinite(top)) fail(Errc::AllExcluded, "every logweight is -inf");
  Vec w(logw.size());
  for (Eigen::Index j = 0; j < logw.size(); ++j) {
    w(j) = std::isfinite(logw(j)) ? std::exp(logw(j) - top) : 0.0;
  }
  return w / w.sum();
}

// ---------------------------------------------------------------------------
// Block PCR

enum class PcrNormalization { joint, blockwise, componentwise };

struct PcrReducer {
  Vec mean;
  Mat components;  // k x d, orthonormal rows
  Vec scales;      // per-component standard deviation
  double explained_threshold = 1.0;
  PcrNormalization normalization = PcrNormalization::blockwise;

  Eigen::Index rank() const { return components.rows(); }
  Eigen::Index input_dim() const { return components.cols(); }

  /// Orthogonal projector onto the retained span.
  Mat projector() const { return components.transpose() * components; }

  /// Divisor applied to each PCR coordinate.
  Vec divisors() const {
    switch (normalization) {
      case PcrNormalization::joint:
        return Vec::Ones(rank());
      case PcrNormalization::blockwise:
        return Vec::Constant(rank(), std::sqrt(scales.array().square().mean()));
      case PcrNormalization::componentwise:
        return scales;
    }
    return Vec::Ones(rank());
  }

  /// Normalized coordinates of a (centered) sample.
  Vec project(const Vec& x) const {
    require(x.size() == input_dim(), Errc::DimMismatch, "PcrReducer::project dimension");
    return (components * (x - mean)).cwiseQuotient(divisors());
  }

  /// Normalized coordinates of a difference (no centering).
  Vec project_diff(const Vec& dx) const {
    require(dx.size() == input_dim(), Errc::DimMismatch, "PcrReducer::project_diff dimension");
    return (components * dx).cwiseQuotient(divisors());
  }
};

/// Keeps the leading eigenvectors of the sample covariance whose cumulative
/// variance share reaches `threshold`. Rows of `samples` are observations.
inline PcrReducer pcr_fit(const Mat& samples, double threshold,
                          PcrNormalization normalization = PcrNormalization::blockwise) {
  require(samples.rows() >= 2, Errc::InsufficientData, "pcr_fit needs at least 2 samples");
  require(threshold > 0.0 && threshold <= 1.0, Errc::InvalidArgument, "pcr threshold must be in (0, 1]");
  const Eigen::Index n = samples.rows(), d = samples.cols();
  PcrReducer r;
  r.mean = samples.colwise().mean().transpose();
  const Mat centered = samples.rowwise() - r.mean.transpose();
  const SymMatrix cov(centered.transpose() * centered / static_cast<double>(n - 1));
  const Vec& lam_asc = cov.eigenvalues();
  const Mat& q_asc = cov.eigenvectors();
  const double total = lam_asc.cwiseMax(0.0).sum();
  if (total < 1e-14) fail(Errc::DegenerateData, "pcr_fit: total variance below 1e-14");

  Eigen::Index k = 0;
  double acc = 0.0;
  while (k < d) {
    acc += std::max(lam_asc(d - 1 - k), 0.0);
    ++k;
    if (acc >= threshold * total * (1.0 - 1e-12)) break;
  }
  const double top = std::max(lam_asc(d - 1), 0.0);
  r.components.resize(k, d);
  r.scales.resize(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    Vec v = q_asc.col(d - 1 - c);
    // sign convention: largest-magnitude coordinate positive
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    r.components.row(c) = v.transpose();
    r.scales(c) = std::sqrt(std::max(std::max(lam_asc(d - 1 - c), 0.0), 1e-12 * top));
  }
  r.explained_threshold = threshold;
  r.normalization = normalization;
  return r;
}

// ---------------------------------------------------------------------------
// Past-window WLS drift regressor

enum class WlsModel { none, locally_constant, linear_in_time };

inline Eigen::Index wls_feature_dim(WlsModel model, Eigen::Index d) {
  switch (model) {
    case WlsModel::none: return 0;
    case WlsModel::locally_constant: return d;
    case WlsModel::linear_in_time: return 2 * d;
  }
  return 0;
}

/// argmin_theta sum_k ||dx_k - mu_k(theta)||^2 in the C_k^{-1} metric.
/// Locally constant: mu_k = theta. Linear in time: mu_k = theta_0 + theta_1 k
/// with k = 0..L-1 across the window.
inline Vec wls_drift(std::span<const Vec> increments, std::span<const FlooredPsd> cumulants, WlsModel model) {
  require(!increments.empty(), Errc::InsufficientData, "wls_drift needs L >= 1");
  require(increments.size() == cumulants.size(), Errc::ShapeMismatch, "wls_drift: one cumulant per increment");
  if (model == WlsModel::none) return Vec();
  const Eigen::Index d = increments.front().size();
  const Eigen::Index q = wls_feature_dim(model, d);
  const Eigen::Index L = static_cast<Eigen::Index>(increments.size());
  if (q > L * d) fail(Errc::SingularDesign, "wls_drift: more parameters than observations");

  Mat normal = Mat::Zero(q, q);
  Vec rhs = Vec::Zero(q);
  for (Eigen::Index k = 0; k < L; ++k) {
    const Mat& w = cumulants[k].inv();
    require(w.rows() == d && increments[k].size() == d, Errc::DimMismatch, "wls_drift dims");
    Mat x(d, q);
    if (model == WlsModel::locally_constant) {
      x = Mat::Identity(d, d);
    } else {
      x.leftCols(d) = Mat::Identity(d, d);
      x.rightCols(d) = Mat::Identity(d, d) * static_cast<double>(k);
    }
    normal += x.transpose() * w * x;
    rhs += x.transpose() * (w * increments[k]);
  }
  const double tr = normal.trace();
  if (!(tr > 0.0) || !std::isfinite(tr)) fail(Errc::SingularDesign, "wls_drift: zero normal matrix");
  normal += Mat::Identity(q, q) * (1e-10 * tr);
  Eigen::LDLT<Mat> ldlt(normal);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    fail(Errc::SingularDesign, "wls_drift: regularized normal matrix is singular");
  }
  Vec theta = ldlt.solve(rhs);
  if (!theta.allFinite()) fail(Errc::SingularDesign, "wls_drift: non-finite solution");
  return theta;
}

// ---------------------------------------------------------------------------
// Macro-conditioning summaries and the reference-aware pseudo-distance

struct ConditioningSummary {
  Vec anchor;
  std::vector<Vec> past_increments;          // newest last
  Vec latent;                                // may be empty
  std::vector<FlooredPsd> frozen_cumulants;  // aligned with past_increments
  Vec wls_theta;                             // may be empty
  std::optional<FlooredPsd> current_reference;
};

enum class AnchorMetric { isotropic, reference };

struct DistanceConfig {
  AnchorMetric anchor_metric = AnchorMetric::isotropic;
  double anchor_scale = 1.0;
  bool use_increments = true;
  double latent_scale = 1.0;
  double theta_scale = 1.0;
  double ref_weight = 1.0;  // multiplies each log-spectral term; 0 disables them
};

/// Squared components of the pseudo-distance, in the query's geometry.
struct DistanceTerms {
  double anchor = 0.0;
  double increments = 0.0;
  double latent = 0.0;
  double theta = 0.0;
  double reference = 0.0;

  double total() const { return anchor + increments + latent + theta + reference; }
};

inline DistanceTerms pseudo_distance_terms(const ConditioningSummary& q, const ConditioningSummary& s,
                                           const DistanceConfig& cfg) {
  DistanceTerms out;
  require(q.anchor.size() == s.anchor.size(), Errc::ShapeMismatch, "pseudo_distance: anchor dims");
  const Vec da = q.anchor - s.anchor;
  if (cfg.anchor_metric == AnchorMetric::reference && q.current_reference) {
    const double m = mahalanobis(da, *q.current_reference);
    out.anchor = m * m;
  } else {
    out.anchor = da.squaredNorm() / (cfg.anchor_scale * cfg.anchor_scale);
  }

  if (cfg.use_increments && !q.past_increments.empty()) {
    require(q.frozen_cumulants.size() == q.past_increments.size(), Errc::ShapeMismatch,
            "pseudo_distance: query cumulants must align with increments");
    const std::size_t n = std::min(q.past_increments.size(), s.past_increments.size());
    const std::size_t oq = q.past_increments.size() - n, os = s.past_increments.size() - n;
    for (std::size_t k = 0; k < n; ++k) {
      const Vec& a = q.past_increments[oq + k];
      const Vec& b = s.past_increments[os + k];
      require(a.size() == b.size(), Errc::ShapeMismatch, "pseudo_distance: increment dims");
      const double m = mahalanobis(a - b, q.frozen_cumulants[oq + k]);
      out.increments += m * m;
      if (cfg.ref_weight > 0.0) {
        require(s.frozen_cumulants.size() == s.past_increments.size(), Errc::ShapeMismatch,
                "pseudo_distance: sample cumulants must align with increments");
        const double r = cfg.ref_weight * log_spectral_dist(q.frozen_cumulants[oq + k], s.frozen_cumulants[os + k]);
        out.reference += r * r;
      }
    }
  }

  require(q.latent.size() == s.latent.size(), Errc::ShapeMismatch, "pseudo_distance: latent dims");
  if (q.latent.size() > 0) out.latent = (q.latent - s.latent).squaredNorm() / (cfg.latent_scale * cfg.latent_scale);

  if (q.wls_theta.size() > 0 && s.wls_theta.size() > 0) {
    require(q.wls_theta.size() == s.wls_theta.size(), Errc::ShapeMismatch, "pseudo_distance: theta dims");
    out.theta = (q.wls_theta - s.wls_theta).squaredNorm() / (cfg.theta_scale * cfg.theta_scale);
  }
  return out;
}

inline double pseudo_distance(const ConditioningSummary& q, const ConditioningSummary& s,
                              const DistanceConfig& cfg = {}) {
  return std::sqrt(pseudo_distance_terms(q, s, cfg).total());
}

// ---------------------------------------------------------------------------
// PCR-variant Gaussian logweights

/// Bandwidth (precision) matrix Lambda: ||v||^2_Lambda = v^T Lambda v.
struct Bandwidth {
  double precision = 1.0;
  std::optional<Mat> matrix;

  static Bandwidth isotropic(double h) { return Bandwidth{1.0 / (h * h), std::nullopt}; }

  double quad(const Vec& v) const {
    if (matrix) {
      require(matrix->rows() == v.size(), Errc::ShapeMismatch, "bandwidth matrix dims");
      return v.dot(*matrix * v);
    }
    return precision * v.squaredNorm();
  }
};

/// State and newest-last increment blocks in raw coordinates.
struct StateBlocks {
  Vec anchor;
  std::vector<Vec> increments;
};

/// l_j = -1/2 ||Pi_X (x - x_j)||^2_{Lambda_X} - 1/2 sum_q ||Pi_D (dx_q - dx_{j,q})||^2_{Lambda_{D,q}}.
/// A null reducer means the identity map.
inline Vec pcr_logweights(const StateBlocks& query, std::span<const StateBlocks> candidates,
                          const PcrReducer* reduce_x, const PcrReducer* reduce_delta, const Bandwidth& lambda_x,
                          std::span<const Bandwidth> lambda_delta) {
  const std::size_t p = query.increments.size();
  require(lambda_delta.size() >= p, Errc::ShapeMismatch, "pcr_logweights: one bandwidth per increment block");
  auto px = [&](const Vec& v) { return reduce_x ? reduce_x->project_diff(v) : v; };
  auto pd = [&](const Vec& v) { return reduce_delta ? reduce_delta->project_diff(v) : v; };
  Vec out(static_cast<Eigen::Index>(candidates.size()));
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    const StateBlocks& c = candidates[j];
    require(c.anchor.size() == query.anchor.size() && c.increments.size() == p, Errc::ShapeMismatch,
            "pcr_logweights: candidate block structure");
    double l = -0.5 * lambda_x.quad(px(query.anchor - c.anchor));
    for (std::size_t k = 0; k < p; ++k) {
      require(c.increments[k].size() == query.increments[k].size(), Errc::ShapeMismatch,
              "pcr_logweights: increment dims");
      l -= 0.5 * lambda_delta[k].quad(pd(query.increments[k] - c.increments[k]));
    }
    out(static_cast<Eigen::Index>(j)) = l;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Terminal surrogate

/// Weighted cloud of increment atoms. Only atoms with positive weight are kept.
struct TerminalSurrogate {
  Vec weights;
  Mat atoms;  // d x M', one atom per column
  std::vector<int> source_indices;

  Eigen::Index size() const { return weights.size(); }
  Eigen::Index dim() const { return atoms.rows(); }

  Vec mean() const { return atoms * weights; }

  static TerminalSurrogate from_weights(const Vec& weights, const Mat& all_atoms) {
    require(weights.size() == all_atoms.cols(), Errc::ShapeMismatch, "surrogate weights/atoms");
    TerminalSurrogate s;
    std::vector<int> keep;
    for (Eigen::Index j = 0; j < weights.size(); ++j)
      if (weights(j) > 0.0) keep.push_back(static_cast<int>(j));
    s.weights.resize(static_cast<Eigen::Index>(keep.size()));
    s.atoms.resize(all_atoms.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
      s.weights(static_cast<Eigen::Index>(k)) = weights(keep[k]);
      s.atoms.col(static_cast<Eigen::Index>(k)) = all_atoms.col(keep[k]);
    }
    const double tot = s.weights.sum();
    if (tot > 0.0) s.weights /= tot;
    s.source_indices = std::move(keep);
    return s;
  }
};

}  // namespace trsbts
