#pragma once

// Covariance-descriptor streams: cumulative-average realized covariance, the
// projection pipeline for generated descriptors and the 2-d hybrid frame.

#include <cmath>
#include <utility>
#include <vector>

#include "trsbts/linalg.hpp"

namespace trsbts {

struct DescriptorPath {
  std::vector<int> indices;  // coarse indices, starting at 1
  std::vector<double> times;
  std::vector<SymMatrix> descriptors;
  std::vector<Vec> packed;  // vech rows
};

/// M_t = (1 / (t dt)) sum_{i <= t} dz_i dz_i^T for t = 1..T-1.
inline DescriptorPath cumulative_avg_cov(const CoarsePath& path, double dt) {
  require(path.size() >= 2, Errc::TooShort, "cumulative_avg_cov needs >= 2 points");
  require(dt > 0.0, Errc::InvalidArgument, "dt must be positive");
  const Eigen::Index d = path.dim();
  DescriptorPath out;
  Mat acc = Mat::Zero(d, d);
  for (std::size_t t = 1; t < path.size(); ++t) {
    const Vec dz = path.states[t] - path.states[t - 1];
    acc += dz * dz.transpose();
    SymMatrix m(acc / (static_cast<double>(t) * dt));
    out.indices.push_back(static_cast<int>(t));
    out.times.push_back(static_cast<double>(t) * dt);
    out.packed.push_back(vech(m));
    out.descriptors.push_back(std::move(m));
  }
  return out;
}

/// (stored PSD descriptor, floored reference-backend descriptor).
inline std::pair<SymMatrix, FlooredPsd> project_descriptor(const SymMatrix& raw, double eps) {
  SymMatrix psd = psd_project(raw);
  FlooredPsd fl = spectral_floor(psd, eps);
  return {std::move(psd), std::move(fl)};
}

/// Direction plus the two leading normalized principal magnitudes.
struct HybridFrame {
  Vec direction;
  double scale_primary = 0.0;
  double scale_secondary = 0.0;

  /// Flat coordinates (direction..., scale_primary, scale_secondary).
  Vec to_vector() const {
    Vec v(direction.size() + 2);
    v.head(direction.size()) = direction;
    v(direction.size()) = scale_primary;
    v(direction.size() + 1) = scale_secondary;
    return v;
  }

  /// Inverse of to_vector; a generated direction is renormalized and scales clamped at 0.
  static HybridFrame from_vector(const Vec& v) {
    require(v.size() >= 3, Errc::BadLength, "hybrid frame vector too short");
    HybridFrame hf;
    const Eigen::Index d = v.size() - 2;
    hf.direction = v.head(d);
    const double n = hf.direction.norm();
    require(n > 0.0, Errc::ZeroVariance, "hybrid frame direction is zero");
    hf.direction /= n;
    hf.scale_primary = std::max(v(d), 0.0);
    hf.scale_secondary = std::max(v(d + 1), 0.0);
    return hf;
  }
};

/// Sign convention for principal directions: first nonzero coordinate positive.
inline Vec canonical_sign(Vec v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v(i) != 0.0) {
      if (v(i) < 0.0) v = -v;
      break;
    }
  }
  return v;
}

inline HybridFrame hybrid_frame_encode(const SymMatrix& cum, double x_variance) {
  if (!(x_variance > 0.0)) fail(Errc::ZeroVariance, "hybrid_frame_encode needs x_variance > 0");
  const SymMatrix normed = cum * (1.0 / x_variance);
  const Eigen::Index d = normed.dim();
  HybridFrame hf;
  hf.direction = canonical_sign(normed.eigenvectors().col(d - 1));
  hf.direction /= hf.direction.norm();
  hf.scale_primary = std::max(normed.eigenvalues()(d - 1), 0.0);
  hf.scale_secondary = d >= 2 ? std::max(normed.eigenvalues()(d - 2), 0.0) : 0.0;
  // numerically rank-one input: drop round-off mass off the main direction
  if (hf.scale_secondary <= 1e-12 * hf.scale_primary) hf.scale_secondary = 0.0;
  return hf;
}

/// s1 u u^T + s2 u_perp u_perp^T. The secondary completion is only defined in
/// two dimensions, where the orthogonal complement of u is a single line.
inline SymMatrix hybrid_frame_decode(const HybridFrame& hf) {
  const Eigen::Index d = hf.direction.size();
  require(d >= 1, Errc::DimMismatch, "hybrid_frame_decode: empty direction");
  const Vec u = hf.direction / hf.direction.norm();
  Mat m = hf.scale_primary * u * u.transpose();
  if (hf.scale_secondary != 0.0) {
    require(d == 2, Errc::DimMismatch, "hybrid_frame_decode: secondary completion needs d == 2");
    Vec perp(2);
    perp << -u(1), u(0);
    m += hf.scale_secondary * perp * perp.transpose();
  }
  return SymMatrix(m);
}

}  // namespace trsbts
