#pragma once

// Degenerate-PSD linear algebra: spectral decompositions, PSD projection,
// spectral floor, symmetric square root, Mahalanobis geometry, log-spectral
// distance and vech packing.

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <string>

#include "trsbts/types.hpp"

namespace trsbts {

/// Dense symmetric matrix with a lazily computed, cached eigendecomposition.
///
/// The input is symmetrized on construction so that entries(i, j) and
/// entries(j, i) are bitwise equal. Copies share the eigen cache; the cache is
/// filled at most once under a std::once_flag and is safe to read from many
/// threads.
class SymMatrix {
 public:
  SymMatrix() : SymMatrix(Mat::Zero(1, 1)) {}

  explicit SymMatrix(const Mat& m) : cache_(std::make_shared<EigCache>()) {
    require(m.rows() == m.cols() && m.rows() > 0, Errc::DimMismatch, "SymMatrix needs a square matrix");
    m_ = (m + m.transpose()) * 0.5;
  }

  static SymMatrix identity(Eigen::Index d) { return SymMatrix(Mat::Identity(d, d)); }
  static SymMatrix diagonal(const Vec& diag) { return SymMatrix(Mat(diag.asDiagonal())); }
  static SymMatrix zero(Eigen::Index d) { return SymMatrix(Mat::Zero(d, d)); }

  Eigen::Index dim() const { return m_.rows(); }
  const Mat& matrix() const { return m_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

  /// Eigenvalues in ascending order.
  const Vec& eigenvalues() const {
    ensure_eig();
    return cache_->values;
  }
  /// Orthonormal eigenvectors as columns, aligned with eigenvalues().
  const Mat& eigenvectors() const {
    ensure_eig();
    return cache_->vectors;
  }

  double min_eigenvalue() const { return eigenvalues()(0); }
  double max_eigenvalue() const { return eigenvalues()(dim() - 1); }
  double spectral_norm() const {
    return std::max(std::abs(min_eigenvalue()), std::abs(max_eigenvalue()));
  }

  SymMatrix operator+(const SymMatrix& o) const { return SymMatrix(m_ + o.m_); }
  SymMatrix operator-(const SymMatrix& o) const { return SymMatrix(m_ - o.m_); }
  SymMatrix operator*(double s) const { return SymMatrix(m_ * s); }

 private:
  struct EigCache {
    std::once_flag once;
    Vec values;
    Mat vectors;
  };

  void ensure_eig() const {
    std::call_once(cache_->once, [this] {
      Eigen::SelfAdjointEigenSolver<Mat> es(m_);
      cache_->values = es.eigenvalues();
      cache_->vectors = es.eigenvectors();
    });
  }

  Mat m_;
  std::shared_ptr<EigCache> cache_;
};

/// Rebuilds Q diag(values) Q^T from an orthonormal basis.
inline Mat spectral_compose(const Mat& q, const Vec& values) {
  return q * values.asDiagonal() * q.transpose();
}

/// Spectrally floored PSD matrix: eigenvalues lambda -> max(lambda^+, eps).
///
/// Stores the floored spectrum along with the inverse, square root, inverse
/// square root and log-determinant, all of which are used in the hot paths of
/// the bridge and the kernel weights.
class FlooredPsd {
 public:
  FlooredPsd() : FlooredPsd(SymMatrix::identity(1), 1.0) {}

  FlooredPsd(const SymMatrix& base, double eps) : base_(base), eps_(eps) {
    require(eps > 0.0 && std::isfinite(eps), Errc::InvalidArgument, "spectral floor needs eps > 0");
    const Vec& lam = base.eigenvalues();
    const Mat& q = base.eigenvectors();
    floored_ = lam.unaryExpr([eps](double l) { return std::max(std::max(l, 0.0), eps); });
    logdet_ = floored_.array().log().sum();
    q_ = q;
    matrix_ = spectral_compose(q, floored_);
    inv_ = spectral_compose(q, floored_.cwiseInverse());
    sqrt_ = spectral_compose(q, floored_.cwiseSqrt());
    inv_sqrt_ = spectral_compose(q, floored_.cwiseSqrt().cwiseInverse());
  }

  Eigen::Index dim() const { return base_.dim(); }
  const SymMatrix& base() const { return base_; }
  double epsilon() const { return eps_; }
  /// Floored eigenvalues, ascending, aligned with eigenvectors().
  const Vec& floored_eigs() const { return floored_; }
  const Mat& eigenvectors() const { return q_; }
  double logdet() const { return logdet_; }
  const Mat& matrix() const { return matrix_; }
  const Mat& inv() const { return inv_; }
  const Mat& sqrt() const { return sqrt_; }
  const Mat& inv_sqrt() const { return inv_sqrt_; }

  /// floor(c * base, c * eps); used to turn a rate into an interval cumulant.
  FlooredPsd scaled(double c) const {
    require(c > 0.0, Errc::InvalidArgument, "scale must be positive");
    return FlooredPsd(base_ * c, eps_ * c);
  }

 private:
  SymMatrix base_;
  double eps_;
  Vec floored_;
  Mat q_;
  double logdet_ = 0.0;
  Mat matrix_, inv_, sqrt_, inv_sqrt_;
};

/// Frobenius-nearest PSD matrix: negative eigenvalues clamped to zero.
inline SymMatrix psd_project(const SymMatrix& m) {
  const Vec lam = m.eigenvalues().cwiseMax(0.0);
  return SymMatrix(spectral_compose(m.eigenvectors(), lam));
}

inline FlooredPsd spectral_floor(const SymMatrix& m, double eps) { return FlooredPsd(m, eps); }

/// Canonical symmetric square root of a PSD matrix.
inline SymMatrix sym_sqrt(const SymMatrix& m) {
  const Vec& lam = m.eigenvalues();
  const double tol = 1e-6 * std::max(1.0, m.spectral_norm());
  if (lam(0) < -tol) {
    fail(Errc::NotPsd, "sym_sqrt: min eigenvalue " + std::to_string(lam(0)));
  }
  return SymMatrix(spectral_compose(m.eigenvectors(), lam.cwiseMax(0.0).cwiseSqrt()));
}

/// Moore-Penrose pseudo-inverse; eigenvalues below rel_cutoff * lambda_max are treated as zero.
inline SymMatrix pinv(const SymMatrix& m, double rel_cutoff = 1e-12) {
  const Vec& lam = m.eigenvalues();
  const double cut = rel_cutoff * std::max(m.max_eigenvalue(), 0.0);
  Vec inv = lam.unaryExpr([cut](double l) { return (l > cut && l > 0.0) ? 1.0 / l : 0.0; });
  return SymMatrix(spectral_compose(m.eigenvectors(), inv));
}

/// Square root of the pseudo-inverse, C^{+1/2}.
inline SymMatrix pinv_sqrt(const SymMatrix& m, double rel_cutoff = 1e-12) {
  const Vec& lam = m.eigenvalues();
  const double cut = rel_cutoff * std::max(m.max_eigenvalue(), 0.0);
  Vec inv = lam.unaryExpr([cut](double l) { return (l > cut && l > 0.0) ? 1.0 / std::sqrt(l) : 0.0; });
  return SymMatrix(spectral_compose(m.eigenvectors(), inv));
}

/// Operator (spectral) norm of a general matrix.
inline double op_norm(const Mat& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues()(0);
}

/// sqrt(v^T g^{-1} v) in the floored geometry.
inline double mahalanobis(const Vec& v, const FlooredPsd& g) {
  require(v.size() == g.dim(), Errc::DimMismatch, "mahalanobis: vector/metric dimension");
  return (g.inv_sqrt() * v).norm();
}

/// sqrt(v^T m^+ v) with the Moore-Penrose inverse of an unfloored PSD matrix.
inline double mahalanobis_pinv(const Vec& v, const SymMatrix& m) {
  require(v.size() == m.dim(), Errc::DimMismatch, "mahalanobis_pinv: dimension");
  return (pinv_sqrt(m).matrix() * v).norm();
}

namespace detail {
inline double log_spectral_one_sided(const FlooredPsd& a, const FlooredPsd& b) {
  const SymMatrix s(a.inv_sqrt() * b.matrix() * a.inv_sqrt());
  const Vec& lam = s.eigenvalues();
  double out = 0.0;
  for (Eigen::Index i = 0; i < lam.size(); ++i) out = std::max(out, std::abs(std::log(lam(i))));
  return out;
}
}  // namespace detail

/// Operator norm of log(a^{-1/2} b a^{-1/2}). Both orientations are averaged
/// so that the result is exactly symmetric in floating point.
inline double log_spectral_dist(const FlooredPsd& a, const FlooredPsd& b) {
  require(a.dim() == b.dim(), Errc::DimMismatch, "log_spectral_dist: dimension");
  if (a.matrix() == b.matrix()) return 0.0;
  return 0.5 * (detail::log_spectral_one_sided(a, b) + detail::log_spectral_one_sided(b, a));
}

inline Eigen::Index vech_size(Eigen::Index d) { return d * (d + 1) / 2; }

/// Dimension d with d(d+1)/2 == n, or -1 if n is not triangular.
inline Eigen::Index vech_dim(Eigen::Index n) {
  Eigen::Index d = static_cast<Eigen::Index>((std::sqrt(8.0 * static_cast<double>(n) + 1.0) - 1.0) / 2.0 + 0.5);
  return (d >= 1 && vech_size(d) == n) ? d : -1;
}

/// Column-major lower-triangle packing.
inline Vec vech(const SymMatrix& m) {
  const Eigen::Index d = m.dim();
  Vec out(vech_size(d));
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = j; i < d; ++i) out(k++) = m(i, j);
  return out;
}

inline SymMatrix unvech(const Vec& row) {
  const Eigen::Index d = vech_dim(row.size());
  if (d < 0) fail(Errc::BadLength, "unvech: length " + std::to_string(row.size()) + " is not triangular");
  Mat m(d, d);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = j; i < d; ++i) {
      m(i, j) = row(k);
      m(j, i) = row(k);
      ++k;
    }
  return SymMatrix(m);
}

}  // namespace trsbts
