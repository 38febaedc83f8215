#pragma once

// Validation scores: predictive energy score (basic and enriched), the
// conditional Gaussian-kernel transition score and the entropic NLL pair used
// for reference selection and closed-loop validation.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include "trsbts/linalg.hpp"

namespace trsbts {

/// Type-7 quantile (linear interpolation between order statistics).
inline double quantile(std::vector<double> xs, double alpha) {
  require(!xs.empty(), Errc::EmptyInput, "quantile of an empty sample");
  require(alpha >= 0.0 && alpha <= 1.0, Errc::InvalidArgument, "quantile level must be in [0, 1]");
  std::sort(xs.begin(), xs.end());
  const double h = alpha * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

// ---------------------------------------------------------------------------
// Energy score

/// (1/L) sum ||z_l - z|| - (1/(2 L^2)) sum sum ||z_l - z_l'||.
inline double energy_score_window(std::span<const Vec> ensemble, const Vec& observed) {
  require(!ensemble.empty(), Errc::ShapeMismatch, "energy score needs L >= 1");
  const auto L = static_cast<double>(ensemble.size());
  double fit = 0.0, spread = 0.0;
  for (std::size_t a = 0; a < ensemble.size(); ++a) {
    require(ensemble[a].size() == observed.size(), Errc::ShapeMismatch, "energy score vector length");
    fit += (ensemble[a] - observed).norm();
    for (std::size_t b = a + 1; b < ensemble.size(); ++b) spread += 2.0 * (ensemble[a] - ensemble[b]).norm();
  }
  return fit / L - spread / (2.0 * L * L);
}

struct EnergyScoreConfig {
  int p_mem = 1;
  int K = 1;
  int L = 32;
  int stride = 1;
  bool normalize_by_sqrt_q = false;

  void validate() const {
    require(p_mem >= 1 && K >= 1 && L >= 1 && stride >= 1, Errc::InvalidArgument,
            "energy score config entries must be positive");
  }
};

/// Maps (state preceding the window, window states) to the compared vector.
using WindowFeature = std::function<Vec(const Vec& prev, std::span<const Vec> window)>;

/// Time-major vectorisation, optionally restricted to the first `slice` coordinates.
inline WindowFeature time_major_feature(Eigen::Index slice = -1) {
  return [slice](const Vec&, std::span<const Vec> window) {
    const Eigen::Index q = slice > 0 ? slice : window.front().size();
    Vec out(q * static_cast<Eigen::Index>(window.size()));
    for (std::size_t r = 0; r < window.size(); ++r) out.segment(static_cast<Eigen::Index>(r) * q, q) = window[r].head(q);
    return out;
  };
}

/// Per-step (X_r / (sigma_pos sqrt d), vec(dX_r dX_r^T) / (sigma_inc sqrt(d^2))).
/// The first increment uses the state preceding the window.
inline Vec enriched_features(const Vec& prev, std::span<const Vec> window, double sigma_pos, double sigma_inc) {
  if (!(sigma_pos > 0.0) || !(sigma_inc > 0.0)) fail(Errc::MissingStats, "enriched features need fitted sigmas");
  require(!window.empty(), Errc::ShapeMismatch, "empty window");
  const Eigen::Index d = prev.size();
  const Eigen::Index per = d + d * d;
  const double sd = static_cast<double>(d);
  Vec out(per * static_cast<Eigen::Index>(window.size()));
  Vec last = prev;
  for (std::size_t r = 0; r < window.size(); ++r) {
    const Vec dx = window[r] - last;
    const Mat outer = dx * dx.transpose();
    auto seg = out.segment(static_cast<Eigen::Index>(r) * per, per);
    seg.head(d) = window[r] / (sigma_pos * std::sqrt(sd));
    seg.tail(d * d) = Eigen::Map<const Vec>(outer.data(), d * d) / (sigma_inc * sd);
    last = window[r];
  }
  return out;
}

/// RMS standard deviations of positions and packed squared increments, for enriched_features.
inline std::pair<double, double> enriched_sigmas(std::span<const CoarsePath> paths) {
  std::vector<Vec> pos, inc;
  for (const auto& p : paths) {
    for (std::size_t t = 0; t < p.size(); ++t) {
      pos.push_back(p.states[t]);
      if (t > 0) {
        const Vec dx = p.states[t] - p.states[t - 1];
        const Mat o = dx * dx.transpose();
        inc.push_back(Eigen::Map<const Vec>(o.data(), o.size()));
      }
    }
  }
  auto rms_std = [](const std::vector<Vec>& xs) {
    if (xs.size() < 2) return 0.0;
    Vec mean = Vec::Zero(xs.front().size());
    for (const auto& x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    Vec var = Vec::Zero(mean.size());
    for (const auto& x : xs) var += (x - mean).cwiseAbs2();
    var /= static_cast<double>(xs.size() - 1);
    return std::sqrt(var.mean());
  };
  return {rms_std(pos), rms_std(inc)};
}

struct PathScore {
  double score = 0.0;
  int n_windows = 0;
  std::vector<double> per_window;
};

/// Admissible window ends i (0-based): p_mem-1, p_mem-1+s, ..., n-1-K.
inline std::vector<int> admissible_windows(int n, const EnergyScoreConfig& cfg) {
  std::vector<int> out;
  for (int i = cfg.p_mem - 1; i + cfg.K <= n - 1; i += cfg.stride) out.push_back(i);
  return out;
}

/// Mean energy score over admissible windows of a validation path.
///
/// `model.continue_path(memory, K, rng)` must return K autoregressive states
/// following the memory block. Window i draws from the stream (seed, i), so
/// results do not depend on evaluation order.
template <class Model>
PathScore energy_score_path(const Model& model, const CoarsePath& path, const EnergyScoreConfig& cfg,
                            std::uint64_t seed, const WindowFeature& feature = time_major_feature()) {
  cfg.validate();
  const auto windows = admissible_windows(static_cast<int>(path.size()), cfg);
  if (windows.empty()) fail(Errc::TooShort, "validation path too short for one window");
  PathScore out;
  for (int i : windows) {
    const std::span<const Vec> memory(path.states.data() + (i - cfg.p_mem + 1), static_cast<std::size_t>(cfg.p_mem));
    const std::span<const Vec> future(path.states.data() + i + 1, static_cast<std::size_t>(cfg.K));
    const Vec& prev = path.states[static_cast<std::size_t>(i)];
    Vec obs = feature(prev, future);
    Rng rng = make_stream(seed, static_cast<std::uint64_t>(i));
    std::vector<Vec> ens;
    ens.reserve(static_cast<std::size_t>(cfg.L));
    for (int l = 0; l < cfg.L; ++l) {
      const std::vector<Vec> cont = model.continue_path(memory, cfg.K, rng);
      require(static_cast<int>(cont.size()) == cfg.K, Errc::ShapeMismatch, "model returned wrong horizon");
      ens.push_back(feature(prev, cont));
    }
    if (cfg.normalize_by_sqrt_q) {
      const double q = static_cast<double>(obs.size()) / cfg.K;
      const double s = 1.0 / std::sqrt(q);
      obs *= s;
      for (auto& e : ens) e *= s;
    }
    out.per_window.push_back(energy_score_window(ens, obs));
  }
  double sum = 0.0;
  for (double v : out.per_window) sum += v;
  out.n_windows = static_cast<int>(out.per_window.size());
  out.score = sum / out.n_windows;
  return out;
}

/// Energy distance between two scalar samples: 2E|a-b| - E|a-a'| - E|b-b'|.
inline double energy_distance(std::span<const double> a, std::span<const double> b) {
  require(!a.empty() && !b.empty(), Errc::EmptyInput, "energy distance of an empty sample");
  auto mean_abs = [](std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (double u : x)
      for (double v : y) s += std::abs(u - v);
    return s / (static_cast<double>(x.size()) * static_cast<double>(y.size()));
  };
  return 2.0 * mean_abs(a, b) - mean_abs(a, a) - mean_abs(b, b);
}

// ---------------------------------------------------------------------------
// Conditional kernel score

/// sum w_m w_l k(Z_m, Z_l) - 2 sum w_m k(Z_m, z), k(a,b) = exp(-|S^{-1}(a-b)|^2 / (2 sigma^2)).
/// `scale` holds the diagonal of S.
inline double conditional_kernel_score(const Vec& weights, const Mat& atoms, const Vec& observed, double sigma_k,
                                       const Vec& scale) {
  require(weights.size() == atoms.cols(), Errc::ShapeMismatch, "kernel score weights/atoms");
  require(observed.size() == atoms.rows() && scale.size() == atoms.rows(), Errc::ShapeMismatch,
          "kernel score dims");
  require(sigma_k > 0.0, Errc::InvalidArgument, "kernel score bandwidth must be positive");
  const Mat z = atoms.array().colwise() / scale.array();
  const Vec o = observed.cwiseQuotient(scale);
  const double inv2s = 1.0 / (2.0 * sigma_k * sigma_k);
  double self = 0.0, cross = 0.0;
  for (Eigen::Index m = 0; m < z.cols(); ++m) {
    if (weights(m) == 0.0) continue;
    cross += weights(m) * std::exp(-(z.col(m) - o).squaredNorm() * inv2s);
    for (Eigen::Index l = 0; l < z.cols(); ++l) {
      if (weights(l) == 0.0) continue;
      self += weights(m) * weights(l) * std::exp(-(z.col(m) - z.col(l)).squaredNorm() * inv2s);
    }
  }
  return self - 2.0 * cross;
}

/// Median pairwise distance of normalized atoms (median heuristic for sigma_k).
inline double median_heuristic(const Mat& atoms, const Vec& scale) {
  const Mat z = atoms.array().colwise() / scale.array();
  std::vector<double> ds;
  for (Eigen::Index a = 0; a < z.cols(); ++a)
    for (Eigen::Index b = a + 1; b < z.cols(); ++b) ds.push_back((z.col(a) - z.col(b)).norm());
  if (ds.empty()) return 1.0;
  const double med = quantile(ds, 0.5);
  return med > 0.0 ? med : 1.0;
}

// ---------------------------------------------------------------------------
// Entropic NLL

struct EntropicConfig {
  double eps = 1e-6;
  double alpha = 0.9;

  void validate() const {
    require(eps > 0.0, Errc::InvalidArgument, "entropic eps must be positive");
    require(alpha > 0.0 && alpha < 1.0, Errc::InvalidArgument, "entropic alpha must be in (0, 1)");
  }
};

/// -log N(delta; 0, Sigma dt) with Sigma already floored.
inline double entropic_nll_step(const FlooredPsd& sigma, double dt, const Vec& delta) {
  require(dt > 0.0, Errc::InvalidArgument, "dt must be positive");
  require(delta.size() == sigma.dim(), Errc::DimMismatch, "entropic_nll_step dims");
  const double d = static_cast<double>(sigma.dim());
  const double quad = (sigma.inv_sqrt() * delta).squaredNorm() / dt;
  return 0.5 * (sigma.logdet() + d * std::log(dt)) + 0.5 * quad + 0.5 * d * std::log(2.0 * std::numbers::pi);
}

/// Per-path covariance trajectories: [path][step] -> Sigma (unfloored).
using ReferenceFamily = std::vector<std::vector<SymMatrix>>;
/// Observed increments: [path][step].
using IncrementSet = std::vector<std::vector<Vec>>;

/// Mean per-step NLL of each path under a family, PSD-projected and floored at cfg.eps.
inline std::vector<double> entropic_path_scores(const ReferenceFamily& family, const IncrementSet& obs, double dt,
                                                const EntropicConfig& cfg) {
  require(family.size() == obs.size(), Errc::ShapeMismatch, "entropic scores: one trajectory per path");
  std::vector<double> out;
  out.reserve(obs.size());
  for (std::size_t p = 0; p < obs.size(); ++p) {
    require(!obs[p].empty(), Errc::EmptyInput, "entropic scores: path without steps");
    require(family[p].size() == obs[p].size(), Errc::ShapeMismatch, "entropic scores: one covariance per step");
    double s = 0.0;
    for (std::size_t t = 0; t < obs[p].size(); ++t) {
      s += entropic_nll_step(spectral_floor(psd_project(family[p][t]), cfg.eps), dt, obs[p][t]);
    }
    out.push_back(s / static_cast<double>(obs[p].size()));
  }
  return out;
}

/// Index of the family minimizing the alpha-quantile of path-wise mean NLL; ties go to the lowest index.
inline std::size_t entropic_select(std::span<const ReferenceFamily> candidates, const IncrementSet& obs, double dt,
                                   const EntropicConfig& cfg) {
  cfg.validate();
  require(!candidates.empty() && !obs.empty(), Errc::EmptyInput, "entropic_select needs candidates and paths");
  std::size_t best = 0;
  double best_score = 0.0;
  for (std::size_t f = 0; f < candidates.size(); ++f) {
    const double s = quantile(entropic_path_scores(candidates[f], obs, dt, cfg), cfg.alpha);
    if (f == 0 || s < best_score) {
      best = f;
      best_score = s;
    }
  }
  return best;
}

/// alpha-quantile of path-wise mean NLL under closed-loop generated descriptors.
inline double entropic_validate(const ReferenceFamily& generated, const IncrementSet& obs, double dt,
                                const EntropicConfig& cfg) {
  cfg.validate();
  return quantile(entropic_path_scores(generated, obs, dt, cfg), cfg.alpha);
}

}  // namespace trsbts
