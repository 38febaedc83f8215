#pragma once

// End-to-end generation: per-level fitted components, terminal surrogates,
// logweight coupling between adjacent levels, the single-component loop and
// the joint closed loop in which each level supplies the reference of the
// level above.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "trsbts/bridge.hpp"
#include "trsbts/conditioning.hpp"
#include "trsbts/descriptor.hpp"
#include "trsbts/scoring.hpp"

namespace trsbts {

enum class ConditioningMode { projected, reference_aware };
enum class ReferenceKind { identity, isotropic, empirical };

struct ComponentConfig {
  int p_max = 1;
  double dt = 1.0;
  ConditioningMode mode = ConditioningMode::reference_aware;
  KernelConfig kernel;
  DistanceConfig distance;
  double increment_scale = 1.0;  // projected mode: raw increment units
  bool use_pcr = false;          // projected mode
  double pcr_threshold = 0.99;
  PcrNormalization pcr_normalization = PcrNormalization::blockwise;
  WlsModel wls_model = WlsModel::none;
  int wls_window = 0;  // 0: every available past increment (<= p_max)
  bool use_latent = false;
  BridgeStepConfig bridge;
  ReferenceKind reference = ReferenceKind::isotropic;  // used when no dynamic reference is supplied
  double reference_scale = 1.0;
  int fallback_neighbors = 16;

  void validate() const {
    require(p_max >= 0, Errc::InvalidArgument, "p_max must be >= 0");
    require(dt > 0.0, Errc::InvalidArgument, "dt must be positive");
    require(reference_scale > 0.0, Errc::InvalidArgument, "reference_scale must be positive");
    require(fallback_neighbors >= 1, Errc::InvalidArgument, "fallback_neighbors must be >= 1");
    require(wls_window >= 0, Errc::InvalidArgument, "wls_window must be >= 0");
    kernel.validate();
    bridge.validate();
  }
};

/// One training path of one level.
struct LevelSeries {
  std::vector<Vec> states;
  std::vector<SymMatrix> interval_refs;  // optional: reference rate on [k, k+1], size T-1
  std::vector<Vec> latent;               // optional: size T
};

struct SourceIndex {
  int path = 0;
  int index = 0;
  bool operator==(const SourceIndex&) const = default;
};

/// Builds the conditioning summary at the last state of `states`.
/// `interval_refs[k]` is the floored rate on [k, k+1]; when empty, `frozen` is used.
inline ConditioningSummary build_summary(const ComponentConfig& cfg, std::span<const Vec> states,
                                         std::span<const FlooredPsd> interval_refs, const FlooredPsd& frozen,
                                         const Vec& latent, const std::optional<FlooredPsd>& current_ref,
                                         bool with_cumulants) {
  require(!states.empty(), Errc::InvalidArgument, "build_summary needs at least one state");
  const int i = static_cast<int>(states.size()) - 1;
  const int p = std::min(cfg.p_max, i);
  ConditioningSummary s;
  s.anchor = states.back();
  auto ref = [&](int k) -> const FlooredPsd& {
    return interval_refs.empty() ? frozen : interval_refs[static_cast<std::size_t>(k)];
  };
  for (int k = i - p + 1; k <= i; ++k) {
    s.past_increments.push_back(states[static_cast<std::size_t>(k)] - states[static_cast<std::size_t>(k - 1)]);
    if (with_cumulants) s.frozen_cumulants.push_back(ref(k - 1).scaled(cfg.dt));
  }
  if (cfg.use_latent) s.latent = latent;
  if (cfg.wls_model != WlsModel::none && p >= 1) {
    const int L = cfg.wls_window > 0 ? std::min(cfg.wls_window, p) : p;
    const std::size_t off = static_cast<std::size_t>(p - L);
    std::vector<FlooredPsd> cums;
    for (int k = i - L + 1; k <= i; ++k) cums.push_back(ref(k - 1).scaled(cfg.dt));
    const std::span<const Vec> incs(s.past_increments.data() + off, static_cast<std::size_t>(L));
    if (static_cast<Eigen::Index>(L) * s.anchor.size() >= wls_feature_dim(cfg.wls_model, s.anchor.size())) {
      s.wls_theta = wls_drift(incs, cums, cfg.wls_model);
    }
  }
  s.current_reference = current_ref;
  return s;
}

struct SurrogateResult {
  TerminalSurrogate surrogate;
  Vec logweights;
  Vec distances;
};

/// One level's fitted model.
class FittedComponent {
 public:
  ComponentConfig config;
  Eigen::Index dim = 0;
  std::vector<ConditioningSummary> summaries;
  Mat atoms;  // d x M
  std::vector<SourceIndex> sources;
  std::optional<PcrReducer> reduce_x, reduce_delta;
  FlooredPsd frozen_reference;
  double sigma_pos = 0.0, sigma_inc = 0.0;

  Eigen::Index size() const { return atoms.cols(); }
  bool stores_cumulants() const {
    return config.mode == ConditioningMode::reference_aware || config.wls_model != WlsModel::none;
  }

  /// Recomputes cached candidate coordinates; call after changing summaries or reducers.
  void prepare() {
    const Eigen::Index M = size();
    require(M >= 1 && static_cast<Eigen::Index>(summaries.size()) == M &&
                static_cast<Eigen::Index>(sources.size()) == M,
            Errc::InvalidArgument, "FittedComponent: summaries, atoms and sources must align");
    if (config.mode != ConditioningMode::projected) return;
    const Vec q0 = anchor_coords(summaries.front().anchor);
    cand_anchor_.resize(q0.size(), M);
    const int p = config.p_max;
    cand_inc_.assign(static_cast<std::size_t>(p), Mat());
    for (Eigen::Index j = 0; j < M; ++j) {
      const auto& s = summaries[static_cast<std::size_t>(j)];
      cand_anchor_.col(j) = anchor_coords(s.anchor);
      require(static_cast<int>(s.past_increments.size()) == p, Errc::ShapeMismatch,
              "training summaries must carry p_max increments");
      for (int k = 0; k < p; ++k) {
        const Vec c = increment_coords(s.past_increments[static_cast<std::size_t>(k)]);
        if (j == 0) cand_inc_[static_cast<std::size_t>(k)].resize(c.size(), M);
        cand_inc_[static_cast<std::size_t>(k)].col(j) = c;
      }
    }
  }

  /// Raw kernel logweights and pseudo-distances of every candidate.
  std::pair<Vec, Vec> logweights(const ConditioningSummary& q) const {
    const Eigen::Index M = size();
    Vec dist2(M);
    if (config.mode == ConditioningMode::projected) {
      dist2 = (cand_anchor_.colwise() - anchor_coords(q.anchor)).colwise().squaredNorm().transpose();
      const int n = std::min<int>(static_cast<int>(q.past_increments.size()), config.p_max);
      for (int k = 0; k < n; ++k) {
        const Vec c = increment_coords(q.past_increments[q.past_increments.size() - n + k]);
        const Mat& cand = cand_inc_[static_cast<std::size_t>(config.p_max - n + k)];
        dist2 += (cand.colwise() - c).colwise().squaredNorm().transpose();
      }
      for (Eigen::Index j = 0; j < M; ++j) {
        const auto& s = summaries[static_cast<std::size_t>(j)];
        require(q.latent.size() == s.latent.size(), Errc::ShapeMismatch, "latent dims");
        if (q.latent.size() > 0) dist2(j) += (q.latent - s.latent).squaredNorm() / sq(config.distance.latent_scale);
        if (q.wls_theta.size() > 0 && s.wls_theta.size() == q.wls_theta.size())
          dist2(j) += (q.wls_theta - s.wls_theta).squaredNorm() / sq(config.distance.theta_scale);
      }
    } else {
      for (Eigen::Index j = 0; j < M; ++j)
        dist2(j) = pseudo_distance_terms(q, summaries[static_cast<std::size_t>(j)], config.distance).total();
    }
    Vec dist = dist2.cwiseSqrt();
    Vec logw(M);
    for (Eigen::Index j = 0; j < M; ++j) logw(j) = kernel_logweight(config.kernel, dist(j));
    return {std::move(logw), std::move(dist)};
  }

  /// Softmax of logweights, falling back to uniform weights on the nearest
  /// candidates when the kernel support is empty.
  Vec weights_from(const Vec& logw, const Vec& dist) const {
    bool any = false;
    for (Eigen::Index j = 0; j < logw.size(); ++j) any = any || std::isfinite(logw(j));
    if (any) return stable_softmax(logw);
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(dist.size()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(config.fallback_neighbors), idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](Eigen::Index a, Eigen::Index b) { return dist(a) < dist(b) || (dist(a) == dist(b) && a < b); });
    Vec w = Vec::Zero(dist.size());
    for (std::size_t r = 0; r < k; ++r) w(idx[r]) = 1.0 / static_cast<double>(k);
    return w;
  }

  /// Anchor coordinates used by the projected distance.
  Vec anchor_coords(const Vec& x) const {
    const Vec c = reduce_x ? reduce_x->project(x) : x;
    return c / config.distance.anchor_scale;
  }
  Vec increment_coords(const Vec& dx) const {
    const Vec c = reduce_delta ? reduce_delta->project_diff(dx) : dx;
    return c / config.increment_scale;
  }

 private:
  static double sq(double v) { return v * v; }
  Mat cand_anchor_;
  std::vector<Mat> cand_inc_;
};

/// Reference rate used when no dynamic reference is supplied.
inline SymMatrix frozen_reference_rate(const ComponentConfig& cfg, const std::vector<Vec>& increments, Eigen::Index d) {
  if (cfg.reference == ReferenceKind::identity || increments.size() < 2) {
    return SymMatrix::identity(d) * cfg.reference_scale;
  }
  Vec mean = Vec::Zero(d);
  for (const auto& v : increments) mean += v;
  mean /= static_cast<double>(increments.size());
  Mat cov = Mat::Zero(d, d);
  for (const auto& v : increments) cov += (v - mean) * (v - mean).transpose();
  cov /= static_cast<double>(increments.size() - 1) * cfg.dt;
  if (cfg.reference == ReferenceKind::isotropic) {
    return SymMatrix::identity(d) * (cov.trace() / static_cast<double>(d) * cfg.reference_scale);
  }
  return SymMatrix(cov * cfg.reference_scale);
}

inline std::vector<FlooredPsd> floor_refs(const std::vector<SymMatrix>& refs, double eps) {
  std::vector<FlooredPsd> out;
  out.reserve(refs.size());
  for (const auto& r : refs) out.emplace_back(r, eps);
  return out;
}

/// Fits one level from its training series: every admissible (path, i) with
/// p_max <= i <= T-2 contributes a summary and the atom x_{i+1} - x_i.
inline FittedComponent fit_component(std::span<const LevelSeries> paths, const ComponentConfig& cfg) {
  cfg.validate();
  require(!paths.empty(), Errc::InsufficientData, "fit_component: no training paths");
  FittedComponent fc;
  fc.config = cfg;
  fc.dim = paths.front().states.empty() ? 0 : paths.front().states.front().size();
  require(fc.dim > 0, Errc::InsufficientData, "fit_component: empty path");

  std::vector<Vec> all_inc;
  std::vector<CoarsePath> as_paths;
  for (const auto& p : paths) {
    if (static_cast<int>(p.states.size()) <= cfg.p_max + 1) {
      fail(Errc::InsufficientData, "fit_component: path length " + std::to_string(p.states.size()) +
                                       " must exceed p_max + 1 = " + std::to_string(cfg.p_max + 1));
    }
    require(p.interval_refs.empty() || p.interval_refs.size() + 1 == p.states.size(), Errc::ShapeMismatch,
            "fit_component: one interval reference per step");
    require(!cfg.use_latent || p.latent.size() == p.states.size(), Errc::ShapeMismatch,
            "fit_component: one latent per state");
    for (std::size_t t = 0; t < p.states.size(); ++t) {
      require(p.states[t].size() == fc.dim, Errc::ShapeMismatch, "fit_component: state dims");
      if (t > 0) all_inc.push_back(p.states[t] - p.states[t - 1]);
    }
    as_paths.push_back(CoarsePath{p.states});
  }
  fc.frozen_reference = FlooredPsd(frozen_reference_rate(cfg, all_inc, fc.dim), cfg.bridge.epsilon);

  const bool cums = fc.stores_cumulants();
  std::vector<Vec> atoms;
  for (std::size_t pi = 0; pi < paths.size(); ++pi) {
    const auto& p = paths[pi];
    const std::vector<FlooredPsd> refs = floor_refs(p.interval_refs, cfg.bridge.epsilon);
    const int T = static_cast<int>(p.states.size());
    for (int i = cfg.p_max; i <= T - 2; ++i) {
      const std::span<const Vec> hist(p.states.data(), static_cast<std::size_t>(i + 1));
      std::optional<FlooredPsd> cur;
      if (cfg.distance.anchor_metric == AnchorMetric::reference)
        cur = (refs.empty() ? fc.frozen_reference : refs[static_cast<std::size_t>(i)]).scaled(cfg.dt);
      const Vec lat = cfg.use_latent ? p.latent[static_cast<std::size_t>(i)] : Vec();
      fc.summaries.push_back(build_summary(cfg, hist, refs, fc.frozen_reference, lat, cur, cums));
      atoms.push_back(p.states[static_cast<std::size_t>(i + 1)] - p.states[static_cast<std::size_t>(i)]);
      fc.sources.push_back({static_cast<int>(pi), i});
    }
  }
  fc.atoms.resize(fc.dim, static_cast<Eigen::Index>(atoms.size()));
  for (std::size_t j = 0; j < atoms.size(); ++j) fc.atoms.col(static_cast<Eigen::Index>(j)) = atoms[j];

  if (cfg.mode == ConditioningMode::projected && cfg.use_pcr) {
    Mat xs(static_cast<Eigen::Index>(fc.summaries.size()), fc.dim);
    for (std::size_t j = 0; j < fc.summaries.size(); ++j) xs.row(static_cast<Eigen::Index>(j)) = fc.summaries[j].anchor.transpose();
    fc.reduce_x = pcr_fit(xs, cfg.pcr_threshold, cfg.pcr_normalization);
    if (cfg.p_max > 0) {
      Mat ds(static_cast<Eigen::Index>(all_inc.size()), fc.dim);
      for (std::size_t j = 0; j < all_inc.size(); ++j) ds.row(static_cast<Eigen::Index>(j)) = all_inc[j].transpose();
      fc.reduce_delta = pcr_fit(ds, cfg.pcr_threshold, cfg.pcr_normalization);
    }
  }
  const auto sig = enriched_sigmas(as_paths);
  fc.sigma_pos = sig.first;
  fc.sigma_inc = sig.second;
  fc.prepare();
  return fc;
}

/// Logweights, weights and surrogate for one query.
inline SurrogateResult compute_surrogate(const FittedComponent& fc, const ConditioningSummary& query) {
  auto [logw, dist] = fc.logweights(query);
  const Vec w = fc.weights_from(logw, dist);
  return {TerminalSurrogate::from_weights(w, fc.atoms), std::move(logw), std::move(dist)};
}

// ---------------------------------------------------------------------------
// Coupling

struct CouplingConfig {
  double rho_x = 0.0;
  double rho_y = 0.0;
  double alpha = 0.0;

  void validate() const {
    for (double v : {rho_x, rho_y, alpha})
      require(v >= 0.0 && v <= 1.0, Errc::InvalidArgument, "coupling parameters must lie in [0, 1]");
  }
};

namespace detail {
// c_a a + c_b b where a -inf term with positive coefficient absorbs.
inline double mix(double ca, double a, double cb, double b) {
  double out = 0.0;
  if (ca > 0.0) {
    if (!std::isfinite(a)) return kNegInf;
    out += ca * a;
  }
  if (cb > 0.0) {
    if (!std::isfinite(b)) return kNegInf;
    out += cb * b;
  }
  return out;
}
}  // namespace detail

/// (l_X mixed with l_F, l_F mixed with the state history and present anchor terms).
inline std::pair<Vec, Vec> couple_logweights(const Vec& lx, const Vec& lf, const Vec& lx0, const CouplingConfig& cc) {
  cc.validate();
  require(lx.size() == lf.size() && lx.size() == lx0.size(), Errc::ShapeMismatch,
          "couple_logweights: logweights must share the candidate index set");
  if (cc.rho_x == 0.0 && cc.rho_y == 0.0) return {lx, lf};
  Vec bx(lx.size()), bf(lx.size());
  for (Eigen::Index j = 0; j < lx.size(); ++j) {
    bx(j) = detail::mix(1.0 - cc.rho_x, lx(j), cc.rho_x, lf(j));
    const double ext = detail::mix(1.0 - cc.alpha, lx(j), cc.alpha, lx0(j));
    bf(j) = detail::mix(1.0 - cc.rho_y, lf(j), cc.rho_y, ext);
  }
  return {bx, bf};
}

/// Anchor-only Gaussian logweight of every candidate against the present state.
inline Vec anchor_logweights(const FittedComponent& fc, const Vec& x) {
  const double h = fc.config.kernel.bandwidth * fc.config.distance.anchor_scale;
  Vec out(fc.size());
  for (Eigen::Index j = 0; j < fc.size(); ++j)
    out(j) = -0.5 * (x - fc.summaries[static_cast<std::size_t>(j)].anchor).squaredNorm() / (h * h);
  return out;
}

// ---------------------------------------------------------------------------
// Single-component generation

struct SingleOptions {
  std::optional<FlooredPsd> reference;  // rate; defaults to the component's frozen reference
  Vec latent;                           // constant latent, when the component uses one
};

inline FrozenInterval make_interval(const FittedComponent& fc, int m, const FlooredPsd& ref, const Vec& anchor) {
  return FrozenInterval(m * fc.config.dt, (m + 1) * fc.config.dt, ref, anchor);
}

/// Single-component closed loop: returns `horizon` states starting with `warm`.
inline CoarsePath generate_single(const FittedComponent& fc, std::span<const Vec> warm, int horizon, Rng& rng,
                                  const SingleOptions& opts = {}) {
  require(!warm.empty(), Errc::InvalidArgument, "generate_single needs an initial state");
  require(horizon >= 1, Errc::InvalidArgument, "horizon must be >= 1");
  CoarsePath out;
  out.states.assign(warm.begin(), warm.begin() + std::min<std::ptrdiff_t>(horizon, static_cast<std::ptrdiff_t>(warm.size())));
  const FlooredPsd& ref = opts.reference ? *opts.reference : fc.frozen_reference;
  const bool cums = fc.stores_cumulants();
  std::optional<FlooredPsd> cur;
  if (fc.config.distance.anchor_metric == AnchorMetric::reference) cur = ref.scaled(fc.config.dt);
  for (int m = static_cast<int>(out.states.size()) - 1; m <= horizon - 2; ++m) {
    const ConditioningSummary q = build_summary(fc.config, out.states, {}, ref, opts.latent, cur, cums);
    const SurrogateResult sr = compute_surrogate(fc, q);
    const FrozenInterval fi = make_interval(fc, m, ref, out.states.back());
    out.states.push_back(step_interval(fi, sr.surrogate, fc.config.bridge, fi.anchor, rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Joint generation

enum class BackwardMapKind { unvech, hybrid_ribbon };

/// Closed-form map from a level's state to the reference rate of the level above.
struct BackwardMap {
  BackwardMapKind kind = BackwardMapKind::unvech;
  double scale = 1.0;

  SymMatrix apply(const Vec& state) const {
    switch (kind) {
      case BackwardMapKind::unvech:
        return unvech(state) * scale;
      case BackwardMapKind::hybrid_ribbon: {
        const SymMatrix frame = hybrid_frame_decode(HybridFrame::from_vector(state));
        const Vec g = vech(psd_project(frame));
        const double n = g.norm();
        if (!(n > 0.0)) return SymMatrix::identity(g.size()) * scale;
        const Vec u = g / n;
        return SymMatrix(u * u.transpose() * scale);
      }
    }
    return SymMatrix::identity(state.size());
  }
};

struct JointLevel {
  const FittedComponent* component = nullptr;  // null: fixed externally supplied state
  Vec fixed_state;
  std::optional<BackwardMap> to_upper;
};

/// Observes the floored reference handed to each level at each step.
using ReferenceHook = std::function<void(std::size_t level, int step, const FlooredPsd& ref)>;

namespace detail {

struct LevelRun {
  std::vector<Vec> states;
  std::vector<FlooredPsd> refs;  // floored rate on [k, k+1]
};

}  // namespace detail

/// Joint closed loop over levels ordered deepest first. At every coarse step
/// all levels compute logweights from the common past, adjacent levels mix
/// them, then levels step bottom-up and each new lower state is mapped to the
/// reference of the level above for the same interval.
inline std::vector<CoarsePath> generate_joint(std::span<const JointLevel> levels,
                                              std::span<const CouplingConfig> coupling,
                                              std::span<const std::vector<Vec>> warm, int horizon, Rng& rng,
                                              const ReferenceHook& hook = {}) {
  const std::size_t n = levels.size();
  require(n >= 1 && n <= 3, Errc::InvalidArgument, "generate_joint supports 1 to 3 levels");
  require(coupling.empty() || coupling.size() + 1 == n, Errc::ShapeMismatch, "one coupling per adjacent pair");
  require(warm.size() == n, Errc::ShapeMismatch, "one warm history per level");
  require(horizon >= 1, Errc::InvalidArgument, "horizon must be >= 1");
  for (std::size_t l = 0; l + 1 < n; ++l)
    require(levels[l].to_upper.has_value(), Errc::InvalidArgument, "every non-top level needs a backward map");

  std::size_t W = 0;
  for (std::size_t l = 0; l < n; ++l) {
    if (levels[l].component) {
      require(!warm[l].empty(), Errc::InvalidArgument, "component level needs a warm history");
      W = std::max(W, warm[l].size());
    }
  }
  require(W >= 1, Errc::InvalidArgument, "no component level to generate");
  for (std::size_t l = 0; l < n; ++l)
    if (levels[l].component) require(warm[l].size() == W, Errc::ShapeMismatch, "warm histories must align");

  // Candidate sets must coincide for coupled pairs.
  if (!coupling.empty()) {
    for (std::size_t l = 0; l + 1 < n; ++l) {
      const auto* a = levels[l].component;
      const auto* b = levels[l + 1].component;
      if (a && b) require(a->sources == b->sources, Errc::ShapeMismatch, "coupled levels must share candidates");
    }
  }

  std::vector<detail::LevelRun> run(n);
  for (std::size_t l = 0; l < n; ++l) {
    if (levels[l].component) {
      run[l].states.assign(warm[l].begin(), warm[l].end());
    } else {
      run[l].states.assign(W, levels[l].fixed_state);
    }
  }
  // Reference of level l implied by the lower level's state at index k.
  auto ref_at = [&](std::size_t l, std::size_t k) -> FlooredPsd {
    const FittedComponent* fc = levels[l].component;
    if (l == 0) return fc->frozen_reference;
    const SymMatrix raw = levels[l - 1].to_upper->apply(run[l - 1].states[k]);
    return project_descriptor(raw, fc->config.bridge.epsilon).second;
  };
  // Floored reference of level l on [k, k+1].
  auto ref_for = [&](std::size_t l, std::size_t k) { return ref_at(l, k + 1); };
  for (std::size_t l = 0; l < n; ++l) {
    if (!levels[l].component) continue;
    for (std::size_t k = 0; k + 1 < W; ++k) run[l].refs.push_back(ref_for(l, k));
  }

  const int start = static_cast<int>(W) - 1;
  for (int m = start; m <= horizon - 2; ++m) {
    const auto mm = static_cast<std::size_t>(m);
    std::vector<Vec> logw(n), dist(n);
    for (std::size_t l = 0; l < n; ++l) {
      const FittedComponent* fc = levels[l].component;
      if (!fc) continue;
      const Vec lat = fc->config.use_latent && l > 0 ? run[l - 1].states[mm] : Vec();
      std::optional<FlooredPsd> cur;
      if (fc->config.distance.anchor_metric == AnchorMetric::reference) cur = ref_at(l, mm).scaled(fc->config.dt);
      const ConditioningSummary q = build_summary(fc->config, run[l].states, run[l].refs, fc->frozen_reference, lat,
                                                  cur, fc->stores_cumulants());
      std::tie(logw[l], dist[l]) = fc->logweights(q);
    }
    // Pairs are mixed top-down so a middle level takes its reference-supplier
    // role first and its consumer role second.
    std::vector<Vec> mixed = logw;
    for (std::size_t c = coupling.size(); c-- > 0;) {
      const FittedComponent* upper = levels[c + 1].component;
      if (!levels[c].component || !upper) continue;
      const Vec lx0 = anchor_logweights(*upper, run[c + 1].states[mm]);
      auto [bx, bf] = couple_logweights(mixed[c + 1], mixed[c], lx0, coupling[c]);
      mixed[c + 1] = std::move(bx);
      mixed[c] = std::move(bf);
    }
    for (std::size_t l = 0; l < n; ++l) {
      const FittedComponent* fc = levels[l].component;
      if (!fc) {
        run[l].states.push_back(levels[l].fixed_state);
        continue;
      }
      const FlooredPsd ref = ref_for(l, mm);
      if (hook) hook(l, m, ref);
      const Vec w = fc->weights_from(mixed[l], dist[l]);
      const TerminalSurrogate s = TerminalSurrogate::from_weights(w, fc->atoms);
      const FrozenInterval fi = make_interval(*fc, m, ref, run[l].states.back());
      run[l].states.push_back(step_interval(fi, s, fc->config.bridge, fi.anchor, rng));
      run[l].refs.push_back(ref);
    }
  }

  std::vector<CoarsePath> out(n);
  for (std::size_t l = 0; l < n; ++l) {
    out[l].states = std::move(run[l].states);
    if (static_cast<int>(out[l].states.size()) > horizon) out[l].states.resize(static_cast<std::size_t>(horizon));
  }
  return out;
}

}  // namespace trsbts
