#pragma once

// Experiment drivers shared by the CLI and the acceptance suite: scoring
// adapters around fitted models, derivation of multi-level training streams
// from observed paths, the Hopf dimension sweep, the Heston recovery run and
// the three-phase hyperparameter ladder.

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "trsbts/dgp.hpp"
#include "trsbts/generator.hpp"

namespace trsbts {

// ---------------------------------------------------------------------------
// Work pool

/// Explicit request if positive, else TRSBTS_THREADS, else the hardware count.
inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("TRSBTS_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs f(i) for i < n on up to `threads` workers. The first exception is rethrown.
template <class F>
void parallel_for(std::size_t n, int threads, F&& f) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!err) err = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------
// Scoring adapters

/// energy_score_path model for one component. The first-step surrogate of the
/// latest memory block is cached, since all ensemble members share it.
class SingleModel {
 public:
  explicit SingleModel(const FittedComponent& fc, SingleOptions opts = {}) : fc_(fc), opts_(std::move(opts)) {}

  std::vector<Vec> continue_path(std::span<const Vec> memory, int K, Rng& rng) const {
    std::vector<Vec> states(memory.begin(), memory.end());
    const FlooredPsd& ref = opts_.reference ? *opts_.reference : fc_.frozen_reference;
    std::optional<FlooredPsd> cur;
    if (fc_.config.distance.anchor_metric == AnchorMetric::reference) cur = ref.scaled(fc_.config.dt);
    for (int k = 0; k < K; ++k) {
      const int m = static_cast<int>(states.size()) - 1;
      TerminalSurrogate s;
      if (k == 0 && cache_key_ == states) {
        s = cache_;
      } else {
        const auto q = build_summary(fc_.config, states, {}, ref, opts_.latent, cur, fc_.stores_cumulants());
        s = compute_surrogate(fc_, q).surrogate;
        if (k == 0) {
          cache_key_ = states;
          cache_ = s;
        }
      }
      const FrozenInterval fi = make_interval(fc_, m, ref, states.back());
      states.push_back(step_interval(fi, s, fc_.config.bridge, fi.anchor, rng));
    }
    return {states.end() - K, states.end()};
  }

 private:
  const FittedComponent& fc_;
  SingleOptions opts_;
  mutable std::vector<Vec> cache_key_;
  mutable TerminalSurrogate cache_;
};

/// Concatenates per-level states into one stacked path.
inline CoarsePath stack_levels(const std::vector<CoarsePath>& levels) {
  require(!levels.empty(), Errc::EmptyInput, "stack_levels: no levels");
  CoarsePath out;
  const std::size_t n = levels.front().size();
  Eigen::Index total = 0;
  for (const auto& l : levels) {
    require(l.size() == n, Errc::ShapeMismatch, "stack_levels: levels must have equal length");
    total += l.dim();
  }
  for (std::size_t t = 0; t < n; ++t) {
    Vec s(total);
    Eigen::Index off = 0;
    for (const auto& l : levels) {
      s.segment(off, l.dim()) = l.states[t];
      off += l.dim();
    }
    out.states.push_back(std::move(s));
  }
  return out;
}

/// energy_score_path model over stacked joint states.
class JointModel {
 public:
  JointModel(std::vector<JointLevel> levels, std::vector<CouplingConfig> coupling, std::vector<Eigen::Index> dims)
      : levels_(std::move(levels)), coupling_(std::move(coupling)), dims_(std::move(dims)) {
    require(levels_.size() == dims_.size(), Errc::ShapeMismatch, "JointModel: one dimension per level");
  }

  std::vector<Vec> continue_path(std::span<const Vec> memory, int K, Rng& rng) const {
    const std::size_t n = levels_.size();
    std::vector<std::vector<Vec>> warm(n);
    for (const auto& s : memory) {
      Eigen::Index off = 0;
      for (std::size_t l = 0; l < n; ++l) {
        if (levels_[l].component) warm[l].push_back(s.segment(off, dims_[l]));
        off += dims_[l];
      }
    }
    const int W = static_cast<int>(memory.size());
    const auto out = generate_joint(levels_, coupling_, warm, W + K, rng);
    std::vector<CoarsePath> tails(n);
    for (std::size_t l = 0; l < n; ++l)
      tails[l].states.assign(out[l].states.begin() + W, out[l].states.end());
    return stack_levels(tails).states;
  }

 private:
  std::vector<JointLevel> levels_;
  std::vector<CouplingConfig> coupling_;
  std::vector<Eigen::Index> dims_;
};

/// Time-major features of the block [offset, offset + len) of stacked states,
/// each step optionally transformed.
inline WindowFeature block_feature(Eigen::Index offset, Eigen::Index len,
                                   std::function<Vec(const Vec&)> transform = {}) {
  return [=](const Vec&, std::span<const Vec> window) {
    std::vector<Vec> parts;
    Eigen::Index total = 0;
    for (const auto& s : window) {
      Vec b = s.segment(offset, len);
      if (transform) b = transform(b);
      total += b.size();
      parts.push_back(std::move(b));
    }
    Vec out(total);
    Eigen::Index o = 0;
    for (const auto& p : parts) {
      out.segment(o, p.size()) = p;
      o += p.size();
    }
    return out;
  };
}

/// vech of the symmetric square root of a packed covariance state.
inline Vec sqrt_descriptor_feature(const Vec& packed) { return vech(sym_sqrt(psd_project(unvech(packed)))); }

// ---------------------------------------------------------------------------
// Multi-level training streams

enum class LevelStream { state, cumulative_cov, hybrid_frame };

struct LevelSpec {
  std::string name;
  LevelStream stream = LevelStream::state;
  ComponentConfig component;
  std::optional<BackwardMap> to_upper;
};

/// Per-level series derived from observed paths, indexed [level][path]. When
/// any level uses a covariance stream every level is aligned to t = 1..T-1,
/// where the running covariance is defined. Level l > 0 receives interval
/// references from the backward map of level l-1 and, when configured, the
/// lower state as latent.
inline std::vector<std::vector<LevelSeries>> derive_levels(const std::vector<CoarsePath>& observed,
                                                           const std::vector<LevelSpec>& specs, double dt) {
  require(!specs.empty(), Errc::InvalidArgument, "derive_levels: no levels");
  bool cov = false;
  for (const auto& s : specs) cov = cov || s.stream != LevelStream::state;
  std::vector<std::vector<LevelSeries>> out(specs.size());
  for (const auto& path : observed) {
    const std::size_t off = cov ? 1 : 0;
    if (path.size() < off + 2) fail(Errc::TooShort, "derive_levels: observed path too short");
    DescriptorPath desc;
    if (cov) desc = cumulative_avg_cov(path, dt);
    for (std::size_t l = 0; l < specs.size(); ++l) {
      LevelSeries ls;
      for (std::size_t t = off; t < path.size(); ++t) {
        switch (specs[l].stream) {
          case LevelStream::state:
            ls.states.push_back(path.states[t]);
            break;
          case LevelStream::cumulative_cov:
            ls.states.push_back(desc.packed[t - 1]);
            break;
          case LevelStream::hybrid_frame: {
            const SymMatrix& m = desc.descriptors[t - 1];
            const double tr = m.matrix().trace();
            if (!(tr > 0.0)) fail(Errc::DegeneratePath, "derive_levels: zero running covariance");
            ls.states.push_back(hybrid_frame_encode(m, tr).to_vector());
            break;
          }
        }
      }
      out[l].push_back(std::move(ls));
    }
  }
  for (std::size_t l = 1; l < specs.size(); ++l) {
    require(specs[l - 1].to_upper.has_value(), Errc::InvalidArgument, "derive_levels: missing backward map");
    for (std::size_t p = 0; p < observed.size(); ++p) {
      const auto& lower = out[l - 1][p].states;
      auto& up = out[l][p];
      for (std::size_t k = 0; k + 1 < lower.size(); ++k)
        up.interval_refs.push_back(psd_project(specs[l - 1].to_upper->apply(lower[k + 1])));
      if (specs[l].component.use_latent) up.latent = lower;
    }
  }
  return out;
}

inline std::vector<FittedComponent> fit_levels(const std::vector<std::vector<LevelSeries>>& data,
                                               const std::vector<LevelSpec>& specs) {
  std::vector<FittedComponent> out;
  for (std::size_t l = 0; l < specs.size(); ++l) out.push_back(fit_component(data[l], specs[l].component));
  return out;
}

inline std::vector<JointLevel> joint_levels(const std::vector<FittedComponent>& fitted,
                                            const std::vector<LevelSpec>& specs) {
  std::vector<JointLevel> out;
  for (std::size_t l = 0; l < fitted.size(); ++l) {
    JointLevel j;
    j.component = &fitted[l];
    j.to_upper = specs[l].to_upper;
    out.push_back(std::move(j));
  }
  return out;
}

/// Stacked observed paths, one per path index.
inline std::vector<CoarsePath> stacked_paths(const std::vector<std::vector<LevelSeries>>& data, std::size_t n_levels) {
  std::vector<CoarsePath> out;
  for (std::size_t p = 0; p < data.front().size(); ++p) {
    std::vector<CoarsePath> lv;
    for (std::size_t l = 0; l < n_levels; ++l) lv.push_back(CoarsePath{data[l][p].states});
    out.push_back(stack_levels(lv));
  }
  return out;
}

/// Mean energy score over validation paths; path p uses the master seed make_stream(seed, p)().
template <class Model>
double mean_energy_score(const Model& model, const std::vector<CoarsePath>& paths, const EnergyScoreConfig& cfg,
                         std::uint64_t seed, const WindowFeature& feature) {
  require(!paths.empty(), Errc::EmptyInput, "no validation paths");
  double s = 0.0;
  for (std::size_t p = 0; p < paths.size(); ++p) {
    Rng r = make_stream(seed, p);
    s += energy_score_path(model, paths[p], cfg, r(), feature).score;
  }
  return s / static_cast<double>(paths.size());
}

// ---------------------------------------------------------------------------
// Hopf dimension sweep

struct HopfSweepSpec {
  HopfConfig dgp;
  ComponentConfig base = [] {
    ComponentConfig c;
    c.mode = ConditioningMode::projected;
    c.p_max = 0;
    c.kernel.variant = KernelVariant::quartic_compact;
    c.bridge.n_inner = 4;
    c.reference = ReferenceKind::identity;
    return c;
  }();
  std::vector<double> bandwidths{0.05, 0.1, 0.2, 0.4, 0.8};
  std::vector<int> memories{0};
  std::vector<double> pcr_thresholds{0.5, 0.85, 0.99};
  double train_frac = 0.7;
  double val_frac = 0.15;
  int L = 32;
  int val_L = 16;
  int val_stride = 2;
  int test_stride = 1;
  int bayes_L = 256;
  int slice = 2;

  void validate() const {
    dgp.validate();
    base.validate();
    require(!bandwidths.empty() && !memories.empty() && !pcr_thresholds.empty(), Errc::InvalidArgument,
            "sweep grids must be non-empty");
    require(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0, Errc::InvalidArgument,
            "sweep fractions must leave a test block");
    require(L >= 1 && val_L >= 1 && val_stride >= 1 && test_stride >= 1 && bayes_L >= 2 && slice >= 1,
            Errc::InvalidArgument, "sweep scoring settings must be positive");
    for (int m : memories) require(m >= 0, Errc::InvalidArgument, "memories must be >= 0");
  }
  int p_mem() const { return *std::max_element(memories.begin(), memories.end()) + 1; }
};

struct HopfSplit {
  CoarsePath train, val, test;
};

/// Contiguous train/validation/test blocks. Validation and test blocks carry
/// the p_mem - 1 preceding states as memory for their first window.
inline HopfSplit split_blocks(const CoarsePath& path, double train_frac, double val_frac, int p_mem) {
  const auto n = static_cast<std::ptrdiff_t>(path.size());
  const auto a = static_cast<std::ptrdiff_t>(std::floor(train_frac * static_cast<double>(n)));
  const auto b = static_cast<std::ptrdiff_t>(std::floor((train_frac + val_frac) * static_cast<double>(n)));
  const std::ptrdiff_t back = p_mem - 1;
  if (a - back < 2 || b - a < 2 || n - b < 2) fail(Errc::TooShort, "path too short for the block split");
  HopfSplit s;
  s.train.states.assign(path.states.begin(), path.states.begin() + a);
  s.val.states.assign(path.states.begin() + (a - back), path.states.begin() + b);
  s.test.states.assign(path.states.begin() + (b - back), path.states.end());
  return s;
}

/// Samples the true one-step transition of the signal block.
struct HopfTruth {
  HopfConfig cfg;
  std::vector<Vec> continue_path(std::span<const Vec> memory, int K, Rng& rng) const {
    std::vector<Vec> out;
    Eigen::Vector2d x = memory.back().head(2);
    for (int k = 0; k < K; ++k) {
      x = hopf_signal_step(cfg, x, rng);
      Vec s = Vec::Zero(memory.back().size());
      s.head(2) = x;
      out.push_back(std::move(s));
    }
    return out;
  }
};

inline EnergyScoreConfig one_step_config(int p_mem, int L, int stride) {
  EnergyScoreConfig e;
  e.p_mem = p_mem;
  e.K = 1;
  e.L = L;
  e.stride = stride;
  e.normalize_by_sqrt_q = true;
  return e;
}

/// Monte Carlo Bayes floor: the one-step energy score of the true transition on the test block.
inline PathScore hopf_bayes_floor(const HopfSweepSpec& spec, const CoarsePath& test, std::uint64_t seed) {
  return energy_score_path(HopfTruth{spec.dgp}, test, one_step_config(spec.p_mem(), spec.bayes_L, spec.test_stride),
                           seed, time_major_feature(spec.slice));
}

struct HopfVariantResult {
  std::string variant;
  double score = 0.0;
  double val_score = 0.0;
  int n_windows = 0;
  int n_atoms = 0;
  double bandwidth = 0.0;
  int memory = 0;
  double pcr_threshold = 0.0;
};

inline ComponentConfig hopf_variant_config(const HopfSweepSpec& spec, const std::string& variant) {
  ComponentConfig c = spec.base;
  c.dt = spec.dgp.dt;
  c.mode = ConditioningMode::projected;
  if (variant == "classic_no_pcr") c.use_pcr = false;
  else if (variant == "classic_pcr") c.use_pcr = true;
  else fail(Errc::ConfigError, "unknown sweep variant '" + variant + "'");
  return c;
}

/// Selects (bandwidth, memory, threshold) on the validation block, then scores the test block.
inline HopfVariantResult run_hopf_variant(const HopfSweepSpec& spec, const HopfSplit& split, const std::string& variant,
                                          std::uint64_t seed) {
  const ComponentConfig base = hopf_variant_config(spec, variant);
  const std::vector<double> thresholds = base.use_pcr ? spec.pcr_thresholds : std::vector<double>{1.0};
  const std::vector<LevelSeries> train{LevelSeries{split.train.states, {}, {}}};
  const EnergyScoreConfig vcfg = one_step_config(spec.p_mem(), spec.val_L, spec.val_stride);
  const auto feat = time_major_feature(spec.slice);

  HopfVariantResult best;
  best.variant = variant;
  bool have = false;
  for (int p : spec.memories) {
    for (double thr : thresholds) {
      ComponentConfig c = base;
      c.p_max = p;
      c.pcr_threshold = thr;
      for (double h : spec.bandwidths) {
        c.kernel.bandwidth = h;
        const FittedComponent fc = fit_component(train, c);
        const double v = energy_score_path(SingleModel(fc), split.val, vcfg, seed, feat).score;
        if (!have || v < best.val_score) {
          have = true;
          best.val_score = v;
          best.bandwidth = h;
          best.memory = p;
          best.pcr_threshold = thr;
        }
      }
    }
  }
  ComponentConfig c = base;
  c.p_max = best.memory;
  c.pcr_threshold = best.pcr_threshold;
  c.kernel.bandwidth = best.bandwidth;
  const FittedComponent fc = fit_component(train, c);
  const PathScore ts = energy_score_path(SingleModel(fc), split.test,
                                         one_step_config(spec.p_mem(), spec.L, spec.test_stride), seed + 1, feat);
  best.score = ts.score;
  best.n_windows = ts.n_windows;
  best.n_atoms = static_cast<int>(fc.size());
  if (!base.use_pcr) best.pcr_threshold = 0.0;
  return best;
}

struct HopfCellResult {
  int d = 0;
  std::uint64_t seed = 0;
  double bayes_floor = 0.0;
  std::vector<HopfVariantResult> variants;
};

inline HopfCellResult run_hopf_cell(HopfSweepSpec spec, int d, std::uint64_t seed,
                                    const std::vector<std::string>& variants) {
  spec.dgp.d = d;
  spec.dgp.seed = seed;
  spec.validate();
  const CoarsePath path = simulate_hopf(spec.dgp);
  const HopfSplit split = split_blocks(path, spec.train_frac, spec.val_frac, spec.p_mem());
  HopfCellResult r;
  r.d = d;
  r.seed = seed;
  r.bayes_floor = hopf_bayes_floor(spec, split.test, seed ^ 0xB5u).score;
  for (const auto& v : variants) r.variants.push_back(run_hopf_variant(spec, split, v, seed));
  return r;
}

// ---------------------------------------------------------------------------
// Heston recovery

struct HestonExperimentSpec {
  HestonConfig dgp;
  int n_train = 32;
  int n_val = 16;
  int warm = 32;
  std::vector<LevelSpec> levels;
  std::vector<CouplingConfig> coupling;
  ComponentConfig baseline;

  void validate() const {
    dgp.validate();
    require(n_train >= 1 && n_val >= 1, Errc::InvalidArgument, "heston pools must be non-empty");
    require(warm >= 1 && warm < dgp.T - 1, Errc::InvalidArgument, "heston warm length must be in [1, T-1)");
    require(!levels.empty() && levels.size() <= 3, Errc::InvalidArgument, "heston model needs 1 to 3 levels");
    require(levels.back().stream == LevelStream::state, Errc::InvalidArgument, "top heston level must be the state");
    require(coupling.empty() || coupling.size() + 1 == levels.size(), Errc::InvalidArgument,
            "one coupling per adjacent level pair");
    baseline.validate();
  }
};

struct HestonPool {
  std::vector<HestonParams> params;
  std::vector<CoarsePath> paths;
};

/// Path p draws its parameters and its noise from make_stream(seed, stream_base + p).
inline HestonPool simulate_heston_pool(const HestonConfig& cfg, int n, std::uint64_t seed, std::uint64_t stream_base) {
  HestonPool pool;
  for (int p = 0; p < n; ++p) {
    Rng rng = make_stream(seed, stream_base + static_cast<std::uint64_t>(p));
    HestonConfig c = cfg;
    c.params = draw_heston_params(cfg.prior, rng);
    pool.params.push_back(c.params);
    pool.paths.push_back(simulate_heston(c, rng));
  }
  return pool;
}

struct HestonRepResult {
  std::vector<HestonEstimate> real, trsbts, baseline;
  std::vector<CoarsePath> synthetic, synthetic_baseline;
  std::array<double, 4> ed_trsbts{}, ed_baseline{};
};

inline std::array<std::vector<double>, 4> estimate_columns(const std::vector<HestonEstimate>& es) {
  std::array<std::vector<double>, 4> cols;
  for (const auto& e : es) {
    cols[0].push_back(e.kappa);
    cols[1].push_back(e.theta);
    cols[2].push_back(e.xi);
    cols[3].push_back(e.rho);
  }
  return cols;
}

inline std::array<double, 4> estimate_energy_distances(const std::vector<HestonEstimate>& a,
                                                       const std::vector<HestonEstimate>& b) {
  const auto ca = estimate_columns(a), cb = estimate_columns(b);
  std::array<double, 4> out{};
  for (std::size_t k = 0; k < 4; ++k) out[k] = energy_distance(ca[k], cb[k]);
  return out;
}

/// One repetition: fit the layered model and the frozen-reference baseline on
/// the training pool, then warm-start each held-out path and generate the rest.
inline HestonRepResult run_heston_rep(const HestonExperimentSpec& spec, std::uint64_t seed, int threads = 1) {
  spec.validate();
  const HestonPool train = simulate_heston_pool(spec.dgp, spec.n_train, seed, 1000);
  const HestonPool val = simulate_heston_pool(spec.dgp, spec.n_val, seed, 100000);
  const double dt = spec.dgp.dt;

  const auto tdata = derive_levels(train.paths, spec.levels, dt);
  const auto vdata = derive_levels(val.paths, spec.levels, dt);
  const std::vector<FittedComponent> fitted = fit_levels(tdata, spec.levels);
  const std::vector<JointLevel> jl = joint_levels(fitted, spec.levels);

  std::vector<LevelSeries> base_train;
  for (const auto& s : tdata.back()) base_train.push_back(LevelSeries{s.states, {}, {}});
  ComponentConfig bc = spec.baseline;
  bc.dt = dt;
  const FittedComponent base = fit_component(base_train, bc);

  const std::size_t top = spec.levels.size() - 1;
  const auto W = static_cast<std::size_t>(spec.warm);
  HestonRepResult r;
  r.real.resize(static_cast<std::size_t>(spec.n_val));
  r.trsbts.resize(r.real.size());
  r.baseline.resize(r.real.size());
  r.synthetic.resize(r.real.size());
  r.synthetic_baseline.resize(r.real.size());
  parallel_for(r.real.size(), threads, [&](std::size_t v) {
    const int horizon = static_cast<int>(vdata.back()[v].states.size());
    std::vector<std::vector<Vec>> warm(spec.levels.size());
    for (std::size_t l = 0; l < spec.levels.size(); ++l)
      warm[l].assign(vdata[l][v].states.begin(), vdata[l][v].states.begin() + static_cast<std::ptrdiff_t>(W));
    Rng g1 = make_stream(seed, 200000 + v);
    const auto out = generate_joint(jl, spec.coupling, warm, horizon, g1);
    Rng g2 = make_stream(seed, 300000 + v);
    const CoarsePath bpath = generate_single(base, warm[top], horizon, g2);

    const CoarsePath real{vdata.back()[v].states};
    r.real[v] = estimate_heston(real, dt);
    r.trsbts[v] = estimate_heston(out[top], dt);
    r.baseline[v] = estimate_heston(bpath, dt);
    r.synthetic[v] = out[top];
    r.synthetic_baseline[v] = bpath;
  });
  r.ed_trsbts = estimate_energy_distances(r.trsbts, r.real);
  r.ed_baseline = estimate_energy_distances(r.baseline, r.real);
  return r;
}

/// Default three-level design: hybrid frame of the running covariance, its
/// packed form, and the observed (log S, V) state.
inline std::vector<LevelSpec> default_heston_levels(double dt) {
  ComponentConfig z;
  z.dt = dt;
  z.p_max = 1;
  z.kernel.bandwidth = 1.0;
  z.bridge.n_inner = 4;
  z.bridge.epsilon = 1e-4;
  z.reference = ReferenceKind::empirical;
  ComponentConfig y = z;
  y.bridge.epsilon = 1e-5;
  y.use_latent = true;
  y.distance.latent_scale = 0.5;
  ComponentConfig x = z;
  x.bridge.epsilon = 1e-6;
  x.distance.anchor_metric = AnchorMetric::reference;
  x.use_latent = true;
  x.distance.latent_scale = 0.02;
  return {LevelSpec{"tertiary", LevelStream::hybrid_frame, z, BackwardMap{BackwardMapKind::hybrid_ribbon, 1e-3}},
          LevelSpec{"secondary", LevelStream::cumulative_cov, y, BackwardMap{BackwardMapKind::unvech, 1.0}},
          LevelSpec{"primary", LevelStream::state, x, std::nullopt}};
}

inline ComponentConfig default_heston_baseline(double dt) {
  ComponentConfig c;
  c.dt = dt;
  c.p_max = 1;
  c.kernel.bandwidth = 1.0;
  c.bridge.n_inner = 4;
  c.bridge.epsilon = 1e-6;
  c.reference = ReferenceKind::identity;
  return c;
}

// ---------------------------------------------------------------------------
// Three-phase ladder

struct LadderSpec {
  std::vector<double> cov_bandwidths{0.5, 1.0, 2.0};
  std::vector<int> cov_memories{1};
  std::vector<double> cov_pcr_thresholds{0.99};
  std::vector<double> state_bandwidths{0.5, 1.0, 2.0};
  std::vector<int> state_memories{1};
  std::vector<double> state_epsilons{1e-6};
  std::vector<double> rho_x{0.0};
  std::vector<double> rho_y{0.0};
  std::vector<double> alpha{0.0};
  std::array<int, 3> horizons{1, 2, 4};
  int L = 16;
  int stride = 4;

  void validate() const {
    if (!(horizons[0] < horizons[1] && horizons[1] < horizons[2]))
      fail(Errc::NonIncreasingHorizons, "ladder horizons must strictly increase across phases");
    require(horizons[0] >= 1, Errc::InvalidArgument, "ladder horizons must be >= 1");
    require(L >= 1 && stride >= 1, Errc::InvalidArgument, "ladder L and stride must be positive");
    for (const auto* g : {&cov_bandwidths, &state_bandwidths, &state_epsilons, &rho_x, &rho_y, &alpha, &cov_pcr_thresholds})
      require(!g->empty(), Errc::InvalidArgument, "ladder grids must be non-empty");
    require(!cov_memories.empty() && !state_memories.empty(), Errc::InvalidArgument, "ladder grids must be non-empty");
  }
};

struct LadderResult {
  std::vector<LevelSpec> levels;
  std::vector<CouplingConfig> coupling;
  std::array<double, 3> scores{};
  std::array<int, 3> evaluated{};
};

namespace detail {

inline int max_memory(const std::vector<LevelSpec>& specs, std::size_t upto) {
  int m = 0;
  for (std::size_t l = 0; l <= upto; ++l) m = std::max(m, specs[l].component.p_max);
  return m;
}

// Validation energy score of the sub-model made of levels 0..upto.
inline double ladder_score(const std::vector<LevelSpec>& specs, std::size_t upto, const std::vector<CouplingConfig>& coupling,
                           const std::vector<std::vector<LevelSeries>>& train,
                           const std::vector<std::vector<LevelSeries>>& val, int p_mem, int K, const LadderSpec& ls,
                           std::uint64_t seed, const std::function<WindowFeature(const std::vector<FittedComponent>&)>& feat) {
  const std::vector<LevelSpec> sub(specs.begin(), specs.begin() + static_cast<std::ptrdiff_t>(upto + 1));
  std::vector<std::vector<LevelSeries>> tr(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(upto + 1));
  const std::vector<FittedComponent> fitted = fit_levels(tr, sub);
  std::vector<Eigen::Index> dims;
  for (const auto& f : fitted) dims.push_back(f.dim);
  std::vector<CouplingConfig> cp;
  if (!coupling.empty()) cp.assign(coupling.begin(), coupling.begin() + static_cast<std::ptrdiff_t>(upto));
  const JointModel model(joint_levels(fitted, sub), cp, dims);
  EnergyScoreConfig e;
  e.p_mem = p_mem;
  e.K = K;
  e.L = ls.L;
  e.stride = ls.stride;
  e.normalize_by_sqrt_q = true;
  return mean_energy_score(model, stacked_paths(val, upto + 1), e, seed, feat(fitted));
}

inline Eigen::Index block_offset(const std::vector<std::vector<LevelSeries>>& data, std::size_t level) {
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < level; ++l) off += data[l].front().states.front().size();
  return off;
}

}  // namespace detail

/// Phase 1 tunes each covariance level bottom-up on the square-root descriptor
/// path, Phase 2 tunes the top level at a longer horizon with those choices
/// frozen, Phase 3 tunes the coupling on the enriched score at the longest horizon.
inline LadderResult run_ladder(std::vector<LevelSpec> specs, const std::vector<CoarsePath>& train_obs,
                               const std::vector<CoarsePath>& val_obs, double dt, const LadderSpec& ls,
                               std::uint64_t seed) {
  ls.validate();
  require(!specs.empty(), Errc::InvalidArgument, "ladder needs at least one level");
  LadderResult res;
  const std::size_t top = specs.size() - 1;

  // The windows of a phase must not depend on the candidate memory.
  auto phase_pmem = [&](std::size_t upto, const std::vector<int>& grid, std::size_t tuned) {
    int m = 0;
    for (std::size_t l = 0; l <= upto; ++l)
      m = std::max(m, l == tuned ? *std::max_element(grid.begin(), grid.end()) : specs[l].component.p_max);
    return m + 1;
  };

  // Phase 1
  for (std::size_t l = 0; l < top; ++l) {
    const int p_mem = phase_pmem(l, ls.cov_memories, l);
    double best = 0.0;
    ComponentConfig chosen = specs[l].component;
    bool have = false;
    for (int p : ls.cov_memories) {
      for (double thr : ls.cov_pcr_thresholds) {
        for (double h : ls.cov_bandwidths) {
          auto trial = specs;
          trial[l].component.p_max = p;
          trial[l].component.pcr_threshold = thr;
          trial[l].component.kernel.bandwidth = h;
          const auto tr = derive_levels(train_obs, trial, dt);
          const auto va = derive_levels(val_obs, trial, dt);
          const Eigen::Index off = detail::block_offset(tr, l);
          const Eigen::Index len = tr[l].front().states.front().size();
          const bool packed = trial[l].stream == LevelStream::cumulative_cov;
          const auto feat = [&](const std::vector<FittedComponent>&) {
            return packed ? block_feature(off, len, sqrt_descriptor_feature) : block_feature(off, len);
          };
          const double s =
              detail::ladder_score(trial, l, {}, tr, va, p_mem, ls.horizons[0], ls, seed, feat);
          ++res.evaluated[0];
          if (!have || s < best) {
            have = true;
            best = s;
            chosen = trial[l].component;
          }
        }
      }
    }
    specs[l].component = chosen;
    res.scores[0] = best;
  }

  // Phase 2
  {
    const int p_mem = phase_pmem(top, ls.state_memories, top);
    double best = 0.0;
    ComponentConfig chosen = specs[top].component;
    bool have = false;
    const auto tr = derive_levels(train_obs, specs, dt);
    const auto va = derive_levels(val_obs, specs, dt);
    const Eigen::Index off = detail::block_offset(tr, top);
    const Eigen::Index len = tr[top].front().states.front().size();
    for (int p : ls.state_memories) {
      for (double eps : ls.state_epsilons) {
        for (double h : ls.state_bandwidths) {
          auto trial = specs;
          trial[top].component.p_max = p;
          trial[top].component.bridge.epsilon = eps;
          trial[top].component.kernel.bandwidth = h;
          const auto feat = [&](const std::vector<FittedComponent>&) { return block_feature(off, len); };
          const double s = detail::ladder_score(trial, top, {}, tr, va, p_mem, ls.horizons[1], ls, seed, feat);
          ++res.evaluated[1];
          if (!have || s < best) {
            have = true;
            best = s;
            chosen = trial[top].component;
          }
        }
      }
    }
    specs[top].component = chosen;
    res.scores[1] = best;
  }

  // Phase 3
  if (top > 0) {
    const int p_mem = detail::max_memory(specs, top) + 1;
    const auto tr = derive_levels(train_obs, specs, dt);
    const auto va = derive_levels(val_obs, specs, dt);
    const Eigen::Index off = detail::block_offset(tr, top);
    const Eigen::Index len = tr[top].front().states.front().size();
    double best = 0.0;
    bool have = false;
    for (double rx : ls.rho_x) {
      for (double ry : ls.rho_y) {
        for (double a : ls.alpha) {
          const std::vector<CouplingConfig> cp(top, CouplingConfig{rx, ry, a});
          const auto feat = [&](const std::vector<FittedComponent>& f) -> WindowFeature {
            const double sp = f.back().sigma_pos, si = f.back().sigma_inc;
            return [=](const Vec& prev, std::span<const Vec> window) {
              std::vector<Vec> w;
              for (const auto& s : window) w.push_back(s.segment(off, len));
              return enriched_features(prev.segment(off, len), w, sp, si);
            };
          };
          const double s = detail::ladder_score(specs, top, cp, tr, va, p_mem, ls.horizons[2], ls, seed, feat);
          ++res.evaluated[2];
          if (!have || s < best) {
            have = true;
            best = s;
            res.coupling = cp;
          }
        }
      }
    }
    res.scores[2] = best;
  }
  res.levels = std::move(specs);
  return res;
}

}  // namespace trsbts
