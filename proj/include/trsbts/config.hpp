#pragma once

// Experiment configuration: a JSON document with the sections dgp, model,
// coupling, scoring, sweep, seeds and output_dir. Every object is read with a
// strict reader, so a misspelt key fails with its full dotted name.

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "trsbts/experiments.hpp"
#include "trsbts/io.hpp"

namespace trsbts {

enum class DataKind { csv, hopf, heston };

inline const std::map<std::string, DataKind>& datakind_names() {
  static const std::map<std::string, DataKind> m{
      {"csv", DataKind::csv}, {"hopf", DataKind::hopf}, {"heston", DataKind::heston}};
  return m;
}
inline const std::map<std::string, LevelStream>& stream_names() {
  static const std::map<std::string, LevelStream> m{{"state", LevelStream::state},
                                                    {"cumulative_cov", LevelStream::cumulative_cov},
                                                    {"hybrid_frame", LevelStream::hybrid_frame}};
  return m;
}
inline const std::map<std::string, BackwardMapKind>& backmap_names() {
  static const std::map<std::string, BackwardMapKind> m{{"unvech", BackwardMapKind::unvech},
                                                        {"hybrid_ribbon", BackwardMapKind::hybrid_ribbon}};
  return m;
}

struct DataSection {
  DataKind kind = DataKind::csv;
  std::filesystem::path train, val;  // csv only, relative to the config file
  double dt = 1.0;                    // csv only; simulated sources carry their own
  HopfConfig hopf;
  HestonConfig heston;
  int n_train = 32;
  int n_val = 16;

  double step() const {
    switch (kind) {
      case DataKind::hopf:
        return hopf.dt;
      case DataKind::heston:
        return heston.dt;
      case DataKind::csv:
        break;
    }
    return dt;
  }
};

/// A candidate reference family for select-reference. `constant` uses
/// `matrix` (or scale * I), `empirical` the pooled increment covariance times
/// scale, and `running` each path's cumulative-average covariance times scale.
struct ReferenceCandidate {
  std::string name;
  std::string kind = "constant";
  double scale = 1.0;
  std::optional<Mat> matrix;
};

struct ScoringSection {
  int L = 32;
  int K = 1;
  int stride = 1;
  int p_mem = 0;  // 0 means one more than the largest model memory
  int slice = -1;
  bool normalize = true;
  int warm = 64;
  int horizon = 0;  // 0 means the length of the warm-start path
  double entropic_alpha = 0.9;
  double entropic_eps = 1e-6;
};

struct SweepSection {
  std::vector<int> dims{4, 16, 64};
  std::vector<std::string> variants{"classic_no_pcr", "classic_pcr"};
  std::optional<int> train_atoms;
  HopfSweepSpec hopf;
  LadderSpec ladder;
};

struct ExperimentConfig {
  DataSection dgp;
  std::vector<LevelSpec> levels;
  ComponentConfig baseline;
  std::vector<ReferenceCandidate> candidates;
  std::vector<CouplingConfig> coupling;
  ScoringSection scoring;
  SweepSection sweep;
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path output_dir = "out";

  int p_mem() const {
    if (scoring.p_mem > 0) return scoring.p_mem;
    int m = 0;
    for (const auto& l : levels) m = std::max(m, l.component.p_max);
    return m + 1;
  }

  EnergyScoreConfig energy() const {
    EnergyScoreConfig e;
    e.p_mem = p_mem();
    e.K = scoring.K;
    e.L = scoring.L;
    e.stride = scoring.stride;
    e.normalize_by_sqrt_q = scoring.normalize;
    return e;
  }
};

namespace detail {

template <class T>
std::vector<T> get_list(ObjectReader& r, const std::string& key, std::vector<T> fallback) {
  std::vector<T> v = r.get(key, std::move(fallback));
  if (v.empty()) fail(Errc::ConfigError, "key '" + r.name(key) + "' must be a non-empty list");
  return v;
}

inline Range read_range(ObjectReader& r, const std::string& key, Range fallback) {
  const auto v = r.get(key, std::vector<double>{fallback.lo, fallback.hi});
  if (v.size() != 2 || !(v[0] <= v[1])) fail(Errc::ConfigError, "key '" + r.name(key) + "' must be [lo, hi]");
  return {v[0], v[1]};
}

inline void read_hopf(ObjectReader& r, HopfConfig& h) {
  h.d = r.get("d", h.d);
  h.dt = r.get("dt", h.dt);
  h.years = r.get("years", h.years);
  h.omega = r.get("omega", h.omega);
  h.radial_gain = r.get("radial_gain", h.radial_gain);
  h.sigma_signal = r.get("sigma_signal", h.sigma_signal);
  h.lambda_perp = r.get("lambda_perp", h.lambda_perp);
  h.sigma_perp = r.get("sigma_perp", h.sigma_perp);
  h.substeps = r.get("substeps", h.substeps);
}

inline void read_heston(ObjectReader& r, HestonConfig& h) {
  h.mu = r.get("mu", h.mu);
  h.T = r.get("T", h.T);
  h.dt = r.get("dt", 1.0 / h.T);
  h.S0 = r.get("S0", h.S0);
  h.V0 = r.get("V0", h.V0);
  h.substeps = r.get("substeps", h.substeps);
  if (const Json* p = r.child("prior")) {
    ObjectReader pr(*p, r.name("prior"));
    h.prior.kappa = read_range(pr, "kappa", h.prior.kappa);
    h.prior.theta = read_range(pr, "theta", h.prior.theta);
    h.prior.xi = read_range(pr, "xi", h.prior.xi);
    h.prior.rho = read_range(pr, "rho", h.prior.rho);
    pr.finish();
  }
}

inline DataSection read_dgp(const Json& j, const std::filesystem::path& base) {
  ObjectReader r(j, "dgp");
  DataSection d;
  d.kind = parse_enum(r.required<std::string>("kind"), datakind_names(), r.name("kind"));
  switch (d.kind) {
    case DataKind::csv: {
      d.train = base / r.required<std::string>("train");
      if (r.has("val")) d.val = base / r.get<std::string>("val", "");
      else (void)r.child("val");
      d.dt = r.required<double>("dt");
      if (!(d.dt > 0.0)) fail(Errc::ConfigError, "key 'dgp.dt' must be positive");
      break;
    }
    case DataKind::hopf:
      read_hopf(r, d.hopf);
      break;
    case DataKind::heston:
      read_heston(r, d.heston);
      d.n_train = r.get("n_train", d.n_train);
      d.n_val = r.get("n_val", d.n_val);
      break;
  }
  r.finish();
  return d;
}

inline Json backward_map_to_json(const std::optional<BackwardMap>& m) {
  if (!m) return nullptr;
  return Json{{"kind", enum_name(m->kind, backmap_names())}, {"scale", m->scale}};
}

inline LevelSpec read_level(const Json& j, const std::string& where, double dt) {
  ObjectReader r(j, where);
  LevelSpec s;
  s.name = r.get<std::string>("name", "level");
  if (r.has("stream")) s.stream = parse_enum(r.get<std::string>("stream", ""), stream_names(), r.name("stream"));
  else (void)r.child("stream");
  if (const Json* m = r.child("backward_map")) {
    ObjectReader mr(*m, r.name("backward_map"));
    BackwardMap bm;
    bm.kind = parse_enum(mr.required<std::string>("kind"), backmap_names(), mr.name("kind"));
    bm.scale = mr.get("scale", bm.scale);
    if (!(bm.scale > 0.0)) fail(Errc::ConfigError, "key '" + mr.name("scale") + "' must be positive");
    mr.finish();
    s.to_upper = bm;
  }
  ComponentConfig base;
  base.dt = dt;
  if (const Json* c = r.child("component")) s.component = component_config_from_json(*c, r.name("component"), base);
  else s.component = base;
  r.finish();
  return s;
}

inline ReferenceCandidate read_candidate(const Json& j, const std::string& where) {
  ObjectReader r(j, where);
  ReferenceCandidate c;
  c.name = r.required<std::string>("name");
  c.kind = r.get<std::string>("kind", c.kind);
  if (c.kind != "constant" && c.kind != "empirical" && c.kind != "running")
    fail(Errc::ConfigError, "key '" + r.name("kind") + "' has invalid value '" + c.kind + "'");
  c.scale = r.get("scale", c.scale);
  if (!(c.scale > 0.0)) fail(Errc::ConfigError, "key '" + r.name("scale") + "' must be positive");
  if (r.has("matrix")) {
    const auto rows = r.get<std::vector<std::vector<double>>>("matrix", {});
    const auto n = static_cast<Eigen::Index>(rows.size());
    Mat m(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != n)
        fail(Errc::ConfigError, "key '" + r.name("matrix") + "' must be square");
      for (Eigen::Index k = 0; k < n; ++k) m(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    }
    c.matrix = m;
  } else {
    (void)r.child("matrix");
  }
  r.finish();
  return c;
}

inline CouplingConfig read_coupling(const Json& j, const std::string& where) {
  ObjectReader r(j, where);
  CouplingConfig c;
  c.rho_x = r.get("rho_x", c.rho_x);
  c.rho_y = r.get("rho_y", c.rho_y);
  c.alpha = r.get("alpha", c.alpha);
  r.finish();
  try {
    c.validate();
  } catch (const Error& e) {
    fail(Errc::ConfigError, where + ": " + e.what());
  }
  return c;
}

inline void read_ladder(ObjectReader& r, LadderSpec& l) {
  l.cov_bandwidths = get_list(r, "cov_bandwidths", l.cov_bandwidths);
  l.cov_memories = get_list(r, "cov_memories", l.cov_memories);
  l.cov_pcr_thresholds = get_list(r, "cov_pcr_thresholds", l.cov_pcr_thresholds);
  l.state_bandwidths = get_list(r, "state_bandwidths", l.state_bandwidths);
  l.state_memories = get_list(r, "state_memories", l.state_memories);
  l.state_epsilons = get_list(r, "state_epsilons", l.state_epsilons);
  l.rho_x = get_list(r, "rho_x", l.rho_x);
  l.rho_y = get_list(r, "rho_y", l.rho_y);
  l.alpha = get_list(r, "alpha", l.alpha);
  const auto h = r.get("horizons", std::vector<int>{l.horizons[0], l.horizons[1], l.horizons[2]});
  if (h.size() != 3) fail(Errc::ConfigError, "key '" + r.name("horizons") + "' must hold three horizons");
  l.horizons = {h[0], h[1], h[2]};
  l.L = r.get("L", l.L);
  l.stride = r.get("stride", l.stride);
}

/// Number of simulated steps whose training block holds at least `atoms` one-step atoms.
inline int steps_for_atoms(int atoms, double train_frac) {
  int n = static_cast<int>(std::ceil((atoms + 1) / train_frac));
  while (n > 2 && static_cast<int>(std::floor(train_frac * (n - 1))) >= atoms + 1) --n;
  while (static_cast<int>(std::floor(train_frac * n)) < atoms + 1) ++n;
  return n;
}

inline SweepSection read_sweep(const Json* j) {
  SweepSection s;
  if (!j) return s;
  ObjectReader r(*j, "sweep");
  s.dims = get_list(r, "dims", s.dims);
  s.variants = get_list(r, "variants", s.variants);
  if (r.has("train_atoms")) s.train_atoms = r.get("train_atoms", 0);
  else (void)r.child("train_atoms");
  auto& h = s.hopf;
  h.bandwidths = get_list(r, "bandwidths", h.bandwidths);
  h.memories = get_list(r, "memories", h.memories);
  h.pcr_thresholds = get_list(r, "pcr_thresholds", h.pcr_thresholds);
  h.train_frac = r.get("train_frac", h.train_frac);
  h.val_frac = r.get("val_frac", h.val_frac);
  h.L = r.get("L", h.L);
  h.val_L = r.get("val_L", h.val_L);
  h.val_stride = r.get("val_stride", h.val_stride);
  h.test_stride = r.get("test_stride", h.test_stride);
  h.bayes_L = r.get("bayes_L", h.bayes_L);
  h.slice = r.get("slice", h.slice);
  if (const Json* c = r.child("component")) h.base = component_config_from_json(*c, r.name("component"), h.base);
  if (const Json* l = r.child("ladder")) {
    ObjectReader lr(*l, r.name("ladder"));
    read_ladder(lr, s.ladder);
    lr.finish();
  }
  r.finish();
  for (const auto& v : s.variants)
    if (v != "classic_no_pcr" && v != "classic_pcr")
      fail(Errc::ConfigError, "key 'sweep.variants' has invalid value '" + v + "'");
  for (int d : s.dims)
    if (d < 2) fail(Errc::ConfigError, "key 'sweep.dims' entries must be >= 2");
  if (s.train_atoms && *s.train_atoms < 2) fail(Errc::ConfigError, "key 'sweep.train_atoms' must be >= 2");
  return s;
}

}  // namespace detail

/// Parses and validates a full experiment config. Relative file names are
/// resolved against `base` (normally the config file's directory).
inline ExperimentConfig parse_experiment_config(const Json& j, const std::filesystem::path& base = ".") {
  ObjectReader r(j, "");
  ExperimentConfig cfg;
  const Json* dgp = r.child("dgp");
  if (!dgp) fail(Errc::ConfigError, "missing required key 'dgp'");
  cfg.dgp = detail::read_dgp(*dgp, base);
  const double dt = cfg.dgp.step();

  const Json* model = r.child("model");
  std::optional<Json> levels_json, baseline_json;
  if (model) {
    ObjectReader mr(*model, "model");
    if (const Json* l = mr.child("levels")) {
      if (!l->is_array() || l->empty()) fail(Errc::ConfigError, "key 'model.levels' must be a non-empty list");
      for (std::size_t i = 0; i < l->size(); ++i)
        cfg.levels.push_back(detail::read_level(l->at(i), "model.levels[" + std::to_string(i) + "]", dt));
    }
    if (const Json* b = mr.child("baseline")) {
      ComponentConfig base_cfg = default_heston_baseline(dt);
      cfg.baseline = component_config_from_json(*b, "model.baseline", base_cfg);
    } else {
      cfg.baseline = default_heston_baseline(dt);
    }
    if (const Json* c = mr.child("candidates")) {
      if (!c->is_array()) fail(Errc::ConfigError, "key 'model.candidates' must be a list");
      for (std::size_t i = 0; i < c->size(); ++i)
        cfg.candidates.push_back(detail::read_candidate(c->at(i), "model.candidates[" + std::to_string(i) + "]"));
    }
    mr.finish();
  } else {
    cfg.baseline = default_heston_baseline(dt);
  }
  if (cfg.levels.empty()) {
    if (cfg.dgp.kind == DataKind::heston) cfg.levels = default_heston_levels(dt);
    else cfg.levels.push_back(LevelSpec{"state", LevelStream::state, [&] {
                                          ComponentConfig c;
                                          c.dt = dt;
                                          return c;
                                        }(), std::nullopt});
  }
  for (std::size_t l = 0; l + 1 < cfg.levels.size(); ++l)
    if (!cfg.levels[l].to_upper)
      fail(Errc::ConfigError, "key 'model.levels[" + std::to_string(l) + "].backward_map' is required below the top level");
  if (cfg.levels.back().stream != LevelStream::state)
    fail(Errc::ConfigError, "key 'model.levels' must end with a state level");

  if (const Json* c = r.child("coupling")) {
    if (!c->is_array()) fail(Errc::ConfigError, "key 'coupling' must be a list");
    for (std::size_t i = 0; i < c->size(); ++i)
      cfg.coupling.push_back(detail::read_coupling(c->at(i), "coupling[" + std::to_string(i) + "]"));
    if (!cfg.coupling.empty() && cfg.coupling.size() + 1 != cfg.levels.size())
      fail(Errc::ConfigError, "key 'coupling' needs one entry per adjacent level pair");
  }

  if (const Json* s = r.child("scoring")) {
    ObjectReader sr(*s, "scoring");
    auto& sc = cfg.scoring;
    sc.L = sr.get("L", sc.L);
    sc.K = sr.get("K", sc.K);
    sc.stride = sr.get("stride", sc.stride);
    sc.p_mem = sr.get("p_mem", sc.p_mem);
    sc.slice = sr.get("slice", sc.slice);
    sc.normalize = sr.get("normalize", sc.normalize);
    sc.warm = sr.get("warm", sc.warm);
    sc.horizon = sr.get("horizon", sc.horizon);
    sc.entropic_alpha = sr.get("entropic_alpha", sc.entropic_alpha);
    sc.entropic_eps = sr.get("entropic_eps", sc.entropic_eps);
    sr.finish();
    if (sc.L < 1 || sc.K < 1 || sc.stride < 1 || sc.p_mem < 0 || sc.warm < 1 || sc.horizon < 0)
      fail(Errc::ConfigError, "section 'scoring' holds a non-positive count");
  }

  cfg.sweep = detail::read_sweep(r.child("sweep"));
  if (cfg.dgp.kind == DataKind::hopf) cfg.sweep.hopf.dgp = cfg.dgp.hopf;
  if (cfg.sweep.train_atoms) {
    const int n = detail::steps_for_atoms(*cfg.sweep.train_atoms, cfg.sweep.hopf.train_frac);
    cfg.sweep.hopf.dgp.years = (n - 1) * cfg.sweep.hopf.dgp.dt;
  }

  cfg.seeds = r.get("seeds", cfg.seeds);
  if (cfg.seeds.empty()) fail(Errc::ConfigError, "key 'seeds' must be a non-empty list");
  cfg.output_dir = r.get<std::string>("output_dir", cfg.output_dir.string());
  if (cfg.output_dir.is_relative()) cfg.output_dir = base / cfg.output_dir;
  r.finish();

  try {
    for (const auto& l : cfg.levels) l.component.validate();
    cfg.baseline.validate();
    cfg.sweep.hopf.validate();
    cfg.sweep.ladder.validate();
    if (cfg.dgp.kind == DataKind::heston) cfg.dgp.heston.validate();
  } catch (const Error& e) {
    if (e.code() == Errc::NonIncreasingHorizons) throw;
    fail(Errc::ConfigError, std::string("invalid config: ") + e.what());
  }
  return cfg;
}

/// The `model` fragment describing a level stack, in the form parse_experiment_config reads.
inline Json levels_to_json(const std::vector<LevelSpec>& levels) {
  Json arr = Json::array();
  for (const auto& l : levels) {
    Json j;
    j["name"] = l.name;
    j["stream"] = enum_name(l.stream, stream_names());
    if (l.to_upper) j["backward_map"] = detail::backward_map_to_json(l.to_upper);
    j["component"] = component_config_to_json(l.component);
    arr.push_back(std::move(j));
  }
  return arr;
}

inline Json coupling_to_json(const std::vector<CouplingConfig>& cp) {
  Json arr = Json::array();
  for (const auto& c : cp) arr.push_back(Json{{"rho_x", c.rho_x}, {"rho_y", c.rho_y}, {"alpha", c.alpha}});
  return arr;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    fail(Errc::ConfigError, e.what());
  }
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::ConfigError, path.string() + ": " + e.what());
  }
  return parse_experiment_config(j, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

}  // namespace trsbts
