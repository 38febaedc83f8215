#pragma once

// Subcommand bodies for the command-line harness. Each takes a parsed config
// and a run context, writes its tables under the output directory and returns
// the paths it wrote. Every output is a function of (config, seed).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "trsbts/config.hpp"

namespace trsbts {

namespace fs = std::filesystem;

struct RunContext {
  std::uint64_t seed = 1;
  int threads = 1;
  fs::path out;
  std::ostream* log = nullptr;

  void note(const std::string& line) const {
    if (log) *log << line << '\n';
  }
};

/// Process exit status for an error code.
inline int exit_code_for(Errc c) {
  switch (c) {
    case Errc::ConfigError:
    case Errc::InvalidArgument:
    case Errc::NonIncreasingHorizons:
      return 2;
    case Errc::DataError:
    case Errc::TooShort:
    case Errc::InsufficientData:
    case Errc::DegeneratePath:
    case Errc::DegenerateData:
    case Errc::EmptyInput:
    case Errc::ShapeMismatch:
    case Errc::DimMismatch:
    case Errc::BadLength:
    case Errc::MissingStats:
      return 3;
    default:
      return 4;
  }
}

/// Single-line JSON trailer for stderr.
inline std::string error_trailer(const std::string& code, int exit_code, const std::string& message) {
  Json j;
  j["error"] = Json{{"code", code}, {"exit", exit_code}, {"message", message}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// Data

struct Dataset {
  std::vector<CoarsePath> train, val;
};

inline Dataset load_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
  Dataset ds;
  switch (cfg.dgp.kind) {
    case DataKind::csv:
      ds.train = read_paths(cfg.dgp.train);
      if (!cfg.dgp.val.empty()) ds.val = read_paths(cfg.dgp.val);
      break;
    case DataKind::hopf: {
      HopfConfig h = cfg.dgp.hopf;
      h.seed = seed;
      const auto& sw = cfg.sweep.hopf;
      const HopfSplit s = split_blocks(simulate_hopf(h), sw.train_frac, sw.val_frac, cfg.p_mem());
      ds.train = {s.train};
      ds.val = {s.val};
      break;
    }
    case DataKind::heston:
      ds.train = simulate_heston_pool(cfg.dgp.heston, cfg.dgp.n_train, seed, 1000).paths;
      ds.val = simulate_heston_pool(cfg.dgp.heston, cfg.dgp.n_val, seed, 100000).paths;
      break;
  }
  if (ds.train.empty()) fail(Errc::DataError, "no training paths");
  return ds;
}

inline const std::vector<CoarsePath>& validation_paths(const Dataset& ds) {
  if (ds.val.empty()) fail(Errc::ConfigError, "this command needs validation paths (key 'dgp.val')");
  return ds.val;
}

// ---------------------------------------------------------------------------
// Model directory

struct ModelBundle {
  std::vector<LevelSpec> specs;
  std::vector<FittedComponent> fitted;
  std::vector<CouplingConfig> coupling;
  double dt = 0.0;

  std::vector<JointLevel> joint() const { return joint_levels(fitted, specs); }
  std::vector<Eigen::Index> dims() const {
    std::vector<Eigen::Index> d;
    for (const auto& f : fitted) d.push_back(f.dim);
    return d;
  }
};

inline Json save_model_dir(const fs::path& dir, const ModelBundle& m, std::uint64_t seed) {
  fs::create_directories(dir);
  Json manifest;
  manifest["format"] = "trsbts-model/1";
  manifest["seed"] = seed;
  manifest["dt"] = m.dt;
  Json levels = Json::array();
  for (std::size_t l = 0; l < m.fitted.size(); ++l) {
    Json lj;
    lj["name"] = m.specs[l].name;
    lj["stream"] = enum_name(m.specs[l].stream, stream_names());
    lj["backward_map"] = detail::backward_map_to_json(m.specs[l].to_upper);
    lj["component"] = save_component(dir, "level" + std::to_string(l), m.fitted[l]);
    levels.push_back(std::move(lj));
  }
  manifest["levels"] = std::move(levels);
  manifest["coupling"] = coupling_to_json(m.coupling);
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

inline ModelBundle load_model_dir(const fs::path& dir) {
  const fs::path mf = dir / "manifest.json";
  if (!fs::exists(mf)) fail(Errc::DataError, "no model manifest at " + mf.string());
  Json j;
  try {
    j = Json::parse(read_file(mf));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::DataError, mf.string() + ": " + e.what());
  }
  ModelBundle m;
  try {
    m.dt = j.at("dt").get<double>();
    for (const auto& lj : j.at("levels")) {
      LevelSpec s;
      s.name = lj.at("name").get<std::string>();
      s.stream = parse_enum(lj.at("stream").get<std::string>(), stream_names(), "stream");
      if (!lj.at("backward_map").is_null()) {
        BackwardMap bm;
        bm.kind = parse_enum(lj.at("backward_map").at("kind").get<std::string>(), backmap_names(), "kind");
        bm.scale = lj.at("backward_map").at("scale").get<double>();
        s.to_upper = bm;
      }
      m.fitted.push_back(load_component(dir, lj.at("component")));
      s.component = m.fitted.back().config;
      m.specs.push_back(std::move(s));
    }
    for (const auto& c : j.at("coupling")) m.coupling.push_back(detail::read_coupling(c, "coupling"));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::DataError, mf.string() + ": " + e.what());
  }
  if (m.fitted.empty()) fail(Errc::DataError, mf.string() + ": no levels");
  return m;
}

inline fs::path model_dir(const RunContext& ctx) { return ctx.out / "model"; }

/// Energy-score feature on the top level of stacked states.
inline WindowFeature top_feature(const ModelBundle& m, Eigen::Index slice) {
  Eigen::Index off = 0;
  for (std::size_t l = 0; l + 1 < m.fitted.size(); ++l) off += m.fitted[l].dim;
  const Eigen::Index len = m.fitted.back().dim;
  return block_feature(off, slice > 0 ? std::min(slice, len) : len);
}

// ---------------------------------------------------------------------------
// fit / generate / validate

inline std::vector<fs::path> cmd_fit(const ExperimentConfig& cfg, const RunContext& ctx) {
  const Dataset ds = load_dataset(cfg, ctx.seed);
  const double dt = cfg.dgp.step();
  ModelBundle m;
  m.specs = cfg.levels;
  m.coupling = cfg.coupling;
  m.dt = dt;
  const auto data = derive_levels(ds.train, m.specs, dt);
  m.fitted = fit_levels(data, m.specs);
  const fs::path dir = model_dir(ctx);
  save_model_dir(dir, m, ctx.seed);
  std::vector<fs::path> written{dir / "manifest.json"};
  bool cov = false;
  for (const auto& s : m.specs) cov = cov || s.stream != LevelStream::state;
  if (cov) {
    std::vector<DescriptorPath> desc;
    for (const auto& p : ds.train) desc.push_back(cumulative_avg_cov(p, dt));
    write_descriptors(dir / "descriptors.csv", desc);
    written.push_back(dir / "descriptors.csv");
  }
  std::size_t atoms = 0;
  for (const auto& f : m.fitted) atoms = std::max(atoms, static_cast<std::size_t>(f.size()));
  ctx.note("fit: " + std::to_string(m.fitted.size()) + " level(s), " + std::to_string(atoms) + " atoms");
  return written;
}

inline std::vector<fs::path> cmd_generate(const ExperimentConfig& cfg, const RunContext& ctx) {
  const ModelBundle m = load_model_dir(model_dir(ctx));
  const Dataset ds = load_dataset(cfg, ctx.seed);
  const auto& src = ds.val.empty() ? ds.train : ds.val;
  const auto data = derive_levels(src, m.specs, m.dt);
  const auto jl = m.joint();
  const std::size_t top = m.specs.size() - 1;
  std::vector<CoarsePath> out(src.size());
  parallel_for(src.size(), ctx.threads, [&](std::size_t p) {
    const auto n = data.back()[p].states.size();
    const auto W = static_cast<std::size_t>(cfg.scoring.warm);
    if (W >= n) fail(Errc::TooShort, "warm-start length must be shorter than the path");
    std::vector<std::vector<Vec>> warm(m.specs.size());
    for (std::size_t l = 0; l < m.specs.size(); ++l)
      warm[l].assign(data[l][p].states.begin(), data[l][p].states.begin() + static_cast<std::ptrdiff_t>(W));
    const int horizon = cfg.scoring.horizon > 0 ? cfg.scoring.horizon : static_cast<int>(n);
    Rng rng = make_stream(ctx.seed, 200000 + p);
    out[p] = generate_joint(jl, m.coupling, warm, horizon, rng)[top];
  });
  const fs::path f = ctx.out / "generated_paths.csv";
  write_paths(f, out);
  ctx.note("generate: " + std::to_string(out.size()) + " path(s)");
  return {f};
}

inline std::vector<fs::path> cmd_validate(const ExperimentConfig& cfg, const RunContext& ctx) {
  const ModelBundle m = load_model_dir(model_dir(ctx));
  const Dataset ds = load_dataset(cfg, ctx.seed);
  const auto data = derive_levels(validation_paths(ds), m.specs, m.dt);
  const auto paths = stacked_paths(data, m.specs.size());
  const JointModel model(m.joint(), m.coupling, m.dims());
  EnergyScoreConfig e = cfg.energy();
  int pm = 0;
  for (const auto& f : m.fitted) pm = std::max(pm, f.config.p_max);
  if (cfg.scoring.p_mem == 0) e.p_mem = pm + 1;
  const WindowFeature feat = top_feature(m, cfg.scoring.slice);
  std::vector<ScoreRow> rows(paths.size());
  parallel_for(paths.size(), ctx.threads, [&](std::size_t p) {
    Rng r = make_stream(ctx.seed, p);
    const PathScore s = energy_score_path(model, paths[p], e, r(), feat);
    rows[p] = ScoreRow{"path" + std::to_string(p), "energy", s.score, s.n_windows, ctx.seed};
  });
  double mean = 0.0;
  int windows = 0;
  for (const auto& r : rows) {
    mean += r.value;
    windows += r.n_windows;
  }
  mean /= static_cast<double>(rows.size());
  rows.push_back(ScoreRow{"all", "energy_mean", mean, windows, ctx.seed});
  const fs::path f = ctx.out / "scores.csv";
  write_scores(f, rows);
  ctx.note("validate: mean energy score " + format_double(mean));
  return {f};
}

// ---------------------------------------------------------------------------
// sweep-dim

inline const std::vector<std::string>& sweep_header() {
  static const std::vector<std::string> h{"d",          "seed",   "variant",       "score",   "bayes_floor",
                                          "ratio",      "val_score", "bandwidth",  "memory",  "pcr_threshold",
                                          "n_atoms",    "n_windows"};
  return h;
}

inline std::vector<fs::path> cmd_sweep_dim(const ExperimentConfig& cfg, const RunContext& ctx) {
  if (cfg.dgp.kind != DataKind::hopf) fail(Errc::ConfigError, "sweep-dim needs dgp.kind = 'hopf'");
  struct Cell {
    int d;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (int d : cfg.sweep.dims)
    for (auto s : cfg.seeds) cells.push_back({d, s});
  std::vector<HopfCellResult> res(cells.size());
  std::mutex mu;
  parallel_for(cells.size(), ctx.threads, [&](std::size_t i) {
    res[i] = run_hopf_cell(cfg.sweep.hopf, cells[i].d, cells[i].seed, cfg.sweep.variants);
    std::lock_guard<std::mutex> lock(mu);
    std::string line = "sweep-dim: d=" + std::to_string(cells[i].d) + " seed=" + std::to_string(cells[i].seed) +
                       " floor=" + format_double(res[i].bayes_floor);
    for (const auto& v : res[i].variants) line += " " + v.variant + "=" + format_double(v.score);
    ctx.note(line);
  });

  CsvTable table{sweep_header(), {}};
  std::vector<ScoreRow> scores;
  for (const auto& r : res) {
    for (const auto& v : r.variants) {
      table.rows.push_back({std::to_string(r.d), std::to_string(r.seed), v.variant, format_double(v.score),
                            format_double(r.bayes_floor), format_double(v.score / r.bayes_floor),
                            format_double(v.val_score), format_double(v.bandwidth), std::to_string(v.memory),
                            format_double(v.pcr_threshold), std::to_string(v.n_atoms), std::to_string(v.n_windows)});
      scores.push_back({"d" + std::to_string(r.d) + "/" + v.variant, "energy", v.score, v.n_windows, r.seed});
    }
    scores.push_back({"d" + std::to_string(r.d) + "/bayes_floor", "energy", r.bayes_floor, 0, r.seed});
  }

  // Plot data: mean and standard error across seeds per (d, series).
  CsvTable plot{{"series", "x", "y", "err"}, {}};
  std::vector<std::string> series = cfg.sweep.variants;
  series.push_back("bayes_floor");
  for (const auto& name : series) {
    for (int d : cfg.sweep.dims) {
      std::vector<double> ys;
      for (const auto& r : res) {
        if (r.d != d) continue;
        if (name == "bayes_floor") ys.push_back(r.bayes_floor);
        for (const auto& v : r.variants)
          if (v.variant == name) ys.push_back(v.score);
      }
      double mean = 0.0, var = 0.0;
      for (double y : ys) mean += y;
      mean /= static_cast<double>(ys.size());
      for (double y : ys) var += (y - mean) * (y - mean);
      const double se = ys.size() > 1 ? std::sqrt(var / static_cast<double>(ys.size() - 1) / static_cast<double>(ys.size())) : 0.0;
      plot.rows.push_back({name, std::to_string(d), format_double(mean), format_double(se)});
    }
  }
  write_csv(ctx.out / "sweep.csv", table);
  write_csv(ctx.out / "sweep_plot.csv", plot);
  write_scores(ctx.out / "scores.csv", scores);
  return {ctx.out / "sweep.csv", ctx.out / "sweep_plot.csv", ctx.out / "scores.csv"};
}

// ---------------------------------------------------------------------------
// heston

inline HestonExperimentSpec heston_spec(const ExperimentConfig& cfg) {
  if (cfg.dgp.kind != DataKind::heston) fail(Errc::ConfigError, "heston needs dgp.kind = 'heston'");
  HestonExperimentSpec s;
  s.dgp = cfg.dgp.heston;
  s.n_train = cfg.dgp.n_train;
  s.n_val = cfg.dgp.n_val;
  s.warm = cfg.scoring.warm;
  s.levels = cfg.levels;
  s.coupling = cfg.coupling;
  s.baseline = cfg.baseline;
  s.baseline.dt = s.dgp.dt;
  try {
    s.validate();
  } catch (const Error& e) {
    fail(Errc::ConfigError, std::string("heston: ") + e.what());
  }
  return s;
}

inline std::vector<fs::path> cmd_heston(const ExperimentConfig& cfg, const RunContext& ctx) {
  const HestonExperimentSpec spec = heston_spec(cfg);
  CsvTable est{{"seed", "path_id", "source", "kappa", "theta", "xi", "rho", "kappa_clamped"}, {}};
  CsvTable sum{{"seed", "parameter", "ed_trsbts", "ed_baseline", "trsbts_closer"}, {}};
  static const char* names[4] = {"kappa", "theta", "xi", "rho"};
  for (auto seed : cfg.seeds) {
    const HestonRepResult r = run_heston_rep(spec, seed, ctx.threads);
    auto emit = [&](const std::vector<HestonEstimate>& es, const char* source) {
      for (std::size_t p = 0; p < es.size(); ++p)
        est.rows.push_back({std::to_string(seed), std::to_string(p), source, format_double(es[p].kappa),
                            format_double(es[p].theta), format_double(es[p].xi), format_double(es[p].rho),
                            es[p].kappa_clamped ? "1" : "0"});
    };
    emit(r.real, "real");
    emit(r.trsbts, "trsbts");
    emit(r.baseline, "baseline");
    for (int k = 0; k < 4; ++k)
      sum.rows.push_back({std::to_string(seed), names[k], format_double(r.ed_trsbts[static_cast<std::size_t>(k)]),
                          format_double(r.ed_baseline[static_cast<std::size_t>(k)]),
                          r.ed_trsbts[static_cast<std::size_t>(k)] < r.ed_baseline[static_cast<std::size_t>(k)] ? "1" : "0"});
    ctx.note("heston: seed=" + std::to_string(seed) + " theta ED trsbts=" + format_double(r.ed_trsbts[1]) +
             " baseline=" + format_double(r.ed_baseline[1]));
  }
  write_csv(ctx.out / "heston_estimates.csv", est);
  write_csv(ctx.out / "heston_summary.csv", sum);
  return {ctx.out / "heston_estimates.csv", ctx.out / "heston_summary.csv"};
}

// ---------------------------------------------------------------------------
// ladder

inline std::vector<fs::path> cmd_ladder(const ExperimentConfig& cfg, const RunContext& ctx) {
  cfg.sweep.ladder.validate();
  const Dataset ds = load_dataset(cfg, ctx.seed);
  const LadderResult r = run_ladder(cfg.levels, ds.train, validation_paths(ds), cfg.dgp.step(), cfg.sweep.ladder, ctx.seed);
  Json sel;
  sel["model"] = Json{{"levels", levels_to_json(r.levels)}};
  sel["coupling"] = coupling_to_json(r.coupling);
  write_file_atomic(ctx.out / "selected.json", sel.dump(2) + "\n");
  std::vector<ScoreRow> rows;
  for (int ph = 0; ph < 3; ++ph)
    if (r.evaluated[static_cast<std::size_t>(ph)] > 0)
      rows.push_back({"phase" + std::to_string(ph + 1) + "/candidates=" +
                          std::to_string(r.evaluated[static_cast<std::size_t>(ph)]),
                      "energy", r.scores[static_cast<std::size_t>(ph)], 0, ctx.seed});
  write_scores(ctx.out / "ladder_scores.csv", rows);
  ctx.note("ladder: evaluated " + std::to_string(r.evaluated[0]) + "/" + std::to_string(r.evaluated[1]) + "/" +
           std::to_string(r.evaluated[2]) + " candidates");
  return {ctx.out / "selected.json", ctx.out / "ladder_scores.csv"};
}

// ---------------------------------------------------------------------------
// select-reference

/// Per-path, per-step covariance trajectories of one candidate.
inline ReferenceFamily candidate_family(const ReferenceCandidate& c, const std::vector<CoarsePath>& paths, double dt) {
  const Eigen::Index d = paths.front().dim();
  ReferenceFamily fam;
  auto constant = [&](const SymMatrix& s) {
    for (const auto& p : paths) fam.emplace_back(p.size() - 1, s);
  };
  if (c.kind == "constant") {
    if (c.matrix) {
      if (c.matrix->rows() != d) fail(Errc::ConfigError, "candidate '" + c.name + "' matrix has the wrong size");
      constant(SymMatrix(*c.matrix * c.scale));
    } else {
      constant(SymMatrix::identity(d) * c.scale);
    }
  } else if (c.kind == "empirical") {
    Mat s = Mat::Zero(d, d);
    double n = 0.0;
    for (const auto& p : paths)
      for (std::size_t t = 0; t + 1 < p.size(); ++t) {
        const Vec inc = p.states[t + 1] - p.states[t];
        s += inc * inc.transpose();
        n += 1.0;
      }
    constant(SymMatrix(s * (c.scale / (n * dt))));
  } else {
    for (const auto& p : paths) {
      const DescriptorPath desc = cumulative_avg_cov(p, dt);
      std::vector<SymMatrix> traj;
      // the rate on step t uses information up to t; the first step reuses the first descriptor
      for (std::size_t t = 0; t + 1 < p.size(); ++t)
        traj.push_back(desc.descriptors[t == 0 ? 0 : t - 1] * c.scale);
      fam.push_back(std::move(traj));
    }
  }
  return fam;
}

inline std::vector<fs::path> cmd_select_reference(const ExperimentConfig& cfg, const RunContext& ctx) {
  if (cfg.candidates.empty()) fail(Errc::ConfigError, "select-reference needs 'model.candidates'");
  const Dataset ds = load_dataset(cfg, ctx.seed);
  const double dt = cfg.dgp.step();
  IncrementSet inc;
  for (const auto& p : ds.train) {
    if (p.size() < 2) fail(Errc::TooShort, "select-reference: path with fewer than two states");
    std::vector<Vec> v;
    for (std::size_t t = 0; t + 1 < p.size(); ++t) v.push_back(p.states[t + 1] - p.states[t]);
    inc.push_back(std::move(v));
  }
  std::vector<ReferenceFamily> fams;
  for (const auto& c : cfg.candidates) fams.push_back(candidate_family(c, ds.train, dt));
  EntropicConfig ec;
  ec.alpha = cfg.scoring.entropic_alpha;
  ec.eps = cfg.scoring.entropic_eps;
  const std::size_t best = entropic_select(fams, inc, dt, ec);
  std::vector<ScoreRow> rows;
  Json sel;
  sel["selected"] = cfg.candidates[best].name;
  sel["index"] = best;
  Json arr = Json::array();
  for (std::size_t f = 0; f < fams.size(); ++f) {
    const double q = entropic_validate(fams[f], inc, dt, ec);
    rows.push_back({cfg.candidates[f].name, "entropic_nll_quantile", q, static_cast<int>(inc.size()), ctx.seed});
    arr.push_back(Json{{"name", cfg.candidates[f].name}, {"score", q}});
  }
  sel["candidates"] = std::move(arr);
  write_file_atomic(ctx.out / "selection.json", sel.dump(2) + "\n");
  write_scores(ctx.out / "scores.csv", rows);
  ctx.note("select-reference: " + cfg.candidates[best].name);
  return {ctx.out / "selection.json", ctx.out / "scores.csv"};
}

}  // namespace trsbts
