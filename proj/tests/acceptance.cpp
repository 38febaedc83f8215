// Acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero
// when any criterion fails. Indented lines are supporting detail.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "trsbts/experiments.hpp"

using namespace trsbts;

namespace {

struct Outcome {
  bool pass = false;
  std::string summary;
  std::vector<std::string> detail;
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Criteria 1 and 2: ambient-dimension sweep

struct SweepCells {
  std::map<int, std::vector<HopfCellResult>> by_dim;
};

SweepCells run_sweep(const std::vector<int>& dims, const std::vector<std::uint64_t>& seeds) {
  const HopfSweepSpec spec;
  SweepCells out;
  for (int d : dims)
    for (auto s : seeds) out.by_dim[d].push_back(run_hopf_cell(spec, d, s, {"classic_no_pcr", "classic_pcr"}));
  return out;
}

double variant_score(const HopfCellResult& c, const std::string& v) {
  for (const auto& r : c.variants)
    if (r.variant == v) return r.score;
  return NAN;
}

double mean_over(const std::vector<HopfCellResult>& cells, const std::function<double(const HopfCellResult&)>& f) {
  double s = 0.0;
  for (const auto& c : cells) s += f(c);
  return s / static_cast<double>(cells.size());
}

Outcome criterion1(const SweepCells& sw) {
  Outcome o;
  bool a = true, atoms_ok = true;
  for (const auto& [d, cells] : sw.by_dim) {
    for (const auto& c : cells) {
      const double pcr = variant_score(c, "classic_pcr"), raw = variant_score(c, "classic_no_pcr");
      a = a && pcr <= 2.5 * c.bayes_floor;
      for (const auto& v : c.variants) atoms_ok = atoms_ok && v.n_atoms >= 1400 && v.n_atoms <= 1600;
      o.detail.push_back("d=" + std::to_string(d) + " seed=" + std::to_string(c.seed) + " floor=" + fmt(c.bayes_floor) +
                         " no_pcr=" + fmt(raw) + " (" + fmt(raw / c.bayes_floor, 3) + "x) pcr=" + fmt(pcr) + " (" +
                         fmt(pcr / c.bayes_floor, 3) + "x) M=" + std::to_string(c.variants.front().n_atoms));
    }
  }
  auto excess = [&](int d) {
    return mean_over(sw.by_dim.at(d), [](const HopfCellResult& c) { return variant_score(c, "classic_no_pcr") - c.bayes_floor; });
  };
  const double e4 = excess(4), e64 = excess(64);
  const bool b = e64 >= 1.5 * e4;
  const double m_raw = mean_over(sw.by_dim.at(4), [](const HopfCellResult& c) { return variant_score(c, "classic_no_pcr"); });
  const double m_pcr = mean_over(sw.by_dim.at(4), [](const HopfCellResult& c) { return variant_score(c, "classic_pcr"); });
  const double rel = std::abs(m_raw - m_pcr) / std::min(m_raw, m_pcr);
  const bool c = rel <= 0.2;
  o.pass = a && b && c && atoms_ok;
  o.summary = std::string("(a) pcr <= 2.5x floor at every cell: ") + (a ? "yes" : "no") +
              "; (b) no_pcr excess d=64/d=4 = " + fmt(e64 / e4, 3) + " (need >= 1.5)" +
              "; (c) d=4 relative gap = " + fmt(100 * rel, 3) + "% (need <= 20%)" + (atoms_ok ? "" : "; atom count off");
  return o;
}

Outcome criterion2(const SweepCells& sw) {
  Outcome o;
  const auto& cells = sw.by_dim.at(4);
  const double m_raw = mean_over(cells, [](const HopfCellResult& c) { return variant_score(c, "classic_no_pcr"); });
  const double m_pcr = mean_over(cells, [](const HopfCellResult& c) { return variant_score(c, "classic_pcr"); });
  auto in = [](double v) { return v >= 0.05 && v <= 0.09; };
  o.pass = in(m_raw) && in(m_pcr);
  o.summary = "d=4 seed-mean scores no_pcr=" + fmt(m_raw) + " pcr=" + fmt(m_pcr) + " (band [0.05, 0.09])";
  return o;
}

// ---------------------------------------------------------------------------
// Criterion 3: Heston recovery direction

Outcome criterion3() {
  Outcome o;
  HestonExperimentSpec spec;
  spec.dgp.T = 128;
  spec.dgp.dt = 1.0 / 128;
  spec.n_train = 32;
  spec.n_val = 16;
  spec.warm = 32;
  spec.levels = default_heston_levels(spec.dgp.dt);
  spec.baseline = default_heston_baseline(spec.dgp.dt);
  int wins = 0;
  HestonRepResult first;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto t0 = std::chrono::steady_clock::now();
    HestonRepResult r = run_heston_rep(spec, seed);
    const bool win = r.ed_trsbts[1] < r.ed_baseline[1];
    wins += win;
    o.detail.push_back("seed=" + std::to_string(seed) + " theta ED trsbts=" + fmt(r.ed_trsbts[1]) +
                       " baseline=" + fmt(r.ed_baseline[1]) + (win ? " (closer)" : " (not closer)") + " [" +
                       fmt(seconds_since(t0), 3) + "s]");
    if (seed == 1) first = std::move(r);
  }
  const HestonRepResult again = run_heston_rep(spec, 1);
  bool same = again.ed_trsbts == first.ed_trsbts && again.ed_baseline == first.ed_baseline;
  for (std::size_t v = 0; v < first.synthetic.size(); ++v)
    same = same && again.synthetic[v].states == first.synthetic[v].states &&
           again.synthetic_baseline[v].states == first.synthetic_baseline[v].states;
  o.pass = same && wins >= 3;
  o.summary = "theta cloud closer than the identity-reference baseline in " + std::to_string(wins) +
              "/5 repetitions (need >= 3); rerun bitwise identical: " + (same ? "yes" : "no");
  return o;
}

// ---------------------------------------------------------------------------
// Criterion 4: invariant suites

Outcome criterion4() {
  struct Suite {
    const char* name;
    const char* binary;
    const char* filter;
  };
  const std::vector<Suite> suites{
      {"potential normalization", TRSBTS_TEST_BRIDGE, "EmpiricalPotential.NormalizedAtStart:KernelRatio.EqualsOneAtIntervalStart"},
      {"drift vs finite difference", TRSBTS_TEST_BRIDGE, "EmpiricalDrift.FiniteDifferenceOracle"},
      {"boundary-drift diagonal consistency", TRSBTS_TEST_BRIDGE, "BoundaryDrift.DiagonalLimitConsistency"},
      {"epsilon coherence on-leaf", TRSBTS_TEST_BRIDGE, "Potential.EpsilonCoherenceOnLeaf"},
      {"off-leaf exponential collapse", TRSBTS_TEST_BRIDGE, "Potential.OffLeafCollapse"},
      {"PSD projection idempotent and nearest", TRSBTS_TEST_LINALG, "PsdProject.*"},
      {"softmax shift invariance", TRSBTS_TEST_CONDITIONING, "StableSoftmax.ShiftInvariance*"},
      {"energy-score non-negativity fuzz", TRSBTS_TEST_SCORING, "EnergyScoreWindow.NonNegativityFuzz"},
      {"entropic NLL density oracle", TRSBTS_TEST_SCORING, "EntropicNll.DensityOracle"},
      {"bridge-mean stability bound", TRSBTS_TEST_REFERENCE, "FrozenBridgeMean.StabilityBound"},
      {"vech round trip", TRSBTS_TEST_LINALG, "Vech.RoundTripExact"},
      {"golden generate_single / generate_joint", TRSBTS_TEST_GENERATOR, "*SeededRunMatchesGolden"},
  };
  Outcome o;
  int passed = 0;
  for (const auto& s : suites) {
    // A filter matching nothing also exits 0, so the run must report passed tests.
    const std::string cmd = std::string(s.binary) + " --gtest_brief=1 --gtest_filter='" + s.filter + "' 2>&1";
    std::string out;
    int status = -1;
    if (FILE* pipe = popen(cmd.c_str(), "r")) {
      char buf[512];
      while (std::fgets(buf, sizeof buf, pipe)) out += buf;
      status = pclose(pipe);
    }
    int ran = 0;
    if (const auto at = out.find("[  PASSED  ] "); at != std::string::npos) ran = std::atoi(out.c_str() + at + 13);
    const bool ok = status == 0 && ran > 0;
    passed += ok;
    o.detail.push_back(std::string(ok ? "ok   " : "FAIL ") + s.name + " [" + s.filter + "] " + std::to_string(ran) + " test(s)");
  }
  o.pass = passed == static_cast<int>(suites.size());
  o.summary = std::to_string(passed) + "/" + std::to_string(suites.size()) + " invariant suites pass";
  return o;
}

// ---------------------------------------------------------------------------
// Criterion 5: kernel conditional mean on a Gaussian autoregression

Outcome criterion5() {
  Outcome o;
  Mat A(2, 2);
  A << 0.8, 0.15, -0.1, 0.6;
  Mat C(2, 2);
  C << 0.5, 0.0, 0.2, 0.4;
  const double dt = 0.1;
  auto simulate = [&](std::uint64_t seed, int n) {
    Rng rng = make_stream(seed, 0);
    CoarsePath p;
    Vec x = Vec::Zero(2);
    for (int t = 0; t < 200; ++t) x = A * x + C * standard_normal(rng, 2);  // burn-in
    for (int t = 0; t < n; ++t) {
      p.states.push_back(x);
      x = A * x + C * standard_normal(rng, 2);
    }
    return p;
  };
  const CoarsePath train = simulate(501, 10001);  // 10^4 one-step atoms
  std::vector<CoarsePath> val;
  for (std::uint64_t s = 0; s < 4; ++s) val.push_back(simulate(600 + s, 150));

  ComponentConfig c;
  c.dt = dt;
  c.p_max = 0;
  c.mode = ConditioningMode::projected;
  c.kernel.variant = KernelVariant::gaussian;
  c.reference = ReferenceKind::empirical;
  c.bridge.n_inner = 2;
  LadderSpec ls;
  // Phase-2 grid reaching down to a tenth of a stationary deviation; the
  // ladder picks the bandwidth by validation energy score.
  ls.state_bandwidths = {0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0};
  ls.state_memories = {0};
  ls.L = 16;
  ls.stride = 3;
  const LadderResult lr =
      run_ladder({LevelSpec{"state", LevelStream::state, c, std::nullopt}}, {train}, val, dt, ls, 77);
  const ComponentConfig tuned = lr.levels.back().component;
  const std::vector<LevelSeries> series{LevelSeries{train.states, {}, {}}};
  const FittedComponent fc = fit_component(series, tuned);

  // stationary standard deviations for choosing bulk queries
  Mat S = Mat::Zero(2, 2);
  for (int k = 0; k < 500; ++k) S = A * S * A.transpose() + C * C.transpose();
  const Vec sd = S.diagonal().cwiseSqrt();
  int ok = 0, total = 0;
  double worst = 0.0;
  for (double a : {-0.5, 0.0, 0.5})
    for (double b : {-0.5, 0.0, 0.5}) {
      Vec q(2);
      q << a * sd(0), b * sd(1);
      const std::vector<Vec> hist{q};
      const auto sr = compute_surrogate(fc, build_summary(tuned, hist, {}, fc.frozen_reference, Vec(), std::nullopt,
                                                          fc.stores_cumulants()));
      const Vec m = sr.surrogate.mean();
      const Vec truth = (A - Mat::Identity(2, 2)) * q;  // conditional mean increment
      for (Eigen::Index k = 0; k < 2; ++k) {
        double var = 0.0;
        for (Eigen::Index j = 0; j < sr.surrogate.size(); ++j) {
          const double w = sr.surrogate.weights(j);
          const double r = sr.surrogate.atoms(k, j) - m(k);
          var += w * w * r * r;
        }
        const double z = std::abs(m(k) - truth(k)) / std::sqrt(var);
        worst = std::max(worst, z);
        ok += z <= 3.0;
        ++total;
      }
    }
  o.pass = ok == total;
  o.summary = std::to_string(ok) + "/" + std::to_string(total) + " conditional-mean coordinates within 3 MC-sigma at M=" +
              std::to_string(fc.size()) + ", h=" + fmt(tuned.kernel.bandwidth) + " from the ladder grid (worst |z| = " +
              fmt(worst, 3) + ")";
  return o;
}

// ---------------------------------------------------------------------------
// Criterion 6: entropic reference selection

Outcome criterion6() {
  Outcome o;
  Mat truth(2, 2);
  truth << 1.0, 0.6, 0.6, 0.8;
  Mat flipped(2, 2);
  flipped << 1.0, -0.6, -0.6, 0.8;
  const SymMatrix t(truth);
  const double dt = 0.02;
  const int paths = 50, steps = 100;
  auto family = [&](const SymMatrix& s) {
    return ReferenceFamily(paths, std::vector<SymMatrix>(steps, s));
  };
  const std::vector<ReferenceFamily> cands{family(SymMatrix::identity(2)), family(t), family(t * 2.0),
                                           family(t * 0.5), family(SymMatrix(flipped))};
  const Mat f = sym_sqrt(t).matrix() * std::sqrt(dt);
  int hits = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng = make_stream(6000, trial);
    IncrementSet obs(paths);
    for (auto& p : obs)
      for (int k = 0; k < steps; ++k) p.push_back(f * standard_normal(rng, 2));
    hits += entropic_select(cands, obs, dt, EntropicConfig{}) == 1;
  }
  o.pass = hits >= 95;
  o.summary = "true family selected in " + std::to_string(hits) + "/100 trials (need >= 95; 5 candidates)";
  return o;
}

void report(int id, const Outcome& o) {
  std::cout << "CRITERION " << id << ' ' << (o.pass ? "PASS" : "FAIL") << ": " << o.summary << '\n';
  for (const auto& d : o.detail) std::cout << "    " << d << '\n';
  std::cout.flush();
}

}  // namespace

int main() {
  bool all = true;
  auto timed = [&](int id, const std::function<Outcome()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o = f();
    o.detail.push_back("elapsed " + fmt(seconds_since(t0), 3) + "s");
    report(id, o);
    all = all && o.pass;
  };

  const auto t0 = std::chrono::steady_clock::now();
  const SweepCells sweep = run_sweep({4, 16, 64}, {1, 2});
  const double sweep_secs = seconds_since(t0);
  timed(1, [&] {
    Outcome o = criterion1(sweep);
    o.detail.push_back("sweep " + fmt(sweep_secs, 3) + "s");
    return o;
  });
  timed(2, [&] { return criterion2(sweep); });
  timed(3, criterion3);
  timed(4, criterion4);
  timed(5, criterion5);
  timed(6, criterion6);

  // Seed 3 was not used when the generator defaults were chosen.
  const SweepCells held = run_sweep({4, 64}, {3});
  for (const auto& [d, cells] : held.by_dim)
    for (const auto& c : cells)
      std::cout << "    info: held-out seed 3, d=" << d << " floor=" << fmt(c.bayes_floor)
                << " no_pcr=" << fmt(variant_score(c, "classic_no_pcr")) << " pcr=" << fmt(variant_score(c, "classic_pcr"))
                << '\n';
  std::cout << (all ? "ALL CRITERIA PASS" : "SOME CRITERIA FAIL") << '\n';
  return all ? 0 : 1;
}
