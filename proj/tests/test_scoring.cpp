#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "test_util.hpp"
#include "trsbts/scoring.hpp"

using namespace trsbts;
using namespace trsbts::testing;

TEST(EnergyScoreWindow, Examples) {
  Rng rng = make_stream(50, 0);
  const Vec z = random_vec(rng, 4), u = random_vec(rng, 4);
  const std::vector<Vec> one{z};
  EXPECT_EQ(energy_score_window(one, z), 0.0);
  const std::vector<Vec> two{z - u, z + u};
  EXPECT_NEAR(energy_score_window(two, z), u.norm() / 2.0, 1e-12);
  EXPECT_THROW((void)energy_score_window(two, Vec::Zero(3)), Error);
}

TEST(EnergyScoreWindow, DoubleSumOracle) {
  Rng rng = make_stream(51, 0);
  std::vector<Vec> ens;
  for (int l = 0; l < 50; ++l) ens.push_back(random_vec(rng, 6));
  const Vec z = random_vec(rng, 6);
  double fit = 0.0, spread = 0.0;
  for (const auto& a : ens) {
    fit += (a - z).norm();
    for (const auto& b : ens) spread += (a - b).norm();
  }
  const double oracle = fit / 50.0 - spread / (2.0 * 2500.0);
  EXPECT_NEAR(energy_score_window(ens, z), oracle, 1e-12);
}

TEST(EnergyScoreWindow, NonNegativityFuzz) {
  Rng rng = make_stream(52, 0);
  for (int trial = 0; trial < 10000; ++trial) {
    const int L = 1 + trial % 12;
    const Eigen::Index q = 1 + trial % 7;
    const double scale = std::pow(10.0, uniform(rng, -3.0, 3.0));
    std::vector<Vec> ens;
    for (int l = 0; l < L; ++l) ens.push_back(random_vec(rng, q) * scale);
    const Vec z = random_vec(rng, q) * scale * uniform(rng, 0.0, 3.0);
    EXPECT_GE(energy_score_window(ens, z), -1e-12 * scale);
  }
}

TEST(EnergyScoreWindow, ProprietyDirection) {
  Rng rng = make_stream(53, 0);
  double diff_sum = 0.0, diff_sq = 0.0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    const Vec z = random_vec(rng, 2);
    std::vector<Vec> truth, shifted;
    for (int l = 0; l < 32; ++l) {
      truth.push_back(random_vec(rng, 2));
      shifted.push_back(random_vec(rng, 2) + Vec::Constant(2, 0.7));
    }
    const double d = energy_score_window(shifted, z) - energy_score_window(truth, z);
    diff_sum += d;
    diff_sq += d * d;
  }
  const double mean = diff_sum / reps;
  const double se = std::sqrt((diff_sq / reps - mean * mean) / reps);
  EXPECT_GT(mean + 3.0 * se, 0.0);
  EXPECT_GT(mean, 0.0);
}

namespace {

struct EchoModel {
  const CoarsePath* path;
  std::vector<Vec> continue_path(std::span<const Vec> memory, int K, Rng&) const {
    // locate the memory block in the path and echo the true future
    for (std::size_t i = 0; i + memory.size() <= path->size(); ++i) {
      if (path->states[i + memory.size() - 1] == memory.back()) {
        return {path->states.begin() + static_cast<std::ptrdiff_t>(i + memory.size()),
                path->states.begin() + static_cast<std::ptrdiff_t>(i + memory.size() + static_cast<std::size_t>(K))};
      }
    }
    return {};
  }
};

struct Ar1Model {
  double phi, sigma;
  std::vector<Vec> continue_path(std::span<const Vec> memory, int K, Rng& rng) const {
    std::vector<Vec> out;
    Vec x = memory.back();
    for (int k = 0; k < K; ++k) {
      x = phi * x + sigma * standard_normal(rng, x.size());
      out.push_back(x);
    }
    return out;
  }
};

}  // namespace

TEST(EnergyScorePath, EchoModelScoresZero) {
  Rng rng = make_stream(54, 0);
  CoarsePath p;
  for (int t = 0; t < 40; ++t) p.states.push_back(random_vec(rng, 2));
  EnergyScoreConfig cfg;
  cfg.p_mem = 2;
  cfg.K = 3;
  cfg.L = 4;
  const PathScore s = energy_score_path(EchoModel{&p}, p, cfg, 7);
  EXPECT_EQ(s.score, 0.0);
  EXPECT_EQ(s.n_windows, static_cast<int>(admissible_windows(40, cfg).size()));
}

TEST(EnergyScorePath, WindowArithmetic) {
  EnergyScoreConfig cfg;
  cfg.p_mem = 3;
  cfg.K = 2;
  cfg.stride = 1;
  const auto w = admissible_windows(10, cfg);
  ASSERT_FALSE(w.empty());
  EXPECT_EQ(w.front(), 2);
  EXPECT_EQ(w.back(), 7);
  cfg.stride = 10;
  EXPECT_EQ(admissible_windows(10, cfg).size(), 1u);
  CoarsePath tiny{{Vec::Zero(1), Vec::Zero(1)}};
  cfg.K = 5;
  try {
    (void)energy_score_path(Ar1Model{0.5, 1.0}, tiny, cfg, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::TooShort);
  }
}

TEST(EnergyScorePath, TrueTransitionMatchesBayesOracle) {
  const double phi = 0.8, sigma = 0.5;
  Rng rng = make_stream(55, 0);
  CoarsePath p{{Vec::Zero(2)}};
  for (int t = 1; t < 400; ++t) p.states.push_back(phi * p.states.back() + sigma * standard_normal(rng, 2));
  EnergyScoreConfig cfg;
  cfg.L = 200;
  const PathScore s = energy_score_path(Ar1Model{phi, sigma}, p, cfg, 11);
  // MC oracle of E|X - z| - 0.5 E|X - X'| with two independent samples per window
  Rng orng = make_stream(56, 0);
  double oracle = 0.0;
  int n = 0;
  for (int i : admissible_windows(static_cast<int>(p.size()), cfg)) {
    const Vec mean = phi * p.states[static_cast<std::size_t>(i)];
    const Vec& z = p.states[static_cast<std::size_t>(i) + 1];
    double acc = 0.0;
    const int draws = 2000;
    for (int k = 0; k < draws; ++k) {
      const Vec x = mean + sigma * standard_normal(orng, 2);
      const Vec xp = mean + sigma * standard_normal(orng, 2);
      acc += (x - z).norm() - 0.5 * (x - xp).norm();
    }
    oracle += acc / draws;
    ++n;
  }
  oracle /= n;
  EXPECT_NEAR(s.score, oracle, 0.05 * oracle);
}

TEST(EnergyScorePath, SqrtQNormalization) {
  Rng rng = make_stream(57, 0);
  CoarsePath p;
  for (int t = 0; t < 30; ++t) p.states.push_back(random_vec(rng, 4));
  EnergyScoreConfig cfg;
  cfg.K = 2;
  cfg.L = 8;
  const PathScore raw = energy_score_path(Ar1Model{0.3, 1.0}, p, cfg, 3);
  cfg.normalize_by_sqrt_q = true;
  const PathScore norm = energy_score_path(Ar1Model{0.3, 1.0}, p, cfg, 3);
  EXPECT_NEAR(norm.score, raw.score / 2.0, 1e-12);
}

TEST(EnrichedFeatures, Examples) {
  const std::vector<Vec> zero_window(3, Vec::Zero(2));
  EXPECT_EQ(enriched_features(Vec::Zero(2), zero_window, 1.0, 1.0), Vec::Zero(3 * 6));
  const std::vector<Vec> w{Vec::Constant(1, 2.0)};
  const Vec f = enriched_features(Vec::Constant(1, -1.0), w, 1.0, 1.0);
  ASSERT_EQ(f.size(), 2);
  EXPECT_EQ(f(0), 2.0);
  EXPECT_EQ(f(1), 9.0);
  try {
    (void)enriched_features(Vec::Zero(1), w, 0.0, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MissingStats);
  }
}

TEST(EnrichedFeatures, DirectRecomputation) {
  Rng rng = make_stream(58, 0);
  const Vec prev = random_vec(rng, 3);
  std::vector<Vec> w;
  for (int r = 0; r < 4; ++r) w.push_back(random_vec(rng, 3));
  const double sp = 1.7, si = 0.4;
  const Vec f = enriched_features(prev, w, sp, si);
  Vec last = prev;
  for (int r = 0; r < 4; ++r) {
    const Vec dx = w[r] - last;
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(f(r * 12 + i), w[r](i) / (sp * std::sqrt(3.0)), 1e-14);
    for (int j = 0; j < 3; ++j)
      for (int i = 0; i < 3; ++i) EXPECT_NEAR(f(r * 12 + 3 + j * 3 + i), dx(i) * dx(j) / (si * 3.0), 1e-13);
    last = w[r];
  }
}

TEST(ConditionalKernelScore, Examples) {
  const Vec obs = Vec::Constant(2, 0.3);
  const Mat atoms = obs;
  EXPECT_NEAR(conditional_kernel_score(Vec::Ones(1), atoms, obs, 1.0, Vec::Ones(2)), -1.0, 1e-15);
  Mat far(2, 2);
  far << 100.0, 101.0, 100.0, 99.0;
  const Vec w(Eigen::Vector2d(0.4, 0.6));
  const double s = conditional_kernel_score(w, far, Vec::Zero(2), 1.0, Vec::Ones(2));
  EXPECT_GE(s, 0.0);
  EXPECT_NEAR(s, 0.16 + 0.36 + 2 * 0.24 * std::exp(-1.0), 1e-12);
}

TEST(ConditionalKernelScore, DoubleSumOracleAndMinimizer) {
  Rng rng = make_stream(59, 0);
  const int M = 6;
  const Mat atoms = random_matrix(rng, 3, M);
  const Vec obs = random_vec(rng, 3);
  const Vec scale(Eigen::Vector3d(1.0, 2.0, 0.5));
  const double sk = median_heuristic(atoms, scale);
  Mat K(M, M);
  Vec kz(M);
  for (int a = 0; a < M; ++a) {
    kz(a) = std::exp(-(atoms.col(a) - obs).cwiseQuotient(scale).squaredNorm() / (2 * sk * sk));
    for (int b = 0; b < M; ++b)
      K(a, b) = std::exp(-(atoms.col(a) - atoms.col(b)).cwiseQuotient(scale).squaredNorm() / (2 * sk * sk));
  }
  Vec w = Vec::Ones(M) / M;
  EXPECT_NEAR(conditional_kernel_score(w, atoms, obs, sk, scale), w.dot(K * w) - 2 * w.dot(kz), 1e-12);
  // kernel-mean-matching weights: argmin w'Kw - 2 w'k subject to sum w = 1
  Mat kkt = Mat::Zero(M + 1, M + 1);
  kkt.topLeftCorner(M, M) = 2 * K;
  kkt.topRightCorner(M, 1) = Vec::Ones(M);
  kkt.bottomLeftCorner(1, M) = Vec::Ones(M).transpose();
  Vec rhs(M + 1);
  rhs << 2 * kz, 1.0;
  const Vec wstar = kkt.fullPivLu().solve(rhs).head(M);
  const double best = conditional_kernel_score(wstar, atoms, obs, sk, scale);
  for (int trial = 0; trial < 200; ++trial) {
    Vec p = random_vec(rng, M) * 1e-2;
    p.array() -= p.mean();
    EXPECT_GE(conditional_kernel_score(wstar + p, atoms, obs, sk, scale), best - 1e-12);
  }
}

TEST(EntropicNll, Examples) {
  const FlooredPsd one = spectral_floor(SymMatrix::identity(1), 1e-9);
  EXPECT_NEAR(entropic_nll_step(one, 1.0, Vec::Zero(1)), 0.5 * std::log(2 * std::numbers::pi), 1e-12);
  const Vec d = Vec::Constant(1, 0.7);
  const double base = entropic_nll_step(one, 1.0, Vec::Zero(1));
  EXPECT_NEAR(entropic_nll_step(one, 1.0, 2 * d) - base, 4 * (entropic_nll_step(one, 1.0, d) - base), 1e-12);
}

TEST(EntropicNll, LeafPenaltyDecomposition) {
  Rng rng = make_stream(60, 0);
  const SymMatrix base = random_psd(rng, 3, 2);
  const double eps = 1e-3, dt = 0.1;
  const FlooredPsd f = spectral_floor(base, eps);
  const Vec perp = base.eigenvectors().col(0);
  const Vec on = base.matrix() * random_vec(rng, 3);
  const double c = 0.05;
  const double diff = entropic_nll_step(f, dt, on + c * perp) - entropic_nll_step(f, dt, on);
  EXPECT_NEAR(diff, c * c / (2 * eps * dt), 1e-8 * c * c / (2 * eps * dt));
}

TEST(EntropicNll, DensityOracle) {
  Rng rng = make_stream(61, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const FlooredPsd f = spectral_floor(random_psd(rng, 3, 1 + trial % 3), 0.01);
    const double dt = uniform(rng, 0.01, 1.0);
    const Vec delta = random_vec(rng, 3) * 0.3;
    // -log N(delta; 0, Sigma dt) in extended precision from the eigenbasis
    long double nll = 0.0L;
    for (int i = 0; i < 3; ++i) {
      long double proj = 0.0L;
      for (int k = 0; k < 3; ++k) proj += static_cast<long double>(f.eigenvectors()(k, i)) * delta(k);
      const long double var = static_cast<long double>(f.floored_eigs()(i)) * dt;
      nll += 0.5L * proj * proj / var + 0.5L * std::log(2.0L * std::numbers::pi_v<long double> * var);
    }
    EXPECT_NEAR(entropic_nll_step(f, dt, delta), static_cast<double>(nll), 1e-9 * (1.0 + std::abs(static_cast<double>(nll))));
  }
}

TEST(Quantile, Type7AndProperties) {
  EXPECT_EQ(quantile({3.0}, 0.9), 3.0);
  EXPECT_NEAR(quantile({1, 2, 3, 4}, 0.5), 2.5, 1e-15);
  EXPECT_NEAR(quantile({1, 2, 3, 4, 5}, 0.9), 4.6, 1e-12);
  EXPECT_EQ(quantile({4, 1, 3, 2}, 0.25), quantile({1, 2, 3, 4}, 0.25));
  EXPECT_LE(quantile({1, 2, 3, 4}, 0.9), quantile({1, 2, 3, 5}, 0.9));
}

namespace {

IncrementSet gaussian_increments(Rng& rng, const SymMatrix& cov, double dt, int paths, int steps) {
  const Mat f = sym_sqrt(cov).matrix() * std::sqrt(dt);
  IncrementSet out(static_cast<std::size_t>(paths));
  for (auto& p : out)
    for (int t = 0; t < steps; ++t) p.push_back(f * standard_normal(rng, cov.dim()));
  return out;
}

ReferenceFamily constant_family(const SymMatrix& c, int paths, int steps) {
  return ReferenceFamily(static_cast<std::size_t>(paths), std::vector<SymMatrix>(static_cast<std::size_t>(steps), c));
}

}  // namespace

TEST(EntropicSelect, TrivialCases) {
  Rng rng = make_stream(62, 0);
  const SymMatrix c = SymMatrix::identity(2);
  const IncrementSet obs = gaussian_increments(rng, c, 0.1, 3, 5);
  EntropicConfig cfg;
  const std::vector<ReferenceFamily> single{constant_family(c, 3, 5)};
  EXPECT_EQ(entropic_select(single, obs, 0.1, cfg), 0u);
  const std::vector<ReferenceFamily> same{constant_family(c, 3, 5), constant_family(c, 3, 5)};
  EXPECT_EQ(entropic_select(same, obs, 0.1, cfg), 0u);
  EXPECT_THROW((void)entropic_select(std::vector<ReferenceFamily>{}, obs, 0.1, cfg), Error);
}

// The upper-quantile aggregate rewards low spread across paths, which an
// inflated covariance provides; with short paths a mildly inflated candidate
// can beat the truth. Paths of 100 steps and a 2x inflation keep the truth's
// expected advantage well above that effect.
TEST(EntropicSelect, PicksTrueFamily) {
  Rng rng = make_stream(63, 0);
  Mat truth(2, 2);
  truth << 1.0, 0.6, 0.6, 0.8;
  const SymMatrix t(truth);
  const IncrementSet obs = gaussian_increments(rng, t, 0.02, 50, 100);
  const std::vector<ReferenceFamily> cands{constant_family(SymMatrix::identity(2), 50, 100),
                                           constant_family(t, 50, 100), constant_family(t * 2.0, 50, 100)};
  EXPECT_EQ(entropic_select(cands, obs, 0.02, EntropicConfig{}), 1u);
}

TEST(EntropicValidate, CrossChecks) {
  Rng rng = make_stream(64, 0);
  const SymMatrix t = random_psd(rng, 2, 2);
  const IncrementSet obs = gaussian_increments(rng, t, 0.05, 30, 20);
  EntropicConfig cfg;
  const ReferenceFamily fam = constant_family(t, 30, 20);
  const auto scores = entropic_path_scores(fam, obs, 0.05, cfg);
  EXPECT_NEAR(entropic_validate(fam, obs, 0.05, cfg), quantile(scores, cfg.alpha), 1e-15);
  const IncrementSet one(obs.begin(), obs.begin() + 1);
  const ReferenceFamily fam1(fam.begin(), fam.begin() + 1);
  EXPECT_NEAR(entropic_validate(fam1, one, 0.05, cfg), entropic_path_scores(fam1, one, 0.05, cfg)[0], 1e-15);
  // median vs mean on many paths
  const IncrementSet many = gaussian_increments(rng, t, 0.05, 400, 50);
  const auto s2 = entropic_path_scores(constant_family(t, 400, 50), many, 0.05, cfg);
  double mean = 0.0;
  for (double v : s2) mean += v;
  mean /= s2.size();
  EntropicConfig med;
  med.alpha = 0.5;
  EXPECT_NEAR(entropic_validate(constant_family(t, 400, 50), many, 0.05, med), mean, 0.05);
}
