#pragma once

#include <random>

#include "trsbts/linalg.hpp"

namespace trsbts::testing {

inline Mat random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n01;
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n01(rng);
  return m;
}

inline Vec random_vec(Rng& rng, Eigen::Index n) { return standard_normal(rng, n); }

inline SymMatrix random_symmetric(Rng& rng, Eigen::Index d) {
  const Mat a = random_matrix(rng, d, d);
  return SymMatrix((a + a.transpose()) / 2.0);
}

/// Random PSD matrix of the given rank (full rank when rank == d).
inline SymMatrix random_psd(Rng& rng, Eigen::Index d, Eigen::Index rank) {
  const Mat b = random_matrix(rng, d, rank);
  return SymMatrix(b * b.transpose());
}

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

}  // namespace trsbts::testing
