#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "trsbts/error.hpp"

namespace trsbts {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Rng = std::mt19937_64;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Splittable seeding: an independent stream for (master, stream_id).
inline Rng make_stream(std::uint64_t master, std::uint64_t stream_id) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(stream_id),
                    static_cast<std::uint32_t>(stream_id >> 32), 0x7452u};
  return Rng(seq);
}

inline Vec standard_normal(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vec out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = nd(rng);
  return out;
}

/// Time-major trajectory of state vectors on the coarse grid.
struct CoarsePath {
  std::vector<Vec> states;

  std::size_t size() const { return states.size(); }
  Eigen::Index dim() const { return states.empty() ? 0 : states.front().size(); }

  /// increments()[k] = states[k+1] - states[k].
  std::vector<Vec> increments() const {
    std::vector<Vec> out;
    if (states.size() < 2) return out;
    out.reserve(states.size() - 1);
    for (std::size_t k = 0; k + 1 < states.size(); ++k) out.push_back(states[k + 1] - states[k]);
    return out;
  }
};

inline bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace trsbts
