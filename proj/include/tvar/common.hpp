#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace tvar {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

using Rng = std::mt19937_64;

/// Error raised when a spec or config is internally inconsistent.
struct SpecError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Error raised when a numerical procedure blows up (non-finite state,
/// failed factorization, insufficient data).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Derive an independent RNG stream from a base seed and a stream index.
inline Rng derived_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{std::uint64_t(seed),
                    std::uint64_t(stream ^ 0x9e3779b97f4a7c15ull)};
  return Rng(seq);
}

inline Vector standard_normal(int n, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

}  // namespace tvar
