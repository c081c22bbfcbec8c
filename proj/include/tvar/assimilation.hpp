#pragma once

#include <vector>

#include "tvar/cme.hpp"
#include "tvar/common.hpp"
#include "tvar/observation.hpp"

namespace tvar {

/// Block-tridiagonal SPD normal equations of the feature-space 4D-Var.
struct QuadraticSystem {
  std::vector<Matrix> diag;  // T+1 blocks, d_s x d_s
  std::vector<Matrix> off;   // T blocks; off[t] couples z_t to z_{t+1}
  Vector rhs;                // (T+1)*d_s

  int horizon() const { return static_cast<int>(diag.size()) - 1; }
  int block_dim() const { return diag.empty() ? 0 : (int)diag.front().rows(); }
  Matrix dense() const;
};

struct AssimilationResult {
  Matrix feature_trajectory;  // (T+1) x d_s
  Matrix states;              // (T+1) x n_s decoded analysis
  Matrix forecast_states;     // tau x n_s
  double objective = 0.0;
  double background_residual = 0.0;
  double dynamics_residual = 0.0;
  double observation_residual = 0.0;
  double solve_seconds = 0.0;
};

/// Row t = C_inv (phi_O(o_t) (x) phi_H(h_t)), the feature-space
/// pseudo-observation of the state at step t.
Matrix precompute_pseudo_observations(const FeatureSpaceModel& model,
                                      const ObservationWindow& window);

/// Gradient-stationarity blocks of the feature-space 4D-Var cost around
/// background s_b. `diagonal_covariances` replaces B, R, Q by their
/// diagonals before inverting.
QuadraticSystem assemble(const FeatureSpaceModel& model,
                         const Matrix& pseudo_obs, const Vector& s_b,
                         bool diagonal_covariances = false);

/// Block Cholesky sweep; residual ||Az-g||/||g|| <= 1e-10 on success.
Vector solve_block_tridiagonal(const QuadraticSystem& sys);

/// Value of the feature-space 4D-Var cost at a stacked z.
double quadratic_cost(const FeatureSpaceModel& model, const Matrix& pseudo_obs,
                      const Vector& s_b, const Vector& z_stacked,
                      bool diagonal_covariances = false);

AssimilationResult assimilate(const FeatureSpaceModel& model,
                              const ObservationWindow& window,
                              const Vector& s_b, int forecast_steps,
                              bool diagonal_covariances = false);

/// tau decoded states from repeated application of the dynamics operator.
Matrix forecast_only(const FeatureSpaceModel& model, const Vector& z_start,
                     int forecast_steps);

}  // namespace tvar
