#pragma once

#include <vector>

#include "tvar/common.hpp"
#include "tvar/dynamics.hpp"

namespace tvar {

struct ObservationSpec {
  std::vector<int> mask;      // sorted indices of observed components
  double noise_std = 0.1;
  double arctan_scale = 5.0;        // a in o = a*arctan(b*s)
  double arctan_slope = 0.3141592653589793;  // b = pi/10
  int history_length = 10;
  std::uint64_t rng_seed = 0;

  int n_obs() const { return static_cast<int>(mask.size()); }
  void validate(int state_dim) const;

  /// Every-stride subsampling mask starting at index 0.
  static ObservationSpec strided(int state_dim, int stride, double sigma,
                                 int m, std::uint64_t seed = 0);
};

struct ObservationWindow {
  Matrix observations;  // (T+1) x n_o
  Matrix histories;     // (T+1) x (m * n_o), oldest-first flattening
  int start_index = 0;  // index into the source observation sequence
};

struct TrainingData {
  Matrix dyn_current;  // n_dyn x n_s
  Matrix dyn_next;     // n_dyn x n_s
  Matrix obs_states;   // n_obs x n_s
  Matrix obs_values;   // n_obs x n_o
  Matrix obs_histories;  // n_obs x (m * n_o)
};

/// Noisy nonlinear partial observation o = a*arctan(b*s[mask]) + eps.
Vector observe(const Vector& state, const ObservationSpec& spec, Rng& rng);

/// Observe every row of a trajectory with a per-call RNG stream.
Matrix observe_all(const Matrix& states, const ObservationSpec& spec, Rng& rng);

/// Assimilation windows of T+1 steps with m-step histories, at every
/// admissible start offset (stride controls subsampling of starts).
std::vector<ObservationWindow> build_windows(const Matrix& observations, int m,
                                             int T, int stride = 1);

/// Single window starting at `start` (start >= m required).
ObservationWindow build_window(const Matrix& observations, int m, int T,
                               int start);

TrainingData make_training_data(const std::vector<Trajectory>& trajectories,
                                const ObservationSpec& spec);

}  // namespace tvar
