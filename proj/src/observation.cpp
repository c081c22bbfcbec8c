#include "tvar/observation.hpp"

#include <algorithm>
#include <cmath>

namespace tvar {

void ObservationSpec::validate(int state_dim) const {
  if (mask.empty()) throw SpecError("observation mask must not be empty");
  if (!std::is_sorted(mask.begin(), mask.end()))
    throw SpecError("observation mask must be sorted");
  if (std::adjacent_find(mask.begin(), mask.end()) != mask.end())
    throw SpecError("observation mask indices must be unique");
  if (mask.front() < 0 || mask.back() >= state_dim)
    throw SpecError("observation mask index out of range");
  if (noise_std < 0) throw SpecError("noise_std must be >= 0");
  if (history_length < 0) throw SpecError("history_length must be >= 0");
}

ObservationSpec ObservationSpec::strided(int state_dim, int stride,
                                         double sigma, int m,
                                         std::uint64_t seed) {
  ObservationSpec spec;
  for (int i = 0; i < state_dim; i += stride) spec.mask.push_back(i);
  spec.noise_std = sigma;
  spec.history_length = m;
  spec.rng_seed = seed;
  return spec;
}

Vector observe(const Vector& state, const ObservationSpec& spec, Rng& rng) {
  spec.validate(static_cast<int>(state.size()));
  Vector o(spec.n_obs());
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int i = 0; i < spec.n_obs(); ++i) {
    o[i] = spec.arctan_scale * std::atan(spec.arctan_slope * state[spec.mask[i]]);
    if (spec.noise_std > 0) o[i] += spec.noise_std * noise(rng);
  }
  return o;
}

Matrix observe_all(const Matrix& states, const ObservationSpec& spec, Rng& rng) {
  Matrix out(states.rows(), spec.n_obs());
  for (int t = 0; t < states.rows(); ++t)
    out.row(t) = observe(states.row(t), spec, rng);
  return out;
}

ObservationWindow build_window(const Matrix& observations, int m, int T,
                               int start) {
  const int n_o = static_cast<int>(observations.cols());
  if (start < m)
    throw SpecError("window start must leave room for the history");
  if (start + T >= observations.rows())
    throw NumericError("observation sequence too short: need at least " +
                       std::to_string(start + T + 1) + " rows, have " +
                       std::to_string(observations.rows()));
  ObservationWindow w;
  w.start_index = start;
  w.observations.resize(T + 1, n_o);
  w.histories.resize(T + 1, m * n_o);
  for (int t = 0; t <= T; ++t) {
    w.observations.row(t) = observations.row(start + t);
    for (int j = 0; j < m; ++j)
      w.histories.row(t).segment(j * n_o, n_o) =
          observations.row(start + t - m + j);
  }
  return w;
}

std::vector<ObservationWindow> build_windows(const Matrix& observations, int m,
                                             int T, int stride) {
  const int len = static_cast<int>(observations.rows());
  if (len < m + T + 1)
    throw NumericError("observation sequence too short: need at least " +
                       std::to_string(m + T + 1) + " rows, have " +
                       std::to_string(len));
  std::vector<ObservationWindow> windows;
  for (int start = m; start + T < len; start += stride)
    windows.push_back(build_window(observations, m, T, start));
  return windows;
}

TrainingData make_training_data(const std::vector<Trajectory>& trajectories,
                                const ObservationSpec& spec) {
  if (trajectories.empty())
    throw SpecError("make_training_data: empty trajectory list");
  const int n_s = trajectories.front().state_dim();
  const int m = spec.history_length;
  const int n_o = spec.n_obs();

  long n_dyn = 0, n_obs = 0;
  for (const auto& traj : trajectories) {
    if (traj.state_dim() != n_s)
      throw SpecError("trajectories must share state_dim");
    n_dyn += std::max(0, traj.n_steps() - 1);
    n_obs += std::max(0, traj.n_steps() - m);
  }

  TrainingData data;
  data.dyn_current.resize(n_dyn, n_s);
  data.dyn_next.resize(n_dyn, n_s);
  data.obs_states.resize(n_obs, n_s);
  data.obs_values.resize(n_obs, n_o);
  data.obs_histories.resize(n_obs, m * n_o);

  long id = 0, io = 0;
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const Matrix& S = trajectories[k].states;
    const int L = static_cast<int>(S.rows());
    // Pairs never span trajectory boundaries.
    for (int t = 0; t + 1 < L; ++t) {
      data.dyn_current.row(id) = S.row(t);
      data.dyn_next.row(id) = S.row(t + 1);
      ++id;
    }
    Rng rng = derived_rng(spec.rng_seed, k);
    Matrix obs = observe_all(S, spec, rng);
    for (int t = m; t < L; ++t) {
      data.obs_states.row(io) = S.row(t);
      data.obs_values.row(io) = obs.row(t);
      for (int j = 0; j < m; ++j)
        data.obs_histories.row(io).segment(j * n_o, n_o) = obs.row(t - m + j);
      ++io;
    }
  }
  return data;
}

}  // namespace tvar
