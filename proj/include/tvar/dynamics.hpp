#pragma once

#include <memory>
#include <string>

#include "tvar/common.hpp"

namespace tvar {

enum class SystemKind { Lorenz96, KS };

struct SystemSpec {
  SystemKind kind = SystemKind::Lorenz96;
  int state_dim = 40;
  double forcing = 10.0;        // Lorenz-96 only
  double domain_length = 0.0;   // KS only; preset uses 32*pi
  double dt_integrate = 0.01;
  double dt_sample = 0.1;
  std::uint64_t rng_seed = 0;

  void validate() const;
  int steps_per_sample() const;

  static SystemSpec lorenz96(int n, double F = 10.0, std::uint64_t seed = 0);
  static SystemSpec ks(int n, std::uint64_t seed = 0);
};

struct Trajectory {
  Matrix states;  // n_steps x n_s, row t is the state at sample t
  double dt_sample = 0.0;
  SystemSpec spec;

  int n_steps() const { return static_cast<int>(states.rows()); }
  int state_dim() const { return static_cast<int>(states.cols()); }
};

/// Right-hand side of the Lorenz-96 ODE with cyclic indexing.
Vector lorenz96_rhs(const Vector& state, double forcing);

/// Fixed-step RK4 integration sampled every dt_sample.
/// The first row of the result is the initial state.
Trajectory integrate_lorenz96(const SystemSpec& spec, const Vector& initial,
                              int n_samples);

/// ETDRK4 spectral integration of the Kuramoto-Sivashinsky equation
/// on a periodic domain, with 2/3-rule dealiasing.
Trajectory integrate_ks(const SystemSpec& spec, const Vector& initial,
                        int n_samples);

Trajectory integrate(const SystemSpec& spec, const Vector& initial,
                     int n_samples);

/// Random draw advanced burn_in sample steps onto the attractor.
/// Retries divergent draws up to a small bound.
Vector spinup_initial(const SystemSpec& spec, int burn_in, Rng& rng);

/// ETDRK4 stepper with precomputed phi-function coefficients; reuse one
/// instance when advancing many short segments.
class KsIntegrator {
 public:
  explicit KsIntegrator(const SystemSpec& spec, double nonlinear_weight = 1.0);

  /// Advance a real-space state by n_steps integration steps.
  Vector advance(const Vector& u, int n_steps) const;

 private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
};

namespace detail {
/// One RK4 step of the Lorenz-96 system.
Vector lorenz96_rk4_step(const Vector& s, double dt, double forcing);
/// Transpose-Jacobian action of one RK4 step: given the step input s and
/// an adjoint vector at the step output, returns the adjoint at the input.
Vector lorenz96_rk4_step_vjp(const Vector& s, const Vector& adjoint,
                             double dt, double forcing);
/// KS integration with the nonlinear term scaled by `nonlinear_weight`
/// (0 disables it; used by the linear-mode oracle).
Trajectory integrate_ks_weighted(const SystemSpec& spec, const Vector& initial,
                                 int n_samples, double nonlinear_weight);
}  // namespace detail

}  // namespace tvar
