#pragma once

#include <functional>
#include <vector>

#include "tvar/common.hpp"
#include "tvar/dynamics.hpp"
#include "tvar/observation.hpp"

namespace tvar {

enum class GradientMode { Adjoint, FiniteDifference };

struct VarConfig {
  Matrix B;  // state-space background covariance
  Matrix R;  // observation-space covariance
  int window = 5;            // T+1 steps
  int lbfgs_memory = 10;
  int max_iterations = 200;
  double gradient_tol = 1e-6;
  GradientMode gradient_mode = GradientMode::Adjoint;
  bool linear_observation = false;  // G(s) = s[mask] instead of the arctan map
  // Number of L-BFGS starts for 4D-Var (lowest final cost wins). The first
  // start is s_b, the second a 3D-Var refinement of s_b on the first
  // observation, the rest are N(s_b, B) draws; 1 disables the extras.
  int multistart = 1;
  std::uint64_t multistart_seed = 0;
};

struct OptimizerTrace {
  int iterations = 0;
  std::vector<double> objective;
  double final_gradient_norm = 0.0;
  double seconds = 0.0;
  bool converged = false;
  bool line_search_failed = false;
};

using CostGrad = std::function<double(const Vector&, Vector&)>;

/// L-BFGS two-loop recursion with a strong-Wolfe line search.
Vector lbfgs(const CostGrad& f, const Vector& x0, int memory, double tol,
             int max_iter, OptimizerTrace* trace = nullptr);

/// Single-time variational analysis with the nonlinear arctan observation
/// operator and analytic gradient.
Vector threedvar(const Vector& observation, const Vector& s_b,
                 const VarConfig& cfg, const ObservationSpec& obs_spec,
                 OptimizerTrace* trace = nullptr);

/// Strong-constraint 4D-Var cost and gradient over the initial state.
/// Adjoint mode uses the analytic Lorenz-96 reverse sweep; FD mode uses
/// central differences (the only mode available for KS).
double fourdvar_cost_grad(const Vector& s0, const ObservationWindow& window,
                          const Vector& s_b, const VarConfig& cfg,
                          const SystemSpec& spec,
                          const ObservationSpec& obs_spec, Vector& grad);

struct FourDVarResult {
  Matrix analysis;  // (T+1) x n_s, model trajectory from the optimized s0
  OptimizerTrace trace;
};

FourDVarResult fourdvar(const ObservationWindow& window, const Vector& s_b,
                        const VarConfig& cfg, const SystemSpec& spec,
                        const ObservationSpec& obs_spec);

}  // namespace tvar
