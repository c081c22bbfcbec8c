#pragma once

#include <optional>
#include <vector>

#include "tvar/common.hpp"
#include "tvar/deep.hpp"
#include "tvar/kernel.hpp"
#include "tvar/observation.hpp"

namespace tvar {

enum class FeaturePath { Kernel, Deep };

/// Fitted Tensor-Var artifacts: feature maps, CME operators, preimage,
/// and feature-space error covariances.
struct FeatureSpaceModel {
  FeaturePath path = FeaturePath::Kernel;
  int d_s = 0, d_o = 0, d_h = 0;
  int history_length = 0;

  // Kernel path
  NystromBasis basis_s, basis_o, basis_h;
  // Deep path
  DenseNet net_s, net_s_inv, net_o, net_h;

  Matrix dyn_op;      // d_s x d_s
  Matrix inv_obs_op;  // d_s x (d_o * d_h)
  Matrix preimage;    // n_s x d_s (kernel path; also fitted for deep as a fallback)
  Vector preimage_offset;  // n_s intercept (empty means zero)
  Matrix B, R, Q;     // d_s x d_s, SPD after jitter
  double lambda = 1e-6;
  std::uint64_t seed = 0;

  Matrix state_features(const Matrix& S) const;
  Matrix obs_features(const Matrix& O) const;
  Matrix history_features(const Matrix& H) const;
  /// Feature-space trajectory back to raw states, one row per step.
  Matrix decode(const Matrix& Z) const;
};

/// Ridge regression from current-state features to next-state features:
/// C = Zp^T Z (Z^T Z + lambda n I)^{-1}.
Matrix fit_cme_dynamics(const Matrix& Z_s, const Matrix& Z_next, double lambda);

/// Row-wise Kronecker features w_i = z_o,i (x) z_h,i, flattened with the
/// observation index major: w[a*d_h + b] = z_o[a] * z_h[b].
Matrix tensor_features(const Matrix& Z_o, const Matrix& Z_h);

/// Prepend a constant-1 coordinate. Applied to both factors before the
/// tensor product, the product features span constants and the two linear
/// subspaces in addition to the bilinear interactions; without it a pure
/// product of centered features cannot represent a function of one factor
/// alone.
Matrix augment_constant(const Matrix& Z);

/// Ridge regression from tensor-product observation/history features to
/// state features.
Matrix fit_cme_inverse_obs(const Matrix& Z_s, const Matrix& Z_o,
                           const Matrix& Z_h, double lambda,
                           long max_columns = 1 << 17);

/// Ridge regression from feature coordinates back to raw states.
Matrix fit_preimage(const Matrix& S, const Matrix& Z_s, double lambda);

struct ErrorCovariances {
  Matrix B, R, Q;
};

/// Empirical residual covariances of the fitted operators plus the
/// state-feature covariance, with SPD jitter.
ErrorCovariances estimate_error_covariances(const Matrix& Z_s_dyn,
                                            const Matrix& Z_next,
                                            const Matrix& dyn_op,
                                            const Matrix& Z_s_obs,
                                            const Matrix& W_obs,
                                            const Matrix& inv_obs_op);

struct SpectralRadiusResult {
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

/// Largest eigenvalue modulus via two-vector subspace power iteration
/// (handles dominant complex pairs).
SpectralRadiusResult spectral_radius(const Matrix& op, int max_iter = 2000,
                                     double tol = 1e-10);

struct KernelTrainConfig {
  KernelSpec kernel_s, kernel_o, kernel_h;
  LengthscaleRule rule = LengthscaleRule::MedianHeuristic;
  int d_s = 60, d_o = 32, d_h = 32;
  int n_landmark = 1000;
  double lambda = 1e-6;
  std::uint64_t seed = 0;
  bool center = true;
};

/// End-to-end kernel-path training: Nystrom-PCA features for state,
/// observation and history, then CME operators, preimage, and covariances.
FeatureSpaceModel train_kernel_model(const TrainingData& data,
                                     const KernelTrainConfig& cfg);

struct DeepTrainConfig {
  int d_s = 60, d_o = 32, d_h = 32;
  TrainConfig train;
  double lambda = 1e-6;
  std::uint64_t seed = 0;
};

/// End-to-end deep-path training: two-phase feature learning, final
/// full-data operator refits, preimage, and covariances.
FeatureSpaceModel train_deep_model(const TrainingData& data,
                                   const DeepTrainConfig& cfg);

}  // namespace tvar
