#pragma once

#include <vector>

#include "tvar/common.hpp"

namespace tvar {

enum class Activation { Tanh, None };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::Tanh;
};

/// Small fully connected network with explicit forward/backward passes.
/// Samples are rows; the forward cache holds one activation matrix per layer.
struct DenseNet {
  std::vector<DenseLayer> layers;

  int dim_in() const { return layers.empty() ? 0 : (int)layers.front().weight.cols(); }
  int dim_out() const { return layers.empty() ? 0 : (int)layers.back().weight.rows(); }

  /// Layer dims {in, h1, ..., out}; tanh on all but the last layer.
  static DenseNet make(const std::vector<int>& dims, Rng& rng);

  Matrix forward(const Matrix& X) const;
};

struct ForwardCache {
  Matrix input;
  std::vector<Matrix> pre;   // pre-activation per layer
  std::vector<Matrix> post;  // post-activation per layer
};

struct NetGradients {
  std::vector<Matrix> dweight;
  std::vector<Vector> dbias;
  Matrix dinput;

  void axpy(double a, const NetGradients& other);
};

ForwardCache forward_cached(const DenseNet& net, const Matrix& X);

/// Reverse-mode gradients of the cached pass; `upstream` is dLoss/dOutput
/// with the same shape as the cached output.
NetGradients backward(const DenseNet& net, const ForwardCache& cache,
                      const Matrix& upstream);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m_w, v_w;
  std::vector<Vector> m_b, v_b;
  long step = 0;

  static AdamState zeros_like(const DenseNet& net);
};

void adam_step(DenseNet& net, const NetGradients& grads, AdamState& state,
               const AdamConfig& cfg);

struct TrainConfig {
  int epochs = 200;
  int batch_size = 512;
  AdamConfig adam;
  double recon_weight = 1.0;   // w in (0,1]
  double batch_ridge = 1e-3;   // lambda used for the in-batch operator fit
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (recon_weight <= 0 || recon_weight > 1)
      throw SpecError("recon_weight must be in (0,1]");
    if (epochs < 1 || batch_size < 1) throw SpecError("bad train config");
  }
};

struct StateFeatureResult {
  DenseNet encoder;      // phi_S
  DenseNet inverse;      // phi_S^dagger
  Matrix dyn_op;         // refit on the full dataset after training
  std::vector<double> epoch_loss;
};

struct ObsFeatureResult {
  DenseNet obs_encoder;      // phi_O
  DenseNet history_encoder;  // phi_H
  Matrix inv_obs_op;         // refit on the full dataset after training
  std::vector<double> epoch_loss;
};

/// Phase 1 of the two-phase protocol: learn phi_S and its inverse jointly,
/// with the batch CME operator refit in closed form each step (no gradient
/// flows through the operator).
StateFeatureResult train_state_features(const Matrix& S_current,
                                        const Matrix& S_next, int d_s,
                                        const TrainConfig& cfg);

/// Phase 2: with phi_S frozen, learn observation and history features
/// against the state features through the tensor-product regression.
ObsFeatureResult train_obs_history_features(const Matrix& S, const Matrix& O,
                                            const Matrix& H,
                                            const DenseNet& state_encoder,
                                            int d_o, int d_h,
                                            const TrainConfig& cfg);

}  // namespace tvar
