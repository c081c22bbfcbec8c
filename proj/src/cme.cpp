#include "tvar/cme.hpp"

#include <cmath>

namespace tvar {

namespace {

Matrix ridge_solve(const Matrix& A, const Matrix& rhs) {
  Eigen::LDLT<Matrix> ldlt(A);
  if (ldlt.info() != Eigen::Success)
    throw NumericError("ridge solve: factorization failed");
  return ldlt.solve(rhs);
}

Matrix covariance_of_residuals(const Matrix& residuals) {
  const double n = static_cast<double>(residuals.rows());
  return residuals.transpose() * residuals / n;
}

// Trace-normalized ridge strength: the nominal lambda is interpreted
// relative to the mean squared feature value, so the effective penalty is
// invariant to the overall feature scale (kernel-PCA coordinates can have
// variances spread over many orders of magnitude).
double scaled_lambda(double lambda, const Matrix& Z) {
  return lambda * std::max(Z.array().square().mean(), 1e-300);
}

// Affine preimage: ridge on mean-centered features and states, with the
// intercept absorbing the state mean (centered kernel-PCA features cannot
// represent a constant, so a linear-only decode would lose it).
void fit_affine_preimage(FeatureSpaceModel& model, const Matrix& S,
                         const Matrix& Z, double lambda) {
  Vector s_mean = S.colwise().mean();
  Vector z_mean = Z.colwise().mean();
  Matrix Sc = S.rowwise() - s_mean.transpose();
  Matrix Zc = Z.rowwise() - z_mean.transpose();
  model.preimage = fit_preimage(Sc, Zc, scaled_lambda(lambda, Zc));
  model.preimage_offset = s_mean - model.preimage * z_mean;
}

Matrix add_jitter(Matrix C) {
  const int d = static_cast<int>(C.rows());
  C = 0.5 * (C + C.transpose());
  double eps = 1e-8 * std::max(C.diagonal().mean(), 1e-12);
  for (int attempt = 0; attempt < 8; ++attempt) {
    Matrix J = C + eps * Matrix::Identity(d, d);
    Eigen::LLT<Matrix> llt(J);
    if (llt.info() == Eigen::Success) return J;
    eps *= 100.0;
  }
  throw NumericError("covariance jitter failed to produce an SPD matrix");
}

}  // namespace

Matrix fit_cme_dynamics(const Matrix& Z_s, const Matrix& Z_next,
                        double lambda) {
  if (Z_s.rows() != Z_next.rows())
    throw SpecError("fit_cme_dynamics: row count mismatch");
  if (lambda <= 0) throw SpecError("fit_cme_dynamics: lambda must be > 0");
  const double n = static_cast<double>(Z_s.rows());
  const int d = static_cast<int>(Z_s.cols());
  Matrix A = Z_s.transpose() * Z_s + lambda * n * Matrix::Identity(d, d);
  return ridge_solve(A, Z_s.transpose() * Z_next).transpose();
}

Matrix tensor_features(const Matrix& Z_o, const Matrix& Z_h) {
  if (Z_o.rows() != Z_h.rows())
    throw SpecError("tensor_features: row count mismatch");
  const int n = static_cast<int>(Z_o.rows());
  const int d_o = static_cast<int>(Z_o.cols());
  const int d_h = static_cast<int>(Z_h.cols());
  Matrix W(n, static_cast<long>(d_o) * d_h);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < d_o; ++a)
      W.row(i).segment(static_cast<long>(a) * d_h, d_h) =
          Z_o(i, a) * Z_h.row(i);
  return W;
}

Matrix augment_constant(const Matrix& Z) {
  Matrix A(Z.rows(), Z.cols() + 1);
  A << Matrix::Ones(Z.rows(), 1), Z;
  return A;
}

Matrix fit_cme_inverse_obs(const Matrix& Z_s, const Matrix& Z_o,
                           const Matrix& Z_h, double lambda,
                           long max_columns) {
  if (Z_s.rows() != Z_o.rows() || Z_s.rows() != Z_h.rows())
    throw SpecError("fit_cme_inverse_obs: row count mismatch");
  const long cols = static_cast<long>(Z_o.cols()) * Z_h.cols();
  if (cols > max_columns)
    throw SpecError(
        "fit_cme_inverse_obs: tensor feature has " + std::to_string(cols) +
        " columns, above the memory budget; reduce d_o or d_h");
  Matrix W = tensor_features(Z_o, Z_h);
  const double n = static_cast<double>(W.rows());
  Matrix A = W.transpose() * W +
             lambda * n * Matrix::Identity(cols, cols);
  return ridge_solve(A, W.transpose() * Z_s).transpose();
}

Matrix fit_preimage(const Matrix& S, const Matrix& Z_s, double lambda) {
  if (S.rows() != Z_s.rows()) throw SpecError("fit_preimage: row mismatch");
  return fit_cme_dynamics(Z_s, S, lambda);
}

ErrorCovariances estimate_error_covariances(const Matrix& Z_s_dyn,
                                            const Matrix& Z_next,
                                            const Matrix& dyn_op,
                                            const Matrix& Z_s_obs,
                                            const Matrix& W_obs,
                                            const Matrix& inv_obs_op) {
  Matrix q_res = Z_next - Z_s_dyn * dyn_op.transpose();
  Matrix r_res = Z_s_obs - W_obs * inv_obs_op.transpose();
  if (!q_res.allFinite() || !r_res.allFinite())
    throw NumericError("estimate_error_covariances: non-finite residual");

  Matrix centered = Z_s_dyn.rowwise() - Z_s_dyn.colwise().mean();
  ErrorCovariances cov;
  cov.B = add_jitter(covariance_of_residuals(centered));
  cov.Q = add_jitter(covariance_of_residuals(q_res));
  cov.R = add_jitter(covariance_of_residuals(r_res));
  return cov;
}

SpectralRadiusResult spectral_radius(const Matrix& op, int max_iter,
                                     double tol) {
  if (op.rows() != op.cols()) throw SpecError("spectral_radius: square matrix required");
  const int d = static_cast<int>(op.rows());
  SpectralRadiusResult res;
  if (d == 1) {
    res.value = std::abs(op(0, 0));
    res.converged = true;
    return res;
  }

  // Two-column subspace iteration; the 2x2 Ritz problem captures a
  // dominant complex-conjugate pair.
  Rng rng(12345);
  Matrix X(d, 2);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < 2; ++j) X(i, j) = standard_normal(1, rng)[0];
  double prev = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    Eigen::HouseholderQR<Matrix> qr(X);
    Matrix Q = qr.householderQ() * Matrix::Identity(d, 2);
    Matrix Y = op * Q;
    Matrix H = Q.transpose() * Y;  // 2x2 Ritz block
    const double tr = H(0, 0) + H(1, 1);
    const double det = H(0, 0) * H(1, 1) - H(0, 1) * H(1, 0);
    const double disc = tr * tr - 4.0 * det;
    double est;
    if (disc >= 0) {
      const double r = std::sqrt(disc);
      est = std::max(std::abs((tr + r) / 2.0), std::abs((tr - r) / 2.0));
    } else {
      est = std::sqrt(det);  // modulus of the complex pair
    }
    res.value = est;
    res.iterations = it;
    if (it > 1 && std::abs(est - prev) <= tol * std::max(1.0, std::abs(est))) {
      res.converged = true;
      return res;
    }
    prev = est;
    X = Y;
  }
  return res;  // best estimate, converged = false
}

Matrix FeatureSpaceModel::state_features(const Matrix& S) const {
  return path == FeaturePath::Kernel ? project(basis_s, S) : net_s.forward(S);
}

Matrix FeatureSpaceModel::obs_features(const Matrix& O) const {
  return path == FeaturePath::Kernel ? project(basis_o, O) : net_o.forward(O);
}

Matrix FeatureSpaceModel::history_features(const Matrix& H) const {
  if (history_length == 0 || d_h == 1)
    return Matrix::Ones(H.rows(), 1);
  return path == FeaturePath::Kernel ? project(basis_h, H) : net_h.forward(H);
}

Matrix FeatureSpaceModel::decode(const Matrix& Z) const {
  if (path == FeaturePath::Deep && net_s_inv.dim_in() > 0)
    return net_s_inv.forward(Z);
  Matrix S = Z * preimage.transpose();
  if (preimage_offset.size() > 0) S.rowwise() += preimage_offset.transpose();
  return S;
}

FeatureSpaceModel train_kernel_model(const TrainingData& data,
                                     const KernelTrainConfig& cfg) {
  FeatureSpaceModel model;
  model.path = FeaturePath::Kernel;
  model.lambda = cfg.lambda;
  model.seed = cfg.seed;
  model.history_length = data.obs_histories.cols() > 0 ? 1 : 0;

  const int n_dyn = static_cast<int>(data.dyn_current.rows());
  const int n_obs = static_cast<int>(data.obs_states.rows());
  if (n_dyn < 1 || n_obs < 1) throw SpecError("train_kernel_model: empty data");

  Rng rng = derived_rng(cfg.seed, 1);

  auto choose_spec = [&](const Matrix& X, KernelSpec spec) {
    if (cfg.rule == LengthscaleRule::MedianHeuristic) {
      Standardizer std_fit = Standardizer::fit(X);
      spec.lengthscale = median_heuristic(std_fit.apply(X), rng);
      spec.rule = LengthscaleRule::MedianHeuristic;
    }
    return spec;
  };

  const int l_s = std::min<int>(cfg.n_landmark, n_dyn);
  const int l_o = std::min<int>(cfg.n_landmark, n_obs);

  KernelSpec spec_s = choose_spec(data.dyn_current, cfg.kernel_s);
  model.basis_s = fit_nystrom_pca(data.dyn_current, l_s,
                                  std::min(cfg.d_s, l_s), spec_s, rng,
                                  cfg.center);
  model.d_s = model.basis_s.dim_out();

  KernelSpec spec_o = choose_spec(data.obs_values, cfg.kernel_o);
  model.basis_o = fit_nystrom_pca(data.obs_values, l_o,
                                  std::min(cfg.d_o, l_o), spec_o, rng,
                                  cfg.center);
  model.d_o = model.basis_o.dim_out();

  if (data.obs_histories.cols() > 0) {
    KernelSpec spec_h = choose_spec(data.obs_histories, cfg.kernel_h);
    model.basis_h = fit_nystrom_pca(data.obs_histories, l_o,
                                    std::min(cfg.d_h, l_o), spec_h, rng,
                                    cfg.center);
    model.d_h = model.basis_h.dim_out();
  } else {
    model.d_h = 1;
    model.history_length = 0;
  }

  Matrix Z_s = project(model.basis_s, data.dyn_current);
  Matrix Z_next = project(model.basis_s, data.dyn_next);
  model.dyn_op = fit_cme_dynamics(Z_s, Z_next, scaled_lambda(cfg.lambda, Z_s));

  Matrix Z_s_obs = project(model.basis_s, data.obs_states);
  Matrix Z_o = augment_constant(project(model.basis_o, data.obs_values));
  Matrix Z_h = model.history_length > 0
                   ? augment_constant(project(model.basis_h,
                                              data.obs_histories))
                   : Matrix::Ones(n_obs, 1);

  Matrix W = tensor_features(Z_o, Z_h);
  model.inv_obs_op =
      fit_cme_inverse_obs(Z_s_obs, Z_o, Z_h, scaled_lambda(cfg.lambda, W));
  fit_affine_preimage(model, data.dyn_current, Z_s, cfg.lambda);
  ErrorCovariances cov = estimate_error_covariances(
      Z_s, Z_next, model.dyn_op, Z_s_obs, W, model.inv_obs_op);
  model.B = cov.B;
  model.R = cov.R;
  model.Q = cov.Q;
  return model;
}

FeatureSpaceModel train_deep_model(const TrainingData& data,
                                   const DeepTrainConfig& cfg) {
  FeatureSpaceModel model;
  model.path = FeaturePath::Deep;
  model.lambda = cfg.lambda;
  model.seed = cfg.seed;
  model.history_length = data.obs_histories.cols() > 0 ? 1 : 0;

  TrainConfig phase1 = cfg.train;
  phase1.rng_seed = cfg.seed;
  StateFeatureResult state =
      train_state_features(data.dyn_current, data.dyn_next, cfg.d_s, phase1);
  model.net_s = state.encoder;
  model.net_s_inv = state.inverse;
  model.d_s = cfg.d_s;

  TrainConfig phase2 = cfg.train;
  phase2.rng_seed = cfg.seed + 1;
  Matrix H = data.obs_histories;
  ObsFeatureResult obs =
      train_obs_history_features(data.obs_states, data.obs_values, H,
                                 model.net_s, cfg.d_o, cfg.d_h, phase2);
  model.net_o = obs.obs_encoder;
  model.net_h = obs.history_encoder;
  model.d_o = cfg.d_o;
  model.d_h = H.cols() > 0 ? cfg.d_h : 1;
  if (H.cols() == 0) model.history_length = 0;

  // Full-data operator refits on the trained features.
  Matrix Z_s = model.net_s.forward(data.dyn_current);
  Matrix Z_next = model.net_s.forward(data.dyn_next);
  model.dyn_op = fit_cme_dynamics(Z_s, Z_next, scaled_lambda(cfg.lambda, Z_s));

  Matrix Z_s_obs = model.net_s.forward(data.obs_states);
  Matrix Z_o = augment_constant(model.net_o.forward(data.obs_values));
  Matrix Z_h = model.history_features(H);
  if (model.history_length > 0) Z_h = augment_constant(Z_h);
  Matrix W = tensor_features(Z_o, Z_h);
  model.inv_obs_op =
      fit_cme_inverse_obs(Z_s_obs, Z_o, Z_h, scaled_lambda(cfg.lambda, W));
  fit_affine_preimage(model, data.dyn_current, Z_s, cfg.lambda);
  ErrorCovariances cov = estimate_error_covariances(
      Z_s, Z_next, model.dyn_op, Z_s_obs, W, model.inv_obs_op);
  model.B = cov.B;
  model.R = cov.R;
  model.Q = cov.Q;
  return model;
}

}  // namespace tvar
