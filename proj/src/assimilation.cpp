#include "tvar/assimilation.hpp"

#include <chrono>
#include <cmath>

namespace tvar {

namespace {

Matrix spd_inverse(const Matrix& C, const char* name) {
  Eigen::LLT<Matrix> llt(C);
  if (llt.info() != Eigen::Success)
    throw NumericError(std::string("covariance ") + name +
                       " is not SPD; increase the jitter");
  return llt.solve(Matrix::Identity(C.rows(), C.cols()));
}

Matrix maybe_diagonal(const Matrix& C, bool diagonal) {
  if (!diagonal) return C;
  return C.diagonal().asDiagonal();
}

}  // namespace

Matrix QuadraticSystem::dense() const {
  const int d = block_dim();
  const int T = horizon();
  Matrix A = Matrix::Zero((T + 1) * d, (T + 1) * d);
  for (int t = 0; t <= T; ++t) A.block(t * d, t * d, d, d) = diag[t];
  for (int t = 0; t < T; ++t) {
    A.block(t * d, (t + 1) * d, d, d) = off[t];
    A.block((t + 1) * d, t * d, d, d) = off[t].transpose();
  }
  return A;
}

Matrix precompute_pseudo_observations(const FeatureSpaceModel& model,
                                      const ObservationWindow& window) {
  Matrix Z_o = augment_constant(model.obs_features(window.observations));
  Matrix Z_h = model.history_features(window.histories);
  if (model.history_length > 0) Z_h = augment_constant(Z_h);
  Matrix W = tensor_features(Z_o, Z_h);
  Matrix pseudo = W * model.inv_obs_op.transpose();
  for (int t = 0; t < pseudo.rows(); ++t)
    if (!pseudo.row(t).allFinite())
      throw NumericError("non-finite pseudo-observation at timestep " +
                         std::to_string(t));
  return pseudo;
}

QuadraticSystem assemble(const FeatureSpaceModel& model,
                         const Matrix& pseudo_obs, const Vector& s_b,
                         bool diagonal_covariances) {
  const int T = static_cast<int>(pseudo_obs.rows()) - 1;
  const int d = model.d_s;
  if (T < 0) throw SpecError("assemble: need at least one timestep");

  const Matrix Binv = spd_inverse(maybe_diagonal(model.B, diagonal_covariances), "B");
  const Matrix Rinv = spd_inverse(maybe_diagonal(model.R, diagonal_covariances), "R");
  const Matrix Qinv = spd_inverse(maybe_diagonal(model.Q, diagonal_covariances), "Q");
  const Matrix& C = model.dyn_op;
  const Matrix CtQinvC = C.transpose() * Qinv * C;
  const Matrix CtQinv = C.transpose() * Qinv;

  Vector zb = model.state_features(s_b.transpose()).row(0);

  QuadraticSystem sys;
  sys.diag.resize(T + 1);
  sys.off.resize(std::max(0, T));
  sys.rhs = Vector::Zero((T + 1) * d);

  for (int t = 0; t <= T; ++t) {
    Matrix D = Rinv;
    if (t == 0) D += Binv;
    if (t > 0) D += Qinv;
    if (t < T) D += CtQinvC;
    sys.diag[t] = 0.5 * (D + D.transpose());
    sys.rhs.segment(t * d, d) = Rinv * pseudo_obs.row(t).transpose();
  }
  sys.rhs.segment(0, d) += Binv * zb;
  for (int t = 0; t < T; ++t) sys.off[t] = -CtQinv;
  return sys;
}

Vector solve_block_tridiagonal(const QuadraticSystem& sys) {
  const int T = sys.horizon();
  const int d = sys.block_dim();

  // Forward block-Cholesky sweep.
  std::vector<Eigen::LLT<Matrix>> factors(T + 1);
  std::vector<Vector> y(T + 1);
  Matrix S = sys.diag[0];
  for (int t = 0; t <= T; ++t) {
    if (t > 0)
      S = sys.diag[t] -
          sys.off[t - 1].transpose() *
              factors[t - 1].solve(sys.off[t - 1]);
    factors[t].compute(S);
    if (factors[t].info() != Eigen::Success)
      throw NumericError("block pivot " + std::to_string(t) + " is not SPD");
    y[t] = sys.rhs.segment(t * d, d);
    if (t > 0) y[t] -= sys.off[t - 1].transpose() * factors[t - 1].solve(y[t - 1]);
  }

  // Back-substitution.
  Vector z((T + 1) * d);
  z.segment(T * d, d) = factors[T].solve(y[T]);
  for (int t = T - 1; t >= 0; --t)
    z.segment(t * d, d) =
        factors[t].solve(y[t] - sys.off[t] * z.segment((t + 1) * d, d));
  return z;
}

double quadratic_cost(const FeatureSpaceModel& model, const Matrix& pseudo_obs,
                      const Vector& s_b, const Vector& z_stacked,
                      bool diagonal_covariances) {
  const int T = static_cast<int>(pseudo_obs.rows()) - 1;
  const int d = model.d_s;
  const Matrix Binv = spd_inverse(maybe_diagonal(model.B, diagonal_covariances), "B");
  const Matrix Rinv = spd_inverse(maybe_diagonal(model.R, diagonal_covariances), "R");
  const Matrix Qinv = spd_inverse(maybe_diagonal(model.Q, diagonal_covariances), "Q");
  Vector zb = model.state_features(s_b.transpose()).row(0);

  auto block = [&](int t) { return z_stacked.segment(t * d, d); };
  double cost = 0.0;
  Vector r0 = block(0) - zb;
  cost += r0.dot(Binv * r0);
  for (int t = 0; t < T; ++t) {
    Vector rq = block(t + 1) - model.dyn_op * block(t);
    cost += rq.dot(Qinv * rq);
  }
  for (int t = 0; t <= T; ++t) {
    Vector rr = block(t) - pseudo_obs.row(t).transpose();
    cost += rr.dot(Rinv * rr);
  }
  return cost;
}

AssimilationResult assimilate(const FeatureSpaceModel& model,
                              const ObservationWindow& window,
                              const Vector& s_b, int forecast_steps,
                              bool diagonal_covariances) {
  const auto t0 = std::chrono::steady_clock::now();
  Matrix pseudo = precompute_pseudo_observations(model, window);
  QuadraticSystem sys = assemble(model, pseudo, s_b, diagonal_covariances);
  Vector z = solve_block_tridiagonal(sys);
  const auto t1 = std::chrono::steady_clock::now();

  const int T = sys.horizon();
  const int d = model.d_s;

  AssimilationResult result;
  result.solve_seconds = std::chrono::duration<double>(t1 - t0).count();
  result.feature_trajectory.resize(T + 1, d);
  for (int t = 0; t <= T; ++t)
    result.feature_trajectory.row(t) = z.segment(t * d, d);
  result.states = model.decode(result.feature_trajectory);
  if (!result.states.allFinite())
    throw NumericError("assimilate: decoded state is non-finite");
  result.objective = quadratic_cost(model, pseudo, s_b, z, diagonal_covariances);

  Vector zb = model.state_features(s_b.transpose()).row(0);
  result.background_residual = (result.feature_trajectory.row(0).transpose() - zb).norm();
  double dyn = 0.0, obs = 0.0;
  for (int t = 0; t < T; ++t)
    dyn += (result.feature_trajectory.row(t + 1).transpose() -
            model.dyn_op * result.feature_trajectory.row(t).transpose())
               .squaredNorm();
  for (int t = 0; t <= T; ++t)
    obs += (result.feature_trajectory.row(t) - pseudo.row(t)).squaredNorm();
  result.dynamics_residual = std::sqrt(dyn);
  result.observation_residual = std::sqrt(obs);

  if (forecast_steps > 0)
    result.forecast_states = forecast_only(
        model, result.feature_trajectory.row(T), forecast_steps);
  return result;
}

Matrix forecast_only(const FeatureSpaceModel& model, const Vector& z_start,
                     int forecast_steps) {
  if (forecast_steps < 0) throw SpecError("forecast_only: tau >= 0 required");
  Matrix Z(forecast_steps, model.d_s);
  Vector z = z_start;
  for (int t = 0; t < forecast_steps; ++t) {
    z = model.dyn_op * z;
    Z.row(t) = z;
  }
  return forecast_steps > 0 ? model.decode(Z) : Matrix(0, model.preimage.rows());
}

}  // namespace tvar
