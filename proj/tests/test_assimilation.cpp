#include <doctest.h>

#include <chrono>
#include <cmath>

#include "tvar/assimilation.hpp"

using namespace tvar;

namespace {

Matrix random_matrix(int r, int c, Rng& rng) {
  Matrix m(r, c);
  for (int i = 0; i < r; ++i) m.row(i) = standard_normal(c, rng).transpose();
  return m;
}

Matrix random_spd(int d, Rng& rng) {
  Matrix M = random_matrix(d, d, rng);
  return M * M.transpose() / d + Matrix::Identity(d, d);
}

DenseNet identity_net(int d) {
  DenseNet net;
  DenseLayer l;
  l.weight = Matrix::Identity(d, d);
  l.bias = Vector::Zero(d);
  l.activation = Activation::None;
  net.layers.push_back(l);
  return net;
}

/// Deep-path model whose feature maps are the identity, so the feature-space
/// problem can be posed directly in test coordinates.
FeatureSpaceModel identity_model(int d, const Matrix& C, const Matrix& B,
                                 const Matrix& R, const Matrix& Q) {
  FeatureSpaceModel model;
  model.path = FeaturePath::Deep;
  model.d_s = d;
  model.d_o = d;
  model.d_h = 1;
  model.history_length = 0;
  model.net_s = identity_net(d);
  model.net_s_inv = identity_net(d);
  model.net_o = identity_net(d);
  // assimilate() prepends a constant-1 column to the observation factor, so
  // the operator that reproduces the raw observation is [0 | I].
  model.inv_obs_op = Matrix::Zero(d, d + 1);
  model.inv_obs_op.rightCols(d) = Matrix::Identity(d, d);
  model.preimage = Matrix::Identity(d, d);
  model.dyn_op = C;
  model.B = B;
  model.R = R;
  model.Q = Q;
  return model;
}

ObservationWindow window_from_pseudo(const Matrix& pseudo) {
  ObservationWindow w;
  w.observations = pseudo;
  w.histories = Matrix(pseudo.rows(), 0);
  return w;
}

}  // namespace

TEST_CASE("single-step window averages background and pseudo-observation") {
  const int d = 3;
  Matrix I = Matrix::Identity(d, d);
  FeatureSpaceModel model = identity_model(d, 0.5 * I, I, I, I);
  Matrix pseudo(1, d);
  pseudo << 1.0, 2.0, 3.0;
  Vector s_b(d);
  s_b << 3.0, 0.0, 1.0;

  AssimilationResult res =
      assimilate(model, window_from_pseudo(pseudo), s_b, 0);
  // T=0: D0 = B^{-1} + R^{-1} = 2I, rhs = zb + zhat -> z = (zb + zhat)/2.
  Vector expect = 0.5 * (s_b + pseudo.row(0).transpose());
  CHECK((res.states.row(0).transpose() - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero dynamics operator decouples the timesteps") {
  const int d = 2;
  Matrix I = Matrix::Identity(d, d);
  FeatureSpaceModel model = identity_model(d, Matrix::Zero(d, d), I, I, I);
  Matrix pseudo(4, d);
  pseudo << 1, 2, 3, 4, 5, 6, 7, 8;
  Vector s_b(d);
  s_b << 10.0, 20.0;

  QuadraticSystem sys =
      assemble(model, pseudo, s_b);
  for (const auto& off : sys.off)
    CHECK(off.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  for (const auto& diag : sys.diag)
    CHECK((diag - 2.0 * I).cwiseAbs().maxCoeff() < 1e-12);

  AssimilationResult res =
      assimilate(model, window_from_pseudo(pseudo), s_b, 0);
  // z0 = (zb + zhat0)/2; interior/final z_t = zhat_t / 2.
  CHECK(res.feature_trajectory(0, 0) == doctest::Approx((10.0 + 1.0) / 2));
  CHECK(res.feature_trajectory(1, 0) == doctest::Approx(3.0 / 2));
  CHECK(res.feature_trajectory(3, 1) == doctest::Approx(8.0 / 2));
}

TEST_CASE("solution is stationary: A z = g to 1e-8") {
  Rng rng = derived_rng(1, 0);
  const int d = 8, T = 12;
  Matrix C = 0.8 * random_matrix(d, d, rng) / std::sqrt((double)d);
  FeatureSpaceModel model = identity_model(d, C, random_spd(d, rng),
                                           random_spd(d, rng),
                                           random_spd(d, rng));
  Matrix pseudo = random_matrix(T + 1, d, rng);
  Vector s_b = standard_normal(d, rng);

  QuadraticSystem sys = assemble(model, pseudo, s_b);
  Vector z = solve_block_tridiagonal(sys);
  Vector grad = sys.dense() * z - sys.rhs;
  CHECK(grad.norm() / sys.rhs.norm() < 1e-8);
}

TEST_CASE("quadratic cost obeys the exact Taylor identity") {
  Rng rng = derived_rng(2, 0);
  const int d = 5, T = 6;
  Matrix C = 0.7 * random_matrix(d, d, rng) / std::sqrt((double)d);
  FeatureSpaceModel model = identity_model(d, C, random_spd(d, rng),
                                           random_spd(d, rng),
                                           random_spd(d, rng));
  Matrix pseudo = random_matrix(T + 1, d, rng);
  Vector s_b = standard_normal(d, rng);

  QuadraticSystem sys = assemble(model, pseudo, s_b);
  Vector z = solve_block_tridiagonal(sys);
  Vector delta = standard_normal((T + 1) * d, rng);

  // At the stationary point, J(z + delta) - J(z) = delta^T A delta exactly.
  double lhs = quadratic_cost(model, pseudo, s_b, z + delta) -
               quadratic_cost(model, pseudo, s_b, z);
  double rhs = delta.dot(sys.dense() * delta);
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-8));
}

TEST_CASE("block-tridiagonal solve matches a dense solve on 50 systems") {
  Rng rng = derived_rng(3, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 2 + (trial % 5);
    const int T = 1 + (trial % 9);
    Matrix C = 0.9 * random_matrix(d, d, rng) / std::sqrt((double)d);
    FeatureSpaceModel model = identity_model(d, C, random_spd(d, rng),
                                             random_spd(d, rng),
                                             random_spd(d, rng));
    Matrix pseudo = random_matrix(T + 1, d, rng);
    Vector s_b = standard_normal(d, rng);

    QuadraticSystem sys = assemble(model, pseudo, s_b);
    Vector z_block = solve_block_tridiagonal(sys);
    Vector z_dense = sys.dense().ldlt().solve(sys.rhs);
    CHECK((z_block - z_dense).cwiseAbs().maxCoeff() /
              (1.0 + z_dense.cwiseAbs().maxCoeff()) <
          1e-10);
  }
}

TEST_CASE("consistent data is recovered to 1e-6") {
  Rng rng = derived_rng(4, 0);
  const int d = 6, T = 8;
  Matrix C = 0.8 * random_matrix(d, d, rng) / std::sqrt((double)d);
  Matrix I = Matrix::Identity(d, d);
  FeatureSpaceModel model = identity_model(d, C, I, I, I);

  // Truth follows the dynamics exactly; pseudo-observations and background
  // are noise-free, so the zero-cost trajectory is the unique minimizer.
  Matrix truth(T + 1, d);
  truth.row(0) = standard_normal(d, rng).transpose();
  for (int t = 0; t < T; ++t)
    truth.row(t + 1) = (C * truth.row(t).transpose()).transpose();

  AssimilationResult res =
      assimilate(model, window_from_pseudo(truth), truth.row(0), 0);
  CHECK((res.feature_trajectory - truth).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(res.objective < 1e-10);
}

TEST_CASE("forecast applies the dynamics operator repeatedly") {
  Rng rng = derived_rng(5, 0);
  const int d = 4;
  Matrix C = random_matrix(d, d, rng);
  Matrix I = Matrix::Identity(d, d);
  FeatureSpaceModel model = identity_model(d, C, I, I, I);
  Vector z0 = standard_normal(d, rng);
  Matrix F = forecast_only(model, z0, 3);
  Vector z = z0;
  for (int t = 0; t < 3; ++t) {
    z = C * z;
    CHECK((F.row(t).transpose() - z).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("analysis objective is no worse than the background rollout") {
  Rng rng = derived_rng(6, 0);
  const int d = 7, T = 10;
  Matrix C = 0.85 * random_matrix(d, d, rng) / std::sqrt((double)d);
  FeatureSpaceModel model = identity_model(d, C, random_spd(d, rng),
                                           random_spd(d, rng),
                                           random_spd(d, rng));
  Matrix pseudo = random_matrix(T + 1, d, rng);
  Vector s_b = standard_normal(d, rng);

  AssimilationResult res =
      assimilate(model, window_from_pseudo(pseudo), s_b, 0);

  Vector rollout((T + 1) * d);
  Vector z = s_b;
  rollout.segment(0, d) = z;
  for (int t = 1; t <= T; ++t) {
    z = C * z;
    rollout.segment(t * d, d) = z;
  }
  CHECK(res.objective <=
        quadratic_cost(model, pseudo, s_b, rollout) + 1e-12);
}

TEST_CASE("diagonal covariance mode uses the diagonals only") {
  Rng rng = derived_rng(7, 0);
  const int d = 4, T = 3;
  Matrix C = 0.5 * random_matrix(d, d, rng);
  FeatureSpaceModel model = identity_model(d, C, random_spd(d, rng),
                                           random_spd(d, rng),
                                           random_spd(d, rng));
  Matrix pseudo = random_matrix(T + 1, d, rng);
  Vector s_b = standard_normal(d, rng);

  QuadraticSystem full = assemble(model, pseudo, s_b, false);
  QuadraticSystem diag = assemble(model, pseudo, s_b, true);
  CHECK((full.diag[1] - diag.diag[1]).norm() > 1e-8);

  FeatureSpaceModel diag_model = model;
  diag_model.B = model.B.diagonal().asDiagonal();
  diag_model.R = model.R.diagonal().asDiagonal();
  diag_model.Q = model.Q.diagonal().asDiagonal();
  QuadraticSystem ref = assemble(diag_model, pseudo, s_b, false);
  CHECK((ref.diag[1] - diag.diag[1]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("solve time grows roughly linearly in the horizon") {
  Rng rng = derived_rng(8, 0);
  const int d = 24;
  Matrix C = 0.8 * random_matrix(d, d, rng) / std::sqrt((double)d);
  FeatureSpaceModel model = identity_model(d, C, random_spd(d, rng),
                                           random_spd(d, rng),
                                           random_spd(d, rng));
  Vector s_b = standard_normal(d, rng);

  auto time_solve = [&](int T) {
    Matrix pseudo = random_matrix(T + 1, d, rng);
    QuadraticSystem sys = assemble(model, pseudo, s_b);
    auto t0 = std::chrono::steady_clock::now();
    for (int rep = 0; rep < 5; ++rep) solve_block_tridiagonal(sys);
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count();
  };
  time_solve(100);  // warm-up
  double t1 = time_solve(100);
  double t2 = time_solve(400);
  // A dense factorization would scale by 64x here; the block sweep is ~4x.
  CHECK(t2 / t1 < 16.0);
}
