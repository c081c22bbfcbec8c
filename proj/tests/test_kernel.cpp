#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "tvar/kernel.hpp"

using namespace tvar;

TEST_CASE("gram matrix hand values, symmetry, unit diagonal") {
  KernelSpec k;
  k.lengthscale = 1.0;
  Matrix X(3, 2);
  X << 0, 0, 1, 0, 0, 2;
  Matrix G = gram(X, X, k);
  CHECK(G(0, 0) == doctest::Approx(1.0));
  CHECK(G(1, 1) == doctest::Approx(1.0));
  // exp(-1/2) = 0.60653...
  CHECK(G(0, 1) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(G(0, 1) == doctest::Approx(0.6065306597).epsilon(1e-9));
  CHECK(G(0, 2) == doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
  // squared distance between rows 1 and 2 is 1 + 4 = 5
  CHECK(G(1, 2) == doctest::Approx(std::exp(-2.5)).epsilon(1e-12));
  CHECK((G - G.transpose()).norm() == doctest::Approx(0.0));
}

TEST_CASE("gram matrix is positive semidefinite") {
  Rng rng = derived_rng(1, 0);
  Matrix X(30, 4);
  for (int i = 0; i < 30; ++i) X.row(i) = standard_normal(4, rng).transpose();
  KernelSpec k;
  k.lengthscale = 0.7;
  Matrix G = gram(X, X, k);
  Eigen::SelfAdjointEigenSolver<Matrix> es(G);
  CHECK(es.eigenvalues().minCoeff() >= -1e-10);
}

TEST_CASE("median heuristic hand cases") {
  Rng rng = derived_rng(2, 0);
  Matrix X(3, 1);
  X << 1, 2, 3;
  // pairwise distances {1, 1, 2}; median = 1... with three values the middle
  // one is 1, but distances here are |1-2|=1, |1-3|=2, |2-3|=1 -> median 1.
  CHECK(median_heuristic(X, rng) == doctest::Approx(1.0));

  // two points at squared distance 4+16=20
  Matrix Y(2, 2);
  Y << 0, 0, 2, 4;
  CHECK(median_heuristic(Y, rng) ==
        doctest::Approx(std::sqrt(20.0)).epsilon(1e-12));

  Matrix Z = Matrix::Zero(5, 2);
  CHECK_THROWS_AS(median_heuristic(Z, rng), NumericError);
}

TEST_CASE("nystrom with all points as landmarks reproduces the centered gram") {
  Rng rng = derived_rng(3, 0);
  const int n = 40;
  Matrix X(n, 3);
  for (int i = 0; i < n; ++i) X.row(i) = standard_normal(3, rng).transpose();
  KernelSpec k;
  k.lengthscale = 1.3;
  NystromBasis basis = fit_nystrom_pca(X, n, n, k, rng, /*center=*/true);
  Matrix Z = project(basis, X);
  // Eigenvalue-weighted feature inner products must equal the centered Gram
  // of the (standardized) inputs when every point is a landmark and no
  // dimensions are dropped (coordinates are unit-variance scaled, so the
  // Gram is recovered by re-weighting with eigenvalue / n).
  Matrix Xs = basis.standardizer.apply(X);
  Matrix G = gram(Xs, Xs, basis.kernel);
  Matrix H = Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / n);
  Matrix Gc = H * G * H;
  Matrix W = basis.eigenvalues.asDiagonal();
  CHECK((Z * W * Z.transpose() / n - Gc).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("nystrom shrinks rank-deficient bases and strict mode throws") {
  Rng rng = derived_rng(4, 0);
  // 6 distinct points repeated: the landmark Gram has rank <= 6.
  Matrix X(24, 2);
  for (int i = 0; i < 24; ++i) X.row(i) << (i % 6), 2.0 * (i % 6);
  KernelSpec k;
  k.lengthscale = 1.0;
  NystromBasis b = fit_nystrom_pca(X, 24, 10, k, rng);
  CHECK(b.dim_out() <= 6);
  Rng rng2 = derived_rng(4, 0);
  CHECK_THROWS_AS(
      fit_nystrom_pca(X, 24, 10, k, rng2, true, /*strict=*/true),
      NumericError);
}

TEST_CASE("kernel PCA separates well-spaced clusters") {
  Rng rng = derived_rng(5, 0);
  const int per = 30;
  Matrix X(2 * per, 2);
  for (int i = 0; i < per; ++i) {
    X.row(i) = 0.05 * standard_normal(2, rng).transpose();
    X.row(per + i) =
        Vector::Constant(2, 6.0).transpose() +
        0.05 * standard_normal(2, rng).transpose();
  }
  KernelSpec k;
  k.lengthscale = 1.0;
  NystromBasis b = fit_nystrom_pca(X, 2 * per, 2, k, rng);
  Matrix Z = project(b, X);
  // First coordinate must split the clusters with a margin.
  double min_a = Z.col(0).head(per).minCoeff();
  double max_a = Z.col(0).head(per).maxCoeff();
  double min_b = Z.col(0).tail(per).minCoeff();
  double max_b = Z.col(0).tail(per).maxCoeff();
  bool separated = (max_a < min_b) || (max_b < min_a);
  CHECK(separated);
}

TEST_CASE("projected features of uncorrelated coordinates") {
  // Nystrom coordinates of the landmark set itself are uncorrelated across
  // components (they diagonalize the centered Gram).
  Rng rng = derived_rng(6, 0);
  const int n = 50;
  Matrix X(n, 3);
  for (int i = 0; i < n; ++i) X.row(i) = standard_normal(3, rng).transpose();
  KernelSpec k;
  k.lengthscale = 1.0;
  NystromBasis b = fit_nystrom_pca(X, n, 6, k, rng);
  Matrix Z = project(b, X);
  Matrix C = Z.transpose() * Z;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      if (i != j) CHECK(std::abs(C(i, j)) < 1e-8);
}

TEST_CASE("nystrom reconstruction error is non-increasing in d") {
  Rng rng = derived_rng(7, 0);
  const int n = 60;
  Matrix X(n, 4);
  for (int i = 0; i < n; ++i) X.row(i) = standard_normal(4, rng).transpose();
  KernelSpec k;
  k.lengthscale = 1.5;

  Matrix Xs;
  Matrix Gc;
  double prev = 1e100;
  for (int d : {2, 4, 8, 16}) {
    Rng r = derived_rng(7, 1);  // same landmark shuffle for every d
    NystromBasis b = fit_nystrom_pca(X, n, d, k, r);
    Matrix Z = project(b, X);
    if (Gc.size() == 0) {
      Xs = b.standardizer.apply(X);
      Matrix G = gram(Xs, Xs, b.kernel);
      Matrix H = Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / n);
      Gc = H * G * H;
    }
    Matrix W = b.eigenvalues.asDiagonal();
    double err = (Z * W * Z.transpose() / n - Gc).norm();
    CHECK(err <= prev + 1e-10);
    prev = err;
  }
}

TEST_CASE("standardizer round trip and degenerate column floor") {
  Matrix X(4, 2);
  X << 1, 5, 2, 5, 3, 5, 4, 5;
  Standardizer st = Standardizer::fit(X);
  Matrix Y = st.apply(X);
  CHECK(Y.col(0).mean() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(Y.col(1).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  CHECK(std::isfinite(st.scale[1]));
}
