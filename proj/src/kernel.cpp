#include "tvar/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace tvar {

Standardizer Standardizer::fit(const Matrix& X) {
  Standardizer s;
  s.mean = X.colwise().mean();
  Matrix centered = X.rowwise() - s.mean.transpose();
  Vector var = centered.array().square().colwise().mean();
  s.scale.resize(var.size());
  for (int i = 0; i < var.size(); ++i) {
    const double sd = std::sqrt(var[i]);
    s.scale[i] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }
  return s;
}

Matrix Standardizer::apply(const Matrix& X) const {
  return (X.rowwise() - mean.transpose()).array().rowwise() *
         scale.transpose().array();
}

Vector Standardizer::apply(const Vector& x) const {
  return (x - mean).cwiseProduct(scale);
}

Matrix gram(const Matrix& X, const Matrix& Y, const KernelSpec& spec) {
  spec.validate();
  if (X.cols() != Y.cols()) throw SpecError("gram: dimension mismatch");
  const double inv2g2 = 1.0 / (2.0 * spec.lengthscale * spec.lengthscale);
  Vector xn = X.rowwise().squaredNorm();
  Vector yn = Y.rowwise().squaredNorm();
  Matrix d2 = -2.0 * (X * Y.transpose());
  d2.colwise() += xn;
  d2.rowwise() += yn.transpose();
  return (-d2.cwiseMax(0.0) * inv2g2).array().exp();
}

double median_heuristic(const Matrix& X, Rng& rng) {
  const int n = static_cast<int>(X.rows());
  if (n < 2) throw SpecError("median_heuristic: need at least 2 points");

  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const int cap = 2000;
  if (n > cap) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(cap);
  }
  std::vector<double> dists;
  dists.reserve(idx.size() * (idx.size() - 1) / 2);
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = i + 1; j < idx.size(); ++j)
      dists.push_back((X.row(idx[i]) - X.row(idx[j])).norm());
  const std::size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + mid, dists.end());
  const double med = dists[mid];
  if (med <= 0) throw NumericError("median_heuristic: all points identical");
  return med;
}

NystromBasis fit_nystrom_pca(const Matrix& X, int n_landmark, int d,
                             const KernelSpec& spec, Rng& rng, bool center,
                             bool strict) {
  const int n = static_cast<int>(X.rows());
  if (d > n_landmark || n_landmark > n)
    throw SpecError("fit_nystrom_pca: need d <= n_landmark <= n");

  NystromBasis basis;
  basis.kernel = spec;
  basis.centered = center;
  basis.standardizer = Standardizer::fit(X);
  Matrix Xs = basis.standardizer.apply(X);

  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  basis.landmarks.resize(n_landmark, X.cols());
  for (int i = 0; i < n_landmark; ++i) basis.landmarks.row(i) = Xs.row(idx[i]);

  Matrix K = gram(basis.landmarks, basis.landmarks, spec);
  basis.center = K.colwise().mean();
  basis.center_total = K.mean();
  Matrix Kc = K;
  if (center) {
    Kc.rowwise() -= basis.center.transpose();
    Kc.colwise() -= basis.center;
    Kc.array() += basis.center_total;
  }

  Eigen::SelfAdjointEigenSolver<Matrix> eig(Kc);
  if (eig.info() != Eigen::Success)
    throw NumericError("fit_nystrom_pca: eigendecomposition failed");
  // SelfAdjointEigenSolver sorts ascending; take the top d.
  const Vector evals = eig.eigenvalues();
  const Matrix evecs = eig.eigenvectors();

  const double floor = 1e-12 * std::max(1.0, evals.cwiseAbs().maxCoeff());
  int rank = 0;
  for (int i = 0; i < evals.size(); ++i)
    if (evals[i] > floor) ++rank;
  if (rank < d) {
    if (strict)
      throw NumericError("fit_nystrom_pca: landmark Gram rank " +
                         std::to_string(rank) + " < requested d " +
                         std::to_string(d));
    d = rank;  // shrink with the degenerate directions dropped
  }

  basis.eigenvalues.resize(d);
  basis.projection.resize(d, n_landmark);
  for (int i = 0; i < d; ++i) {
    const int src = static_cast<int>(evals.size()) - 1 - i;
    basis.eigenvalues[i] = evals[src];
    // Scaled so each coordinate has roughly unit variance over the landmark
    // set (for the landmarks themselves the i-th coordinate is sqrt(l)·u_i).
    // Downstream ridge fits and covariance estimates then see comparably
    // scaled coordinates instead of the raw eigenvalue spread.
    basis.projection.row(i) =
        evecs.col(src).transpose() *
        (std::sqrt(static_cast<double>(n_landmark)) /
         std::max(evals[src], 1e-12));
  }
  return basis;
}

Matrix project(const NystromBasis& basis, const Matrix& X) {
  if (X.cols() != basis.landmarks.cols())
    throw SpecError("project: dimension mismatch");
  Matrix Xs = basis.standardizer.apply(X);
  Matrix K = gram(Xs, basis.landmarks, basis.kernel);  // n x l
  if (basis.centered) {
    Vector rowmean = K.rowwise().mean();
    K.rowwise() -= basis.center.transpose();
    K.colwise() -= rowmean;
    K.array() += basis.center_total;
  }
  return K * basis.projection.transpose();
}

}  // namespace tvar
