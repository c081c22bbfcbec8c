#pragma once

#include "tvar/common.hpp"

namespace tvar {

enum class LengthscaleRule { Fixed, MedianHeuristic, CrossValidated };

struct KernelSpec {
  double lengthscale = 1.0;  // gamma in exp(-||x-y||^2 / (2 gamma^2))
  LengthscaleRule rule = LengthscaleRule::Fixed;

  void validate() const {
    if (lengthscale <= 0) throw SpecError("kernel lengthscale must be > 0");
  }
};

/// Per-dimension affine standardization to zero mean / unit variance.
struct Standardizer {
  Vector mean;
  Vector scale;  // 1 / std, with a floor on std

  static Standardizer fit(const Matrix& X);
  Matrix apply(const Matrix& X) const;
  Vector apply(const Vector& x) const;
};

struct NystromBasis {
  Matrix landmarks;    // n_landmark x dim, in standardized coordinates
  KernelSpec kernel;
  Standardizer standardizer;
  Matrix projection;   // d x n_landmark
  Vector eigenvalues;  // d, descending
  Vector center;       // column means of the landmark Gram (for centering)
  double center_total = 0.0;  // grand mean of the landmark Gram
  bool centered = true;

  int dim_out() const { return static_cast<int>(projection.rows()); }
};

/// Gaussian Gram matrix: entry (i,j) = exp(-||x_i - y_j||^2 / (2 gamma^2)).
Matrix gram(const Matrix& X, const Matrix& Y, const KernelSpec& spec);

/// Median of pairwise distances over a subsample of at most 2000 points.
double median_heuristic(const Matrix& X, Rng& rng);

/// Uniform landmark selection + kernel PCA of the centered landmark Gram.
/// `strict` errors on rank deficiency instead of shrinking d.
NystromBasis fit_nystrom_pca(const Matrix& X, int n_landmark, int d,
                             const KernelSpec& spec, Rng& rng,
                             bool center = true, bool strict = false);

/// Map rows of X to d kernel-PCA coordinates.
Matrix project(const NystromBasis& basis, const Matrix& X);

}  // namespace tvar
