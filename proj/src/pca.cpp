// SPDX-License-Identifier: Apache-2.0
#include "baim/pca.hpp"

#include <algorithm>
#include <cmath>

namespace baim {

PcaModel fit_pca(const MatD& vectors, int target_dim) {
  const int n = static_cast<int>(vectors.rows());
  const int d = static_cast<int>(vectors.cols());
  if (n < 2) throw ValidationError("PCA needs at least 2 vectors");
  if (target_dim < 1) throw ValidationError("target_dim must be positive");

  PcaModel model;
  model.target_dim = target_dim;
  model.mean = vectors.colwise().mean().transpose();
  MatD centered = vectors.rowwise() - model.mean.transpose();
  MatD cov = (centered.transpose() * centered) / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<MatD> solver(cov);
  if (solver.info() != Eigen::Success) {
    throw NumericError("PCA eigendecomposition failed");
  }

  const int k = std::min({target_dim, d, n - 1});
  model.components.resize(k, d);
  model.explained_variance.resize(k);
  // Eigen returns eigenvalues in increasing order; take the top k.
  for (int i = 0; i < k; ++i) {
    const int src = d - 1 - i;
    VecD comp = solver.eigenvectors().col(src);
    // Sign convention: largest-magnitude entry positive, lowest index wins
    // among equal magnitudes.
    int arg = 0;
    for (int j = 1; j < d; ++j) {
      if (std::abs(comp(j)) > std::abs(comp(arg))) arg = j;
    }
    if (comp(arg) < 0) comp = -comp;
    model.components.row(i) = comp.transpose();
    model.explained_variance(i) = std::max(0.0, solver.eigenvalues()(src));
  }

  const double tol = 1e-12 * std::max(1.0, cov.trace());
  model.effective_rank = 0;
  for (int i = 0; i < k; ++i) {
    if (model.explained_variance(i) > tol) ++model.effective_rank;
  }
  return model;
}

VecD apply_pca(const PcaModel& model, const VecD& v) {
  if (v.size() != model.input_dim()) {
    throw ValidationError("PCA input width " + std::to_string(v.size()) +
                          " does not match model width " +
                          std::to_string(model.input_dim()));
  }
  VecD out = VecD::Zero(model.target_dim);
  out.head(model.k()) = model.components * (v - model.mean);
  return out;
}

}  // namespace baim
