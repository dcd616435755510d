// SPDX-License-Identifier: Apache-2.0
#pragma once

// Independent reference implementations used to cross-check the production
// code: a cyclic Jacobi eigensolver, a scalar-loop re-implementation of the
// stage-embedding extraction (pooling + PCA + projection), and a pairwise
// AUC. Written with plain loops on purpose — they share no code with src/,
// so agreement is evidence rather than tautology.

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "baim/common.hpp"
#include "baim/dump.hpp"
#include "baim/embed.hpp"

namespace baim::oracle {

struct Eigh {
  VecD values;   // descending
  MatD vectors;  // matching eigenvectors in columns
};

// Cyclic Jacobi rotations on a symmetric matrix. O(n) row/column updates
// per rotation; plenty for the small widths the oracles run at.
inline Eigh jacobi_eigh(MatD a) {
  const int n = static_cast<int>(a.rows());
  MatD v = MatD::Identity(n, n);
  for (int sweep = 0; sweep < 200; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    }
    if (off < 1e-28) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double phi = 0.5 * std::atan2(2.0 * a(p, q), a(q, q) - a(p, p));
        const double c = std::cos(phi), s = std::sin(phi);
        for (int k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&a](int x, int y) { return a(x, x) > a(y, y); });
  Eigh out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (int i = 0; i < n; ++i) {
    out.values(i) = a(order[i], order[i]);
    out.vectors.col(i) = v.col(order[i]);
  }
  return out;
}

// Scalar-loop pooling of one dump's stage vector under a strategy.
inline VecD pooled_stage_vector(const HiddenStateDump& d, int stage,
                                PoolStrategy strategy) {
  const int L = d.layers, D = d.width;
  if (strategy == PoolStrategy::kHolistic) {
    std::set<int> tokens;
    for (int p = 0; p < kStageCount; ++p) {
      for (int t = d.spans[p].first; t <= d.spans[p].second; ++t) tokens.insert(t);
    }
    VecD out = VecD::Zero(D);
    for (int l = 0; l < L; ++l) {
      for (int dim = 0; dim < D; ++dim) {
        double s = 0.0;
        for (int t : tokens) s += d.value(l, t, dim);
        out(dim) += s / static_cast<double>(tokens.size());
      }
    }
    return out / static_cast<double>(L);
  }
  const int lo = d.spans[stage].first, hi = d.spans[stage].second;
  std::vector<VecD> per_layer(L, VecD::Zero(D));
  for (int l = 0; l < L; ++l) {
    for (int dim = 0; dim < D; ++dim) {
      double s = 0.0;
      for (int t = lo; t <= hi; ++t) s += d.value(l, t, dim);
      per_layer[l](dim) = s / static_cast<double>(hi - lo + 1);
    }
  }
  if (strategy == PoolStrategy::kFinalLayer) return per_layer[L - 1];
  VecD out = VecD::Zero(D);
  for (int l = 0; l < L; ++l) out += per_layer[l];
  return out / static_cast<double>(L);
}

struct BruteForceTable {
  MatD rows;       // (items * 4) x target_dim, zero-padded past rank
  VecD explained;  // top-k eigenvalues of the sample covariance, descending
};

// The whole extraction pipeline re-done with loops: pool every (item, stage)
// vector, center, form the covariance with an explicit double loop, run the
// Jacobi solver, apply the production sign convention (largest-magnitude
// entry positive, lowest index wins), and project.
inline BruteForceTable brute_force_table(const std::vector<HiddenStateDump>& dumps,
                                         int target_dim, PoolStrategy strategy) {
  const int n_items = static_cast<int>(dumps.size());
  const int D = dumps[0].width;
  const int N = n_items * kStageCount;
  MatD pooled(N, D);
  for (const HiddenStateDump& d : dumps) {
    for (int p = 0; p < kStageCount; ++p) {
      pooled.row(d.item_id * kStageCount + p) =
          pooled_stage_vector(d, p, strategy).transpose();
    }
  }

  VecD mean = VecD::Zero(D);
  for (int r = 0; r < N; ++r) {
    for (int c = 0; c < D; ++c) mean(c) += pooled(r, c);
  }
  mean /= static_cast<double>(N);
  MatD centered(N, D);
  for (int r = 0; r < N; ++r) {
    for (int c = 0; c < D; ++c) centered(r, c) = pooled(r, c) - mean(c);
  }

  MatD cov = MatD::Zero(D, D);
  for (int i = 0; i < D; ++i) {
    for (int j = 0; j < D; ++j) {
      double s = 0.0;
      for (int r = 0; r < N; ++r) s += centered(r, i) * centered(r, j);
      cov(i, j) = s / static_cast<double>(N - 1);
    }
  }

  const Eigh eig = jacobi_eigh(cov);
  const int k = std::min({target_dim, D, N - 1});

  BruteForceTable out;
  out.explained.resize(k);
  MatD components(k, D);
  for (int i = 0; i < k; ++i) {
    VecD comp = eig.vectors.col(i);
    int arg = 0;
    for (int j = 1; j < D; ++j) {
      if (std::abs(comp(j)) > std::abs(comp(arg))) arg = j;
    }
    if (comp(arg) < 0) comp = -comp;
    components.row(i) = comp.transpose();
    out.explained(i) = std::max(0.0, eig.values(i));
  }

  out.rows = MatD::Zero(N, target_dim);
  for (int r = 0; r < N; ++r) {
    for (int c = 0; c < k; ++c) {
      double s = 0.0;
      for (int d = 0; d < D; ++d) s += components(c, d) * centered(r, d);
      out.rows(r, c) = s;
    }
  }
  return out;
}

// AUC by explicit enumeration of positive-negative pairs; ties count half.
inline double pairwise_auc(const std::vector<double>& scores,
                           const std::vector<int>& labels) {
  double concordant = 0.0;
  std::int64_t pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[i] == 1 && labels[j] == 0) {
        ++pairs;
        if (scores[i] > scores[j]) {
          concordant += 1.0;
        } else if (scores[i] == scores[j]) {
          concordant += 0.5;
        }
      }
    }
  }
  return concordant / static_cast<double>(pairs);
}

}  // namespace baim::oracle
