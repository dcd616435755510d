// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "baim/common.hpp"
#include "baim/params.hpp"

namespace baim {

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// The tape is an append-only list of nodes; each op records its output value
// eagerly and a closure that scatters the output gradient back to its input
// nodes (and, for leaves, accumulates into Parameter::grad). Graphs are
// whole-batch and feature-major: activations are (features x batch) with one
// column per sequence in the batch.
//
// The engine is deliberately small: only the ops the models need, no fusion
// beyond column layer norm, single-threaded, deterministic.
template <typename S>
class Tape {
public:
  using Id = int;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const Mat<S>& value(Id id) const { return nodes_[id].val; }
  int rows(Id id) const { return static_cast<int>(nodes_[id].val.rows()); }
  int cols(Id id) const { return static_cast<int>(nodes_[id].val.cols()); }
  size_t size() const { return nodes_.size(); }

  // Smallest distance of any relu input to zero (or clamp input to its
  // boundaries) recorded while building this tape. Finite-difference checks
  // use it to detect evaluation points where a probe would step across a
  // kink, making one-sided derivatives disagree with the analytic side.
  double kink_margin() const { return kink_margin_; }

  // ---- leaves -----------------------------------------------------------

  Id constant(Mat<S> v) { return push(std::move(v)); }

  Id param(Parameter<S>& p) {
    Id id = push(p.value);
    Parameter<S>* pp = &p;
    nodes_[id].back = [id, pp](Tape& t) { pp->grad += t.grads_[id]; };
    return id;
  }

  // Gather rows of a parameter matrix, transposed into columns: output
  // column j is p.value.row(rows[j])^T. This is the embedding-table lookup;
  // backward scatter-adds, so repeated indices accumulate.
  Id take_rows_t(Parameter<S>& p, std::vector<int> row_ids) {
    const int d = static_cast<int>(p.value.cols());
    const int b = static_cast<int>(row_ids.size());
    Mat<S> out(d, b);
    for (int j = 0; j < b; ++j) {
      if (row_ids[j] < 0 || row_ids[j] >= p.value.rows()) {
        throw ValidationError("row index out of range in table lookup");
      }
      out.col(j) = p.value.row(row_ids[j]).transpose();
    }
    Id id = push(std::move(out));
    Parameter<S>* pp = &p;
    nodes_[id].back = [id, pp, row_ids = std::move(row_ids)](Tape& t) {
      const Mat<S>& g = t.grads_[id];
      for (size_t j = 0; j < row_ids.size(); ++j) {
        pp->grad.row(row_ids[j]) += g.col(static_cast<int>(j)).transpose();
      }
    };
    return id;
  }

  // ---- linear algebra ---------------------------------------------------

  Id matmul(Id a, Id b) {
    Id id = push(value(a) * value(b));
    nodes_[id].back = [id, a, b](Tape& t) {
      const Mat<S>& g = t.grads_[id];
      t.grad_ref(a).noalias() += g * t.value(b).transpose();
      t.grad_ref(b).noalias() += t.value(a).transpose() * g;
    };
    return id;
  }

  Id add(Id a, Id b) {
    Id id = push(value(a) + value(b));
    nodes_[id].back = [id, a, b](Tape& t) {
      t.grad_ref(a) += t.grads_[id];
      t.grad_ref(b) += t.grads_[id];
    };
    return id;
  }

  Id sub(Id a, Id b) {
    Id id = push(value(a) - value(b));
    nodes_[id].back = [id, a, b](Tape& t) {
      t.grad_ref(a) += t.grads_[id];
      t.grad_ref(b) -= t.grads_[id];
    };
    return id;
  }

  // Column-broadcast bias: bias is (d x 1), added to every column of a.
  Id add_bias(Id a, Id bias) {
    Mat<S> out = value(a);
    out.colwise() += value(bias).col(0);
    Id id = push(std::move(out));
    nodes_[id].back = [id, a, bias](Tape& t) {
      const Mat<S>& g = t.grads_[id];
      t.grad_ref(a) += g;
      t.grad_ref(bias) += g.rowwise().sum();
    };
    return id;
  }

  Id scale(Id a, S c) {
    Id id = push(value(a) * c);
    nodes_[id].back = [id, a, c](Tape& t) { t.grad_ref(a) += t.grads_[id] * c; };
    return id;
  }

  Id add_scalar(Id a, S c) {
    Id id = push((value(a).array() + c).matrix());
    nodes_[id].back = [id, a](Tape& t) { t.grad_ref(a) += t.grads_[id]; };
    return id;
  }

  Id hadamard(Id a, Id b) {
    Id id = push(value(a).cwiseProduct(value(b)));
    nodes_[id].back = [id, a, b](Tape& t) {
      const Mat<S>& g = t.grads_[id];
      t.grad_ref(a) += g.cwiseProduct(t.value(b));
      t.grad_ref(b) += g.cwiseProduct(t.value(a));
    };
    return id;
  }

  // Elementwise multiply by a constant matrix (dropout masks, batch masks,
  // expert-selection masks). The mask gets no gradient.
  Id cmul(Id a, Mat<S> mask) {
    if (mask.rows() != value(a).rows() || mask.cols() != value(a).cols()) {
      throw ValidationError("mask shape mismatch in cmul");
    }
    Id id = push(value(a).cwiseProduct(mask));
    nodes_[id].back = [id, a, mask = std::move(mask)](Tape& t) {
      t.grad_ref(a) += t.grads_[id].cwiseProduct(mask);
    };
    return id;
  }

  // Scale column j of a (d x B) by entry j of a (1 x B) node. Used for
  // attention-weighted values and gate-probability scaling.
  Id mul_colscale(Id a, Id w) {
    if (rows(w) != 1 || cols(w) != cols(a)) {
      throw ValidationError("column-scale operand must be 1 x cols(a)");
    }
    Mat<S> out = value(a);
    for (int j = 0; j < out.cols(); ++j) out.col(j) *= value(w)(0, j);
    Id id = push(std::move(out));
    nodes_[id].back = [id, a, w](Tape& t) {
      const Mat<S>& g = t.grads_[id];
      Mat<S>& ga = t.grad_ref(a);
      Mat<S>& gw = t.grad_ref(w);
      for (int j = 0; j < g.cols(); ++j) {
        ga.col(j) += g.col(j) * t.value(w)(0, j);
        gw(0, j) += g.col(j).dot(t.value(a).col(j));
      }
    };
    return id;
  }

  // Per-column dot product of two (d x B) nodes -> (1 x B).
  Id coldot(Id a, Id b) {
    if (rows(a) != rows(b) || cols(a) != cols(b)) {
      throw ValidationError("coldot operands must share shape");
    }
    Mat<S> out(1, cols(a));
    for (int j = 0; j < cols(a); ++j) out(0, j) = value(a).col(j).dot(value(b).col(j));
    Id id = push(std::move(out));
    nodes_[id].back = [id, a, b](Tape& t) {
      const Mat<S>& g = t.grads_[id];
      Mat<S>& ga = t.grad_ref(a);
      Mat<S>& gb = t.grad_ref(b);
      for (int j = 0; j < g.cols(); ++j) {
        ga.col(j) += g(0, j) * t.value(b).col(j);
        gb.col(j) += g(0, j) * t.value(a).col(j);
      }
    };
    return id;
  }

  // ---- elementwise nonlinearities ---------------------------------------

  Id relu(Id a) {
    kink_margin_ = std::min(
        kink_margin_, static_cast<double>(value(a).cwiseAbs().minCoeff()));
    Id id = push(value(a).cwiseMax(S(0)));
    nodes_[id].back = [id, a](Tape& t) {
      const Mat<S>& v = t.value(a);
      t.grad_ref(a) +=
          t.grads_[id].cwiseProduct((v.array() > S(0)).template cast<S>().matrix());
    };
    return id;
  }

  Id sigmoid(Id a) {
    Mat<S> out = value(a).unaryExpr([](S x) { return S(1) / (S(1) + std::exp(-x)); });
    Id id = push(std::move(out));
    nodes_[id].back = [id, a](Tape& t) {
      const Mat<S>& y = t.value(id);
      t.grad_ref(a) += t.grads_[id].cwiseProduct(
          y.cwiseProduct((Mat<S>::Ones(y.rows(), y.cols()) - y)));
    };
    return id;
  }

  Id tanh_op(Id a) {
    Mat<S> out = value(a).unaryExpr([](S x) { return std::tanh(x); });
    Id id = push(std::move(out));
    nodes_[id].back = [id, a](Tape& t) {
      const Mat<S>& y = t.value(id);
      t.grad_ref(a) += t.grads_[id].cwiseProduct(
          (Mat<S>::Ones(y.rows(), y.cols()) - y.cwiseProduct(y)));
    };
    return id;
  }

  Id log_op(Id a) {
    Id id = push(value(a).unaryExpr([](S x) { return std::log(x); }));
    nodes_[id].back = [id, a](Tape& t) {
      t.grad_ref(a) += t.grads_[id].cwiseQuotient(t.value(a));
    };
    return id;
  }

  Id square(Id a) {
    Id id = push(value(a).cwiseProduct(value(a)));
    nodes_[id].back = [id, a](Tape& t) {
      t.grad_ref(a) += S(2) * t.grads_[id].cwiseProduct(t.value(a));
    };
    return id;
  }

  Id one_minus(Id a) {
    Id id = push((S(1) - value(a).array()).matrix());
    nodes_[id].back = [id, a](Tape& t) { t.grad_ref(a) -= t.grads_[id]; };
    return id;
  }

  // Clamp into [lo, hi]; gradient passes only strictly inside the interval,
  // so saturated probabilities stop producing updates.
  Id clamp(Id a, S lo, S hi) {
    for (int j = 0; j < cols(a); ++j) {
      for (int i = 0; i < rows(a); ++i) {
        const double v = static_cast<double>(value(a)(i, j));
        kink_margin_ = std::min(kink_margin_, std::abs(v - static_cast<double>(lo)));
        kink_margin_ = std::min(kink_margin_, std::abs(v - static_cast<double>(hi)));
      }
    }
    Id id = push(value(a).cwiseMax(lo).cwiseMin(hi));
    nodes_[id].back = [id, a, lo, hi](Tape& t) {
      const Mat<S>& v = t.value(a);
      Mat<S> pass =
          ((v.array() > lo) && (v.array() < hi)).template cast<S>().matrix();
      t.grad_ref(a) += t.grads_[id].cwiseProduct(pass);
    };
    return id;
  }

  // ---- structure --------------------------------------------------------

  Id slice_rows(Id a, int start, int count) {
    if (start < 0 || count <= 0 || start + count > rows(a)) {
      throw ValidationError("slice_rows range out of bounds");
    }
    Id id = push(value(a).middleRows(start, count));
    nodes_[id].back = [id, a, start, count](Tape& t) {
      t.grad_ref(a).middleRows(start, count) += t.grads_[id];
    };
    return id;
  }

  Id concat_rows(Id a, Id b) {
    if (cols(a) != cols(b)) {
      throw ValidationError("concat_rows operands must share column count");
    }
    Mat<S> out(rows(a) + rows(b), cols(a));
    out.topRows(rows(a)) = value(a);
    out.bottomRows(rows(b)) = value(b);
    Id id = push(std::move(out));
    const int ra = rows(a);
    const int rb = rows(b);
    nodes_[id].back = [id, a, b, ra, rb](Tape& t) {
      const Mat<S>& g = t.grads_[id];
      t.grad_ref(a) += g.topRows(ra);
      t.grad_ref(b) += g.bottomRows(rb);
    };
    return id;
  }

  Id concat_rows_n(const std::vector<Id>& parts) {
    if (parts.empty()) throw ValidationError("concat_rows_n needs at least one part");
    int total = 0;
    for (Id p : parts) {
      if (cols(p) != cols(parts[0])) {
        throw ValidationError("concat_rows_n operands must share column count");
      }
      total += rows(p);
    }
    Mat<S> out(total, cols(parts[0]));
    int at = 0;
    for (Id p : parts) {
      out.middleRows(at, rows(p)) = value(p);
      at += rows(p);
    }
    Id id = push(std::move(out));
    nodes_[id].back = [id, parts](Tape& t) {
      const Mat<S>& g = t.grads_[id];
      int at = 0;
      for (Id p : parts) {
        const int h = t.rows(p);
        t.grad_ref(p) += g.middleRows(at, h);
        at += h;
      }
    };
    return id;
  }

  Id concat_cols(const std::vector<Id>& parts) {
    if (parts.empty()) throw ValidationError("concat_cols needs at least one part");
    int total = 0;
    for (Id p : parts) {
      if (rows(p) != rows(parts[0])) {
        throw ValidationError("concat_cols operands must share row count");
      }
      total += cols(p);
    }
    Mat<S> out(rows(parts[0]), total);
    int at = 0;
    for (Id p : parts) {
      out.middleCols(at, cols(p)) = value(p);
      at += cols(p);
    }
    Id id = push(std::move(out));
    nodes_[id].back = [id, parts](Tape& t) {
      const Mat<S>& g = t.grads_[id];
      int at = 0;
      for (Id p : parts) {
        const int w = t.cols(p);
        t.grad_ref(p) += g.middleCols(at, w);
        at += w;
      }
    };
    return id;
  }

  // Sum across columns -> (d x 1).
  Id sum_cols(Id a) {
    Id id = push(Mat<S>(value(a).rowwise().sum()));
    nodes_[id].back = [id, a](Tape& t) {
      t.grad_ref(a).colwise() += t.grads_[id].col(0);
    };
    return id;
  }

  // Sum of all entries -> (1 x 1).
  Id sum_all(Id a) {
    Mat<S> out(1, 1);
    out(0, 0) = value(a).sum();
    Id id = push(std::move(out));
    nodes_[id].back = [id, a](Tape& t) {
      t.grad_ref(a).array() += t.grads_[id](0, 0);
    };
    return id;
  }

  // Column-wise softmax (numerically stabilized by the column max).
  Id softmax_cols(Id a) {
    Mat<S> out = value(a);
    for (int j = 0; j < out.cols(); ++j) {
      const S m = out.col(j).maxCoeff();
      out.col(j) = (out.col(j).array() - m).exp();
      out.col(j) /= out.col(j).sum();
    }
    Id id = push(std::move(out));
    nodes_[id].back = [id, a](Tape& t) {
      const Mat<S>& p = t.value(id);
      const Mat<S>& g = t.grads_[id];
      Mat<S>& ga = t.grad_ref(a);
      for (int j = 0; j < p.cols(); ++j) {
        const S dot = g.col(j).dot(p.col(j));
        ga.col(j) += p.col(j).cwiseProduct(g.col(j)) - dot * p.col(j);
      }
    };
    return id;
  }

  // Per-column layer normalization with affine output: for each column x,
  //   y = gamma .* (x - mu) / sqrt(var + eps) + beta
  // with population variance. gamma and beta are (d x 1) nodes.
  Id layer_norm_cols(Id a, Id gamma, Id beta, S eps) {
    const int d = rows(a);
    const int b = cols(a);
    if (rows(gamma) != d || cols(gamma) != 1 || rows(beta) != d || cols(beta) != 1) {
      throw ValidationError("layer norm affine parameters must be (d x 1)");
    }
    Mat<S> xhat(d, b);
    Mat<S> inv_sigma(1, b);
    for (int j = 0; j < b; ++j) {
      const S mu = value(a).col(j).mean();
      Vec<S> centered = value(a).col(j).array() - mu;
      const S var = centered.squaredNorm() / static_cast<S>(d);
      inv_sigma(0, j) = S(1) / std::sqrt(var + eps);
      xhat.col(j) = centered * inv_sigma(0, j);
    }
    Mat<S> out = xhat;
    for (int j = 0; j < b; ++j) {
      out.col(j) = out.col(j).cwiseProduct(value(gamma).col(0)) + value(beta).col(0);
    }
    Id id = push(std::move(out));
    nodes_[id].back = [id, a, gamma, beta, xhat = std::move(xhat),
                       inv_sigma = std::move(inv_sigma)](Tape& t) {
      const Mat<S>& g = t.grads_[id];
      const int d = static_cast<int>(g.rows());
      Mat<S>& ga = t.grad_ref(a);
      Mat<S>& ggamma = t.grad_ref(gamma);
      Mat<S>& gbeta = t.grad_ref(beta);
      for (int j = 0; j < g.cols(); ++j) {
        gbeta.col(0) += g.col(j);
        ggamma.col(0) += g.col(j).cwiseProduct(xhat.col(j));
        Vec<S> dxhat = g.col(j).cwiseProduct(t.value(gamma).col(0));
        const S mean_dxhat = dxhat.mean();
        const S mean_dxhat_xhat = dxhat.cwiseProduct(xhat.col(j)).sum() / S(d);
        ga.col(j) += inv_sigma(0, j) *
                     (dxhat.array() - mean_dxhat - xhat.col(j).array() * mean_dxhat_xhat)
                         .matrix();
      }
    };
    return id;
  }

  // Inverted dropout: in train mode, zero entries with probability `rate`
  // and scale survivors by 1/(1-rate); identity otherwise. Mask entries are
  // drawn column-major from `rng`, so the draw order is reproducible.
  Id dropout(Id a, double rate, bool train, Rng& rng) {
    if (!train || rate <= 0.0) return a;
    if (rate >= 1.0) throw ValidationError("dropout rate must be < 1");
    const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
    Mat<S> mask(rows(a), cols(a));
    for (int j = 0; j < mask.cols(); ++j) {
      for (int i = 0; i < mask.rows(); ++i) {
        mask(i, j) = rng.bernoulli(1.0 - rate) ? keep_scale : S(0);
      }
    }
    return cmul(a, std::move(mask));
  }

  // ---- reverse pass -----------------------------------------------------

  // Backpropagate from a scalar (1 x 1) root. Parameter gradients accumulate
  // into their Parameter::grad; call ParamStore::zero_grad() beforehand.
  void backward(Id root) {
    if (rows(root) != 1 || cols(root) != 1) {
      throw ValidationError("backward root must be a 1 x 1 node");
    }
    grad_ref(root)(0, 0) = S(1);
    for (Id i = root; i >= 0; --i) {
      if (grads_[i].size() == 0) continue;
      if (nodes_[i].back) nodes_[i].back(*this);
    }
  }

  Mat<S>& grad_ref(Id id) {
    if (grads_[id].size() == 0) {
      grads_[id] = Mat<S>::Zero(nodes_[id].val.rows(), nodes_[id].val.cols());
    }
    return grads_[id];
  }

private:
  struct Node {
    Mat<S> val;
    std::function<void(Tape&)> back;
  };

  Id push(Mat<S> v) {
    nodes_.push_back(Node{std::move(v), nullptr});
    grads_.emplace_back();
    return static_cast<Id>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<Mat<S>> grads_;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

}  // namespace baim
