// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "baim/metrics.hpp"
#include "baim/model.hpp"

namespace baim {

struct TrainConfig {
  int batch_size = 128;
  double learning_rate = 1e-4;
  int epochs = 200;
  double lambda_lb = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int patience = 10;  // early stop after this many non-improving epochs
  std::uint64_t seed = 42;

  void validate() const {
    if (batch_size <= 0 || epochs <= 0) {
      throw ValidationError("batch_size and epochs must be positive");
    }
    if (learning_rate <= 0.0) throw ValidationError("learning_rate must be positive");
    if (lambda_lb < 0.0) throw ValidationError("lambda_lb must be >= 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw ValidationError("adam betas must lie in [0, 1)");
    }
    if (adam_eps <= 0.0) throw ValidationError("adam eps must be positive");
    if (patience < 0) throw ValidationError("patience must be >= 0");
  }
};

// Adaptive-moment gradient descent over a ParamStore.
class Adam {
public:
  explicit Adam(ParamStore<float>& store) : store_(&store) {
    m_.resize(store.size());
    v_.resize(store.size());
    for (size_t i = 0; i < store.size(); ++i) {
      const Parameter<float>& p = store.at(i);
      m_[i].setZero(p.value.rows(), p.value.cols());
      v_[i].setZero(p.value.rows(), p.value.cols());
    }
  }

  void step(double lr, double beta1, double beta2, double eps) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, t_);
    const double bc2 = 1.0 - std::pow(beta2, t_);
    for (size_t i = 0; i < store_->size(); ++i) {
      Parameter<float>& p = store_->at(i);
      m_[i] = static_cast<float>(beta1) * m_[i] + static_cast<float>(1.0 - beta1) * p.grad;
      v_[i] = static_cast<float>(beta2) * v_[i] +
              static_cast<float>(1.0 - beta2) * p.grad.cwiseProduct(p.grad);
      const MatF mhat = m_[i] / static_cast<float>(bc1);
      const MatF vhat = v_[i] / static_cast<float>(bc2);
      p.value -= static_cast<float>(lr) *
                 mhat.cwiseQuotient(vhat.cwiseSqrt().array().matrix() +
                                    MatF::Constant(vhat.rows(), vhat.cols(),
                                                   static_cast<float>(eps)));
    }
  }

private:
  ParamStore<float>* store_;
  std::vector<MatF> m_, v_;
  std::int64_t t_ = 0;
};

struct EpochLogEntry {
  int epoch = 0;
  double train_kt = 0.0;
  double train_lb = 0.0;
  double train_total = 0.0;
  double valid_auc = 0.0;
  double valid_bce = 0.0;
  std::array<double, kStageCount> train_routing_shares{};
};

struct TrainResult {
  std::vector<EpochLogEntry> log;
  int best_epoch = -1;
  double best_valid_auc = 0.0;
  int epochs_run = 0;
};

// Evaluation-mode forward over `indices`, pooling predictions and labels
// across active positions. Optionally emits per-step records for routing
// analysis.
Metrics evaluate_model(const KtModel<float>& model,
                       const std::vector<LearnerSequence>& sequences,
                       const std::vector<int>& indices, int batch_size,
                       std::vector<StepRecord>* records = nullptr);

// Mini-batch training with per-epoch validation. The model is left holding
// the parameters of the best validation epoch. Deterministic given the
// config seed: batch order, dropout and gate noise all derive from it.
TrainResult train_model(KtModel<float>& model,
                        const std::vector<LearnerSequence>& sequences,
                        const std::vector<int>& train_indices,
                        const std::vector<int>& valid_indices, const TrainConfig& cfg);

// Total objective: prediction loss plus the weighted load-balance term.
inline double total_loss(double kt, double lb, double lambda) { return kt + lambda * lb; }

}  // namespace baim
