// SPDX-License-Identifier: Apache-2.0
#include "baim/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace baim {

Metrics evaluate_model(const KtModel<float>& model,
                       const std::vector<LearnerSequence>& sequences,
                       const std::vector<int>& indices, int batch_size,
                       std::vector<StepRecord>* records) {
  if (indices.empty()) throw ValidationError("evaluate: empty index set");
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<StepRecord> local_records;
  Rng rng(0);  // eval mode draws nothing; present only to satisfy the interface
  for (const Batch& batch : make_batches(sequences, indices, batch_size)) {
    Tape<float> tape;
    ForwardOptions opt;
    opt.train = false;
    ForwardOutput<float> fwd = model.forward(tape, batch, opt, rng);
    for (int t = 0; t < batch.steps(); ++t) {
      for (int j = 0; j < batch.width(); ++j) {
        if (!batch.active(t, j)) continue;
        scores.push_back(static_cast<double>(fwd.predictions(t, j)));
        labels.push_back(batch.responses(t, j));
        StepRecord rec;
        rec.learner_id = batch.learner_ids[j];
        rec.timestep = t;
        rec.item_id = batch.items(t, j);
        rec.response = batch.responses(t, j);
        rec.prediction = static_cast<double>(fwd.predictions(t, j));
        if (!fwd.traces.empty()) {
          rec.probs = fwd.traces[t][j].probs;
          rec.selected = fwd.traces[t][j].selected;
        }
        local_records.push_back(rec);
      }
    }
  }
  Metrics m;
  m.auc = auc_score(scores, labels);
  m.bce = mean_bce(scores, labels);
  compute_routing_stats(local_records, m);
  if (records != nullptr) *records = std::move(local_records);
  return m;
}

namespace {

std::string param_norm_digest(const ParamStore<float>& store) {
  std::ostringstream os;
  for (size_t i = 0; i < store.size(); ++i) {
    const Parameter<float>& p = store.at(i);
    os << (i ? ", " : "") << p.name << "=" << p.value.norm();
  }
  return os.str();
}

}  // namespace

TrainResult train_model(KtModel<float>& model,
                        const std::vector<LearnerSequence>& sequences,
                        const std::vector<int>& train_indices,
                        const std::vector<int>& valid_indices, const TrainConfig& cfg) {
  cfg.validate();
  if (train_indices.empty() || valid_indices.empty()) {
    throw ValidationError("training needs non-empty train and valid sets");
  }
  for (int i : train_indices) {
    for (int j : valid_indices) {
      if (i == j) throw ValidationError("train and valid sets overlap");
    }
  }

  Rng shuffle_rng(cfg.seed);
  Rng model_rng(cfg.seed + 1);  // dropout masks and gate noise
  Adam adam(model.store());
  TrainResult result;

  std::vector<MatF> best_values;
  const auto snapshot = [&]() {
    best_values.clear();
    for (size_t i = 0; i < model.store().size(); ++i) {
      best_values.push_back(model.store().at(i).value);
    }
  };
  const auto restore = [&]() {
    for (size_t i = 0; i < model.store().size(); ++i) {
      model.store().at(i).value = best_values[i];
    }
  };

  int stale = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = train_indices;
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

    double kt_acc = 0.0, lb_acc = 0.0, total_acc = 0.0;
    std::array<double, kStageCount> share_acc{};
    std::int64_t n_active = 0, n_routed = 0;
    int batch_index = 0;
    for (const Batch& batch : make_batches(sequences, order, cfg.batch_size)) {
      Tape<float> tape;
      ForwardOptions opt;
      opt.train = true;
      opt.lambda_lb = cfg.lambda_lb;
      ForwardOutput<float> fwd = model.forward(tape, batch, opt, model_rng);

      const double kt = static_cast<double>(tape.value(fwd.kt_loss)(0, 0));
      const double lb =
          fwd.lb_loss >= 0 ? static_cast<double>(tape.value(fwd.lb_loss)(0, 0)) : 0.0;
      const double total = static_cast<double>(tape.value(fwd.total_loss)(0, 0));
      if (!std::isfinite(total)) {
        throw NumericError("non-finite loss in epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_index) +
                           "; parameter norms: " + param_norm_digest(model.store()));
      }
      kt_acc += kt * static_cast<double>(fwd.active_count);
      lb_acc += lb * static_cast<double>(fwd.active_count);
      total_acc += total * static_cast<double>(fwd.active_count);
      n_active += fwd.active_count;
      for (int t = 0; t < batch.steps() && !fwd.traces.empty(); ++t) {
        for (int j = 0; j < batch.width(); ++j) {
          if (!batch.active(t, j)) continue;
          share_acc[fwd.traces[t][j].selected] += 1.0;
          ++n_routed;
        }
      }

      model.store().zero_grad();
      tape.backward(fwd.total_loss);
      adam.step(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
      ++batch_index;
    }

    Metrics valid = evaluate_model(model, sequences, valid_indices, cfg.batch_size);

    EpochLogEntry entry;
    entry.epoch = epoch;
    entry.train_kt = kt_acc / static_cast<double>(n_active);
    entry.train_lb = lb_acc / static_cast<double>(n_active);
    entry.train_total = total_acc / static_cast<double>(n_active);
    entry.valid_auc = valid.auc;
    entry.valid_bce = valid.bce;
    if (n_routed > 0) {
      for (int s = 0; s < kStageCount; ++s) {
        entry.train_routing_shares[s] = share_acc[s] / static_cast<double>(n_routed);
      }
    }
    result.log.push_back(entry);
    result.epochs_run = epoch + 1;

    if (valid.auc > result.best_valid_auc || result.best_epoch < 0) {
      result.best_valid_auc = valid.auc;
      result.best_epoch = epoch;
      snapshot();
      stale = 0;
    } else {
      ++stale;
      if (stale > cfg.patience) break;
    }
  }

  if (result.best_epoch >= 0) restore();
  return result;
}

}  // namespace baim
