// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "baim/backbone.hpp"
#include "baim/common.hpp"
#include "baim/data.hpp"
#include "baim/embed.hpp"
#include "baim/router.hpp"
#include "baim/tape.hpp"

namespace baim {

// How the stage decision is made at each step. `adaptive` uses the learned
// gate; `fixed-stage-k` always picks stage k; `holistic` is the
// stage-blind ablation (runs on a table built with holistic pooling, where
// all four stage rows of an item are identical, and forces stage 0 so no
// gate is involved).
struct RoutingStrategy {
  enum class Kind { kAdaptive, kFixedStage, kHolistic };
  Kind kind = Kind::kAdaptive;
  int fixed_stage = 0;

  static RoutingStrategy adaptive() { return {}; }
  static RoutingStrategy fixed(int stage) {
    if (stage < 0 || stage >= kStageCount) {
      throw ValidationError("fixed routing stage out of range");
    }
    return {Kind::kFixedStage, stage};
  }
  static RoutingStrategy holistic() { return {Kind::kHolistic, 0}; }

  bool forced() const { return kind != Kind::kAdaptive; }
  int forced_stage() const { return kind == Kind::kFixedStage ? fixed_stage : 0; }

  std::string str() const {
    switch (kind) {
      case Kind::kAdaptive: return "adaptive";
      case Kind::kHolistic: return "holistic";
      case Kind::kFixedStage: return "fixed-stage-" + std::to_string(fixed_stage);
    }
    return "adaptive";
  }
  static RoutingStrategy parse(const std::string& s) {
    if (s == "adaptive") return adaptive();
    if (s == "holistic") return holistic();
    const std::string prefix = "fixed-stage-";
    if (s.rfind(prefix, 0) == 0 && s.size() == prefix.size() + 1) {
      const char c = s[prefix.size()];
      if (c >= '0' && c <= '3') return fixed(c - '0');
    }
    throw ValidationError("unknown routing strategy: " + s);
  }
};

struct ModelConfig {
  RouterConfig router;
  BackboneConfig backbone;
  RoutingStrategy routing;

  ItemReprMode repr_mode() const { return backbone.item_repr_mode; }

  void validate() const {
    backbone.validate();
    if (repr_mode() == ItemReprMode::kBaim) {
      router.validate();
      if (router.model_dim != backbone.model_dim) {
        throw ValidationError("router and backbone model widths must match");
      }
    }
  }

  // Deterministic fingerprint input covering everything that shapes the
  // parameter set; hashed into checkpoints so a load against a different
  // architecture fails loudly.
  std::string canonical_string(int item_count) const;
  std::uint64_t config_hash(int item_count) const {
    return fnv1a(canonical_string(item_count));
  }
};

// Right-padded batch of sequences in time-major layout: row t holds the
// t-th interaction of every column (one column per learner sequence).
struct Batch {
  Eigen::MatrixXi items;      // (T x B); 0 where inactive
  Eigen::MatrixXi responses;  // (T x B); 0 where inactive
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> active;  // (T x B)
  std::vector<int> learner_ids;

  int steps() const { return static_cast<int>(items.rows()); }
  int width() const { return static_cast<int>(items.cols()); }
};

// Assemble consecutive index groups of `order` into batches. T per batch is
// trimmed to the longest member.
std::vector<Batch> make_batches(const std::vector<LearnerSequence>& sequences,
                                const std::vector<int>& order, int batch_size);

// Frozen per-step stage selections, recorded in one forward pass and
// replayed in another. Finite-difference gradient checks replay a plan so
// the loss stays smooth around the evaluation point.
struct RoutingPlan {
  std::vector<std::vector<int>> selected;  // [t][column]
  bool empty() const { return selected.empty(); }
};

struct ForwardOptions {
  bool train = false;
  double lambda_lb = 0.0;
  RoutingPlan* record_plan = nullptr;
  const RoutingPlan* replay_plan = nullptr;
};

template <typename S>
struct ForwardOutput {
  typename Tape<S>::Id kt_loss = -1;     // (1x1) mean over active positions
  typename Tape<S>::Id lb_loss = -1;     // (1x1); -1 unless adaptive routing
  typename Tape<S>::Id total_loss = -1;  // kt + lambda * lb
  Mat<S> predictions;                    // (T x B)
  std::vector<std::vector<RoutingTraceEntry>> traces;  // [t][column]; baim mode only
  std::int64_t active_count = 0;
};

// A knowledge-tracing model: a trainable item-representation path (either
// the stage router over a stage-embedding table, or a plain per-item
// lookup) feeding one of the two sequence backbones.
template <typename S>
class KtModel {
public:
  KtModel(const ModelConfig& cfg, int item_count) : cfg_(cfg), item_count_(item_count) {
    cfg_.validate();
    if (item_count_ <= 0) throw ValidationError("model needs a positive item count");
    if (cfg_.repr_mode() == ItemReprMode::kBaim) {
      item_table_ = &store_.add("item_table", item_count_ * kStageCount,
                                         cfg_.router.stage_dim);
      router_ = RouterParams<S>::create(store_, cfg_.router);
    } else {
      static_table_ = &store_.add("static_table", item_count_, cfg_.backbone.model_dim);
    }
    backbone_ = BackboneParams<S>::create(store_, cfg_.backbone);
  }

  // Initialize all parameters. In baim mode, `table` seeds the trainable
  // stage rows; pass nullptr to fall back to random rows (tests, gradient
  // checks). The draw order is fixed, so a seed pins every value.
  void init_params(Rng& rng, const StageEmbeddingTable* table) {
    if (cfg_.repr_mode() == ItemReprMode::kBaim) {
      if (table != nullptr) {
        if (table->item_count != item_count_ || table->dim != cfg_.router.stage_dim) {
          throw ValidationError("stage table shape does not match model config");
        }
        item_table_->value = table->matrix.template cast<S>();
      } else {
        init_uniform(*item_table_, cfg_.router.stage_dim, rng);
      }
      router_.init(cfg_.router, rng);
    } else {
      init_uniform(*static_table_, cfg_.backbone.model_dim, rng);
    }
    backbone_.init(cfg_.backbone, rng);
  }

  // Adopt values from a loaded store (shape- and name-checked).
  void load_values(const ParamStore<float>& src) {
    if (src.size() != store_.size()) {
      throw ValidationError("checkpoint parameter count does not match model");
    }
    for (size_t i = 0; i < store_.size(); ++i) {
      Parameter<S>& dst = store_.at(i);
      const Parameter<float>& p = src.get(dst.name);
      if (p.value.rows() != dst.value.rows() || p.value.cols() != dst.value.cols()) {
        throw ValidationError("checkpoint shape mismatch for " + dst.name);
      }
      dst.value = p.value.template cast<S>();
    }
  }

  ParamStore<S>& store() { return store_; }
  const ParamStore<S>& store() const { return store_; }
  const ModelConfig& config() const { return cfg_; }
  int item_count() const { return item_count_; }

  ForwardOutput<S> forward(Tape<S>& tape, const Batch& batch, const ForwardOptions& opt,
                           Rng& rng) const;

private:
  ModelConfig cfg_;
  int item_count_ = 0;
  ParamStore<S> store_;
  RouterParams<S> router_;
  BackboneParams<S> backbone_;
  Parameter<S>* item_table_ = nullptr;
  Parameter<S>* static_table_ = nullptr;
};

// ---- forward implementation ---------------------------------------------

template <typename S>
ForwardOutput<S> KtModel<S>::forward(Tape<S>& tape, const Batch& batch,
                                     const ForwardOptions& opt, Rng& rng) const {
  using Id = typename Tape<S>::Id;
  const int T = batch.steps();
  const int B = batch.width();
  if (T <= 0 || B <= 0) throw ValidationError("forward needs a non-empty batch");
  if (static_cast<int>(batch.learner_ids.size()) != B ||
      batch.responses.rows() != T || batch.responses.cols() != B ||
      batch.active.rows() != T || batch.active.cols() != B) {
    throw ValidationError("batch tensors are not aligned");
  }
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < B; ++j) {
      if (batch.items(t, j) < 0 || batch.items(t, j) >= item_count_) {
        throw ValidationError("batch item id out of range");
      }
      const int r = batch.responses(t, j);
      if (r != 0 && r != 1) throw ValidationError("batch response must be 0 or 1");
    }
  }
  const bool baim = cfg_.repr_mode() == ItemReprMode::kBaim;
  const bool adaptive = baim && !cfg_.routing.forced();
  if (cfg_.backbone.kind == BackboneKind::kAttention && T > cfg_.backbone.max_len) {
    throw ValidationError("batch longer than the attention position table");
  }
  if (baim && opt.replay_plan != nullptr &&
      static_cast<int>(opt.replay_plan->selected.size()) != T) {
    throw ValidationError("routing replay plan does not cover the batch");
  }

  ForwardOutput<S> out;
  out.predictions.setZero(T, B);
  if (baim) out.traces.resize(T);
  if (opt.record_plan != nullptr) opt.record_plan->selected.clear();

  const int md = cfg_.backbone.model_dim;
  Id m_ctx = adaptive ? tape.constant(Mat<S>::Zero(cfg_.router.context_dim, B)) : Id(-1);
  Id s_prev = -1;
  LstmState<S> lstm{tape.constant(Mat<S>::Zero(md, B)), tape.constant(Mat<S>::Zero(md, B))};
  std::vector<Id> attn_keys, attn_values;
  Id bce_acc = -1;
  Id prob_acc = -1;  // (4 x 1) sum of active-position routing probabilities

  for (int t = 0; t < T; ++t) {
    std::vector<int> item_ids(B), resp(B);
    for (int j = 0; j < B; ++j) {
      item_ids[j] = batch.items(t, j);
      resp[j] = batch.responses(t, j);
    }

    Id item_repr = -1;
    if (baim) {
      // Learner context carries interaction t-1 into the gate at t.
      if (adaptive && t > 0) {
        std::vector<int> prev_rows(B);
        for (int j = 0; j < B; ++j) prev_rows[j] = batch.responses(t - 1, j);
        m_ctx = update_context_graph(tape, m_ctx, s_prev, prev_rows, router_, cfg_.router);
      }

      std::vector<Id> stage_nodes;
      stage_nodes.reserve(kStageCount);
      for (int p = 0; p < kStageCount; ++p) {
        std::vector<int> rows(B);
        for (int j = 0; j < B; ++j) rows[j] = item_ids[j] * kStageCount + p;
        stage_nodes.push_back(tape.take_rows_t(*item_table_, rows));
      }

      std::vector<int> selected;
      GateStep<S> gs;
      if (adaptive) {
        Id cat = tape.concat_rows_n(stage_nodes);
        Id s_t = encode_solution_graph(tape, cat, router_, cfg_.router, opt.train, rng);
        const std::vector<int>* replay =
            opt.replay_plan != nullptr ? &opt.replay_plan->selected[t] : nullptr;
        gs = gate_graph(tape, s_t, m_ctx, router_, cfg_.router, opt.train, rng, replay);
        selected = gs.selected;
        s_prev = s_t;

        Mat<S> amask = Mat<S>::Zero(kStageCount, B);
        for (int j = 0; j < B; ++j) {
          if (batch.active(t, j)) amask.col(j).setOnes();
        }
        Id masked_probs = tape.cmul(gs.probs, std::move(amask));
        Id colsum = tape.sum_cols(masked_probs);
        prob_acc = (prob_acc < 0) ? colsum : tape.add(prob_acc, colsum);
      } else {
        selected.assign(B, cfg_.routing.forced_stage());
      }
      if (opt.record_plan != nullptr) opt.record_plan->selected.push_back(selected);

      out.traces[t].resize(B);
      for (int j = 0; j < B; ++j) {
        RoutingTraceEntry& e = out.traces[t][j];
        e.timestep = t;
        e.train_mode = opt.train;
        e.selected = selected[j];
        if (adaptive) {
          for (int i = 0; i < kStageCount; ++i) {
            e.clean_logits[i] = static_cast<float>(tape.value(gs.clean_logits)(i, j));
            e.noisy_logits[i] = static_cast<float>(tape.value(gs.sel_logits)(i, j));
            e.probs[i] = static_cast<float>(tape.value(gs.probs)(i, j));
          }
        } else {
          e.probs[selected[j]] = 1.0f;
        }
      }

      std::vector<int> sel_rows(B);
      for (int j = 0; j < B; ++j) sel_rows[j] = item_ids[j] * kStageCount + selected[j];
      Id expert_in = tape.take_rows_t(*item_table_, sel_rows);
      item_repr =
          expert_transform_graph(tape, expert_in, selected, router_, cfg_.router, opt.train, rng);
      if (adaptive && cfg_.router.scale_by_gate_prob) {
        Mat<S> onehot = Mat<S>::Zero(kStageCount, B);
        for (int j = 0; j < B; ++j) onehot(selected[j], j) = S(1);
        Id p_sel = tape.coldot(gs.probs, tape.constant(std::move(onehot)));
        item_repr = tape.mul_colscale(item_repr, p_sel);
      }
    } else {
      item_repr = tape.take_rows_t(*static_table_, item_ids);
    }

    // Backbone prediction for step t from interactions < t, then the state
    // update that folds interaction t in.
    Id y = -1;
    if (cfg_.backbone.kind == BackboneKind::kRecurrent) {
      Id q = tape.add_bias(tape.matmul(tape.param(*backbone_.query_w), item_repr),
                           tape.param(*backbone_.query_b));
      y = prediction_head_graph(tape, lstm.h, q, backbone_);
      Id e = interaction_embed_graph(tape, item_repr, resp, backbone_, cfg_.backbone);
      lstm = lstm_step_graph(tape, lstm, e, backbone_, cfg_.backbone);
    } else {
      Id ctx = (t == 0)
                   ? tape.constant(Mat<S>::Zero(md, B))
                   : attention_context_graph(tape, item_repr, attn_keys, attn_values,
                                             backbone_, cfg_.backbone);
      y = prediction_head_graph(tape, ctx, item_repr, backbone_);
      Id x = interaction_embed_graph(tape, item_repr, resp, backbone_, cfg_.backbone);
      x = tape.add(x, tape.take_rows_t(*backbone_.pos_table, std::vector<int>(B, t)));
      attn_keys.push_back(tape.add_bias(tape.matmul(tape.param(*backbone_.attn_wk), x),
                                        tape.param(*backbone_.attn_bk)));
      attn_values.push_back(tape.add_bias(tape.matmul(tape.param(*backbone_.attn_wv), x),
                                          tape.param(*backbone_.attn_bv)));
    }
    out.predictions.row(t) = tape.value(y).row(0);

    Id yc = tape.clamp(y, static_cast<S>(1e-7), static_cast<S>(1.0 - 1e-7));
    Mat<S> r_row(1, B), r_inv(1, B), a_row(1, B);
    for (int j = 0; j < B; ++j) {
      r_row(0, j) = static_cast<S>(resp[j]);
      r_inv(0, j) = static_cast<S>(1 - resp[j]);
      a_row(0, j) = batch.active(t, j) ? S(1) : S(0);
      if (batch.active(t, j)) ++out.active_count;
    }
    Id term = tape.add(tape.hadamard(tape.constant(std::move(r_row)), tape.log_op(yc)),
                       tape.hadamard(tape.constant(std::move(r_inv)),
                                     tape.log_op(tape.one_minus(yc))));
    Id masked = tape.cmul(term, std::move(a_row));
    Id step_sum = tape.sum_all(masked);
    bce_acc = (bce_acc < 0) ? step_sum : tape.add(bce_acc, step_sum);
  }

  if (out.active_count == 0) throw ValidationError("batch has no active positions");
  out.kt_loss = tape.scale(bce_acc, static_cast<S>(-1.0 / out.active_count));
  out.total_loss = out.kt_loss;
  if (adaptive && prob_acc >= 0) {
    Id pbar = tape.scale(prob_acc, static_cast<S>(1.0 / out.active_count));
    out.lb_loss = tape.sum_all(tape.square(tape.add_scalar(pbar, static_cast<S>(-0.25))));
    if (opt.lambda_lb != 0.0) {
      out.total_loss =
          tape.add(out.kt_loss, tape.scale(out.lb_loss, static_cast<S>(opt.lambda_lb)));
    }
  }
  return out;
}

}  // namespace baim
