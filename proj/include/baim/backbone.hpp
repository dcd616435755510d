// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "baim/common.hpp"
#include "baim/params.hpp"
#include "baim/tape.hpp"

namespace baim {

enum class BackboneKind { kRecurrent, kAttention };
enum class ItemReprMode { kBaim, kStatic };

inline std::string to_string(BackboneKind k) {
  return k == BackboneKind::kRecurrent ? "recurrent" : "attention";
}
inline BackboneKind backbone_kind_from_string(const std::string& s) {
  if (s == "recurrent") return BackboneKind::kRecurrent;
  if (s == "attention") return BackboneKind::kAttention;
  throw ValidationError("unknown backbone kind: " + s);
}
inline std::string to_string(ItemReprMode m) {
  return m == ItemReprMode::kBaim ? "baim" : "static";
}
inline ItemReprMode item_repr_mode_from_string(const std::string& s) {
  if (s == "baim") return ItemReprMode::kBaim;
  if (s == "static") return ItemReprMode::kStatic;
  throw ValidationError("unknown item representation mode: " + s);
}

// Sequence model consuming per-timestep item representations.
//
// recurrent: response-specific affine interaction embeddings feed an LSTM
// cell; the prediction for step t uses [state_{t-1} ⊕ query(I_t)], so only
// interactions before t reach the prediction.
//
// attention: one causal block. The query is the current item
// representation; keys/values are past interaction embeddings
// (item representation + response embedding + position). Step t attends
// strictly to steps < t; at t=0 the context vector is all zeros.
struct BackboneConfig {
  BackboneKind kind = BackboneKind::kRecurrent;
  int model_dim = 256;
  int heads = 4;             // attention only
  int attention_layers = 1;  // attention only; a single block is supported
  int max_len = 200;         // attention only: position table size
  ItemReprMode item_repr_mode = ItemReprMode::kBaim;

  void validate() const {
    if (model_dim <= 0) throw ValidationError("backbone model_dim must be positive");
    if (kind == BackboneKind::kAttention) {
      if (heads <= 0 || model_dim % heads != 0) {
        throw ValidationError("attention heads must divide model_dim");
      }
      if (attention_layers != 1) {
        throw ValidationError("only a single attention block is supported");
      }
      if (max_len <= 0) throw ValidationError("max_len must be positive");
    }
  }
};

template <typename S>
struct BackboneParams {
  // recurrent kind
  Parameter<S>* resp_w0 = nullptr;  // model_dim x model_dim, response = 0 (wrong)
  Parameter<S>* resp_b0 = nullptr;
  Parameter<S>* resp_w1 = nullptr;  // response = 1 (right)
  Parameter<S>* resp_b1 = nullptr;
  Parameter<S>* query_w = nullptr;  // model_dim x model_dim
  Parameter<S>* query_b = nullptr;
  Parameter<S>* lstm_w_ih = nullptr;  // 4*model_dim x model_dim (input|forget|cell|output)
  Parameter<S>* lstm_w_hh = nullptr;
  Parameter<S>* lstm_b_ih = nullptr;
  Parameter<S>* lstm_b_hh = nullptr;

  // attention kind
  Parameter<S>* resp_embed = nullptr;  // 2 x model_dim
  Parameter<S>* pos_table = nullptr;   // max_len x model_dim
  Parameter<S>* attn_wq = nullptr;     // model_dim x model_dim
  Parameter<S>* attn_bq = nullptr;
  Parameter<S>* attn_wk = nullptr;
  Parameter<S>* attn_bk = nullptr;
  Parameter<S>* attn_wv = nullptr;
  Parameter<S>* attn_bv = nullptr;
  Parameter<S>* attn_wo = nullptr;
  Parameter<S>* attn_bo = nullptr;

  // shared two-layer prediction head on [context ⊕ query]
  Parameter<S>* head_w1 = nullptr;  // model_dim x 2*model_dim
  Parameter<S>* head_b1 = nullptr;
  Parameter<S>* head_w2 = nullptr;  // 1 x model_dim
  Parameter<S>* head_b2 = nullptr;

  static BackboneParams create(ParamStore<S>& store, const BackboneConfig& cfg) {
    cfg.validate();
    BackboneParams p;
    const int m = cfg.model_dim;
    if (cfg.kind == BackboneKind::kRecurrent) {
      p.resp_w0 = &store.add("backbone.resp0.w", m, m);
      p.resp_b0 = &store.add("backbone.resp0.b", m, 1);
      p.resp_w1 = &store.add("backbone.resp1.w", m, m);
      p.resp_b1 = &store.add("backbone.resp1.b", m, 1);
      p.query_w = &store.add("backbone.query.w", m, m);
      p.query_b = &store.add("backbone.query.b", m, 1);
      p.lstm_w_ih = &store.add("backbone.lstm.w_ih", 4 * m, m);
      p.lstm_w_hh = &store.add("backbone.lstm.w_hh", 4 * m, m);
      p.lstm_b_ih = &store.add("backbone.lstm.b_ih", 4 * m, 1);
      p.lstm_b_hh = &store.add("backbone.lstm.b_hh", 4 * m, 1);
    } else {
      p.resp_embed = &store.add("backbone.resp_embed", 2, m);
      p.pos_table = &store.add("backbone.pos_table", cfg.max_len, m);
      p.attn_wq = &store.add("backbone.attn.wq", m, m);
      p.attn_bq = &store.add("backbone.attn.bq", m, 1);
      p.attn_wk = &store.add("backbone.attn.wk", m, m);
      p.attn_bk = &store.add("backbone.attn.bk", m, 1);
      p.attn_wv = &store.add("backbone.attn.wv", m, m);
      p.attn_bv = &store.add("backbone.attn.bv", m, 1);
      p.attn_wo = &store.add("backbone.attn.wo", m, m);
      p.attn_bo = &store.add("backbone.attn.bo", m, 1);
    }
    p.head_w1 = &store.add("backbone.head.w1", m, 2 * m);
    p.head_b1 = &store.add("backbone.head.b1", m, 1);
    p.head_w2 = &store.add("backbone.head.w2", 1, m);
    p.head_b2 = &store.add("backbone.head.b2", 1, 1);
    return p;
  }

  static BackboneParams bind(ParamStore<S>& store, const BackboneConfig& cfg) {
    cfg.validate();
    BackboneParams p;
    const int m = cfg.model_dim;
    auto fetch = [&](const std::string& name, int r, int c) -> Parameter<S>* {
      Parameter<S>& q = store.get(name);
      if (q.value.rows() != r || q.value.cols() != c) {
        throw ValidationError("parameter shape mismatch for " + name);
      }
      return &q;
    };
    if (cfg.kind == BackboneKind::kRecurrent) {
      p.resp_w0 = fetch("backbone.resp0.w", m, m);
      p.resp_b0 = fetch("backbone.resp0.b", m, 1);
      p.resp_w1 = fetch("backbone.resp1.w", m, m);
      p.resp_b1 = fetch("backbone.resp1.b", m, 1);
      p.query_w = fetch("backbone.query.w", m, m);
      p.query_b = fetch("backbone.query.b", m, 1);
      p.lstm_w_ih = fetch("backbone.lstm.w_ih", 4 * m, m);
      p.lstm_w_hh = fetch("backbone.lstm.w_hh", 4 * m, m);
      p.lstm_b_ih = fetch("backbone.lstm.b_ih", 4 * m, 1);
      p.lstm_b_hh = fetch("backbone.lstm.b_hh", 4 * m, 1);
    } else {
      p.resp_embed = fetch("backbone.resp_embed", 2, m);
      p.pos_table = fetch("backbone.pos_table", cfg.max_len, m);
      p.attn_wq = fetch("backbone.attn.wq", m, m);
      p.attn_bq = fetch("backbone.attn.bq", m, 1);
      p.attn_wk = fetch("backbone.attn.wk", m, m);
      p.attn_bk = fetch("backbone.attn.bk", m, 1);
      p.attn_wv = fetch("backbone.attn.wv", m, m);
      p.attn_bv = fetch("backbone.attn.bv", m, 1);
      p.attn_wo = fetch("backbone.attn.wo", m, m);
      p.attn_bo = fetch("backbone.attn.bo", m, 1);
    }
    p.head_w1 = fetch("backbone.head.w1", m, 2 * m);
    p.head_b1 = fetch("backbone.head.b1", m, 1);
    p.head_w2 = fetch("backbone.head.w2", 1, m);
    p.head_b2 = fetch("backbone.head.b2", 1, 1);
    return p;
  }

  void init(const BackboneConfig& cfg, Rng& rng) {
    const int m = cfg.model_dim;
    if (cfg.kind == BackboneKind::kRecurrent) {
      init_uniform(*resp_w0, m, rng);
      init_uniform(*resp_b0, m, rng);
      init_uniform(*resp_w1, m, rng);
      init_uniform(*resp_b1, m, rng);
      init_uniform(*query_w, m, rng);
      init_uniform(*query_b, m, rng);
      init_uniform(*lstm_w_ih, m, rng);
      init_uniform(*lstm_w_hh, m, rng);
      init_uniform(*lstm_b_ih, m, rng);
      init_uniform(*lstm_b_hh, m, rng);
    } else {
      init_uniform(*resp_embed, m, rng);
      init_uniform(*pos_table, m, rng);
      init_uniform(*attn_wq, m, rng);
      init_uniform(*attn_bq, m, rng);
      init_uniform(*attn_wk, m, rng);
      init_uniform(*attn_bk, m, rng);
      init_uniform(*attn_wv, m, rng);
      init_uniform(*attn_bv, m, rng);
      init_uniform(*attn_wo, m, rng);
      init_uniform(*attn_bo, m, rng);
    }
    init_uniform(*head_w1, 2 * m, rng);
    init_uniform(*head_b1, 2 * m, rng);
    init_uniform(*head_w2, m, rng);
    init_uniform(*head_b2, m, rng);
  }
};

// ---- graph builders ------------------------------------------------------

// Interaction embedding. recurrent: response-specific affine maps, applied
// per column via 0/1 masks. attention: item_repr + response embedding row.
template <typename S>
typename Tape<S>::Id interaction_embed_graph(Tape<S>& tape, typename Tape<S>::Id item_repr,
                                             const std::vector<int>& responses,
                                             const BackboneParams<S>& p,
                                             const BackboneConfig& cfg) {
  const int b = tape.cols(item_repr);
  if (static_cast<int>(responses.size()) != b) {
    throw ValidationError("interaction_embed: response count mismatch");
  }
  for (int r : responses) {
    if (r != 0 && r != 1) throw ValidationError("interaction_embed: response must be 0 or 1");
  }
  if (cfg.kind == BackboneKind::kAttention) {
    return tape.add(item_repr, tape.take_rows_t(*p.resp_embed, responses));
  }
  auto out0 = tape.add_bias(tape.matmul(tape.param(*p.resp_w0), item_repr),
                            tape.param(*p.resp_b0));
  auto out1 = tape.add_bias(tape.matmul(tape.param(*p.resp_w1), item_repr),
                            tape.param(*p.resp_b1));
  Mat<S> mask0 = Mat<S>::Zero(cfg.model_dim, b);
  Mat<S> mask1 = Mat<S>::Zero(cfg.model_dim, b);
  for (int j = 0; j < b; ++j) (responses[j] == 0 ? mask0 : mask1).col(j).setOnes();
  return tape.add(tape.cmul(out0, std::move(mask0)), tape.cmul(out1, std::move(mask1)));
}

template <typename S>
struct LstmState {
  typename Tape<S>::Id h = -1;
  typename Tape<S>::Id c = -1;
};

// Standard LSTM cell (input | forget | cell | output gate order).
template <typename S>
LstmState<S> lstm_step_graph(Tape<S>& tape, const LstmState<S>& prev, typename Tape<S>::Id x,
                             const BackboneParams<S>& p, const BackboneConfig& cfg) {
  const int m = cfg.model_dim;
  auto gi = tape.add_bias(tape.matmul(tape.param(*p.lstm_w_ih), x), tape.param(*p.lstm_b_ih));
  auto gh = tape.add_bias(tape.matmul(tape.param(*p.lstm_w_hh), prev.h),
                          tape.param(*p.lstm_b_hh));
  auto g = tape.add(gi, gh);
  auto i = tape.sigmoid(tape.slice_rows(g, 0, m));
  auto f = tape.sigmoid(tape.slice_rows(g, m, m));
  auto cand = tape.tanh_op(tape.slice_rows(g, 2 * m, m));
  auto o = tape.sigmoid(tape.slice_rows(g, 3 * m, m));
  LstmState<S> next;
  next.c = tape.add(tape.hadamard(f, prev.c), tape.hadamard(i, cand));
  next.h = tape.hadamard(o, tape.tanh_op(next.c));
  return next;
}

// Multi-head causal attention context for one query step against stored
// key/value steps (all strictly earlier). Keys/values are (model_dim x B)
// nodes; each head works on its own row slice, scores are scaled dot
// products, and the per-head contexts are restacked and output-projected.
template <typename S>
typename Tape<S>::Id attention_context_graph(Tape<S>& tape, typename Tape<S>::Id query,
                                             const std::vector<typename Tape<S>::Id>& keys,
                                             const std::vector<typename Tape<S>::Id>& values,
                                             const BackboneParams<S>& p,
                                             const BackboneConfig& cfg) {
  if (keys.empty() || keys.size() != values.size()) {
    throw ValidationError("attention context requires matching non-empty key/value sets");
  }
  const int m = cfg.model_dim;
  const int dh = m / cfg.heads;
  const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  auto q = tape.add_bias(tape.matmul(tape.param(*p.attn_wq), query), tape.param(*p.attn_bq));
  std::vector<typename Tape<S>::Id> head_ctx;
  head_ctx.reserve(cfg.heads);
  for (int h = 0; h < cfg.heads; ++h) {
    auto qh = tape.slice_rows(q, h * dh, dh);
    std::vector<typename Tape<S>::Id> scores;
    scores.reserve(keys.size());
    for (size_t j = 0; j < keys.size(); ++j) {
      scores.push_back(
          tape.scale(tape.coldot(qh, tape.slice_rows(keys[j], h * dh, dh)), inv_sqrt));
    }
    auto score_stack = tape.concat_rows_n(scores);       // (t x B)
    auto weights = tape.softmax_cols(score_stack);       // convex over history
    typename Tape<S>::Id ctx = -1;
    for (size_t j = 0; j < values.size(); ++j) {
      auto vh = tape.slice_rows(values[j], h * dh, dh);
      auto term = tape.mul_colscale(vh, tape.slice_rows(weights, static_cast<int>(j), 1));
      ctx = (ctx < 0) ? term : tape.add(ctx, term);
    }
    head_ctx.push_back(ctx);
  }
  auto stacked = tape.concat_rows_n(head_ctx);
  return tape.add_bias(tape.matmul(tape.param(*p.attn_wo), stacked), tape.param(*p.attn_bo));
}

// sigma(head([context ⊕ query])) -> (1 x B) probabilities.
template <typename S>
typename Tape<S>::Id prediction_head_graph(Tape<S>& tape, typename Tape<S>::Id context,
                                           typename Tape<S>::Id query,
                                           const BackboneParams<S>& p) {
  auto cat = tape.concat_rows(context, query);
  auto h = tape.relu(
      tape.add_bias(tape.matmul(tape.param(*p.head_w1), cat), tape.param(*p.head_b1)));
  auto logit = tape.add_bias(tape.matmul(tape.param(*p.head_w2), h), tape.param(*p.head_b2));
  return tape.sigmoid(logit);
}

// ---- single-vector wrapper (tests) ---------------------------------------

template <typename S>
Vec<S> interaction_embed(const Vec<S>& item_repr, int response, const BackboneParams<S>& p,
                         const BackboneConfig& cfg) {
  Tape<S> tape;
  auto out = interaction_embed_graph(tape, tape.constant(Mat<S>(item_repr)),
                                     std::vector<int>{response}, p, cfg);
  return tape.value(out).col(0);
}

// Context-independent per-item lookup used by the static baseline.
template <typename S>
Vec<S> static_item_repr(Parameter<S>& static_table, int item_id) {
  if (item_id < 0 || item_id >= static_table.value.rows()) {
    throw ValidationError("static_item_repr: unknown item " + std::to_string(item_id));
  }
  return static_table.value.row(item_id).transpose();
}

}  // namespace baim
