// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "baim/common.hpp"
#include "baim/params.hpp"
#include "baim/tape.hpp"

namespace baim {

// Stage routing: turn an item's four stage vectors plus the learner's
// context state into a single learner-conditioned item representation.
//
//   s      = ReLU(proj([h'_0 ⊕ h'_1 ⊕ h'_2 ⊕ h'_3])), dropout in train mode
//   m      = GRU(m_prev, ctx_in · [s_prev ⊕ response_embedding])
//   logits = gate_w · [s ⊕ m] + gate_b      (+ Gaussian noise in train mode)
//   k*     = argmax of the selection logits (ties -> lowest stage index)
//   out    = LayerNorm(expert_{k*}(h'_{k*}))
//
// The selected expert output is used raw: the gate probability does not
// scale it, so the gate weights receive no gradient from the prediction
// loss and train only through the load-balance term. `scale_by_gate_prob`
// switches on probability scaling for the ablation where the gate does get
// a prediction-loss path.
struct RouterConfig {
  int stage_dim = 768;    // width of one stage vector
  int model_dim = 256;    // width of s and of the item representation
  int context_dim = 64;   // width of the learner-context GRU state
  double dropout_rate = 0.1;
  double noise_std = 0.25;
  bool scale_by_gate_prob = false;

  void validate() const {
    if (stage_dim <= 0 || model_dim <= 0 || context_dim <= 0) {
      throw ValidationError("router widths must be positive");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
      throw ValidationError("router dropout_rate must be in [0, 1)");
    }
    if (noise_std < 0.0) {
      throw ValidationError("router noise_std must be >= 0");
    }
  }
};

// One routing decision, recorded for analysis and load-balance statistics.
struct RoutingTraceEntry {
  int timestep = -1;
  std::array<float, kStageCount> clean_logits{};
  std::array<float, kStageCount> noisy_logits{};  // meaningful in train mode only
  std::array<float, kStageCount> probs{};         // softmax of the selection logits
  int selected = -1;
  bool train_mode = false;
};

// Bound views into a ParamStore. `create` registers fresh (zero) parameters;
// `bind` attaches to existing ones and validates shapes, which is the path
// taken after a checkpoint load.
template <typename S>
struct RouterParams {
  Parameter<S>* proj_w = nullptr;    // model_dim x 4*stage_dim
  Parameter<S>* proj_b = nullptr;    // model_dim x 1
  Parameter<S>* ctx_in_w = nullptr;  // context_dim x 2*model_dim
  Parameter<S>* gru_w_ih = nullptr;  // 3*context_dim x context_dim (reset|update|candidate)
  Parameter<S>* gru_w_hh = nullptr;  // 3*context_dim x context_dim
  Parameter<S>* gru_b_ih = nullptr;  // 3*context_dim x 1
  Parameter<S>* gru_b_hh = nullptr;  // 3*context_dim x 1
  Parameter<S>* gate_w = nullptr;    // 4 x (model_dim + context_dim)
  Parameter<S>* gate_b = nullptr;    // 4 x 1
  std::array<Parameter<S>*, kStageCount> expert_w1{};  // stage_dim x stage_dim
  std::array<Parameter<S>*, kStageCount> expert_b1{};  // stage_dim x 1
  std::array<Parameter<S>*, kStageCount> expert_w2{};  // model_dim x stage_dim
  std::array<Parameter<S>*, kStageCount> expert_b2{};  // model_dim x 1
  Parameter<S>* response_table = nullptr;  // 3 x model_dim (rows: wrong, right, start)
  Parameter<S>* ln_gamma = nullptr;        // model_dim x 1
  Parameter<S>* ln_beta = nullptr;         // model_dim x 1

  static RouterParams create(ParamStore<S>& store, const RouterConfig& cfg) {
    cfg.validate();
    RouterParams p;
    const int sd = cfg.stage_dim, md = cfg.model_dim, cd = cfg.context_dim;
    p.proj_w = &store.add("router.proj.w", md, kStageCount * sd);
    p.proj_b = &store.add("router.proj.b", md, 1);
    p.ctx_in_w = &store.add("router.ctx_in.w", cd, 2 * md);
    p.gru_w_ih = &store.add("router.gru.w_ih", 3 * cd, cd);
    p.gru_w_hh = &store.add("router.gru.w_hh", 3 * cd, cd);
    p.gru_b_ih = &store.add("router.gru.b_ih", 3 * cd, 1);
    p.gru_b_hh = &store.add("router.gru.b_hh", 3 * cd, 1);
    p.gate_w = &store.add("router.gate.w", kStageCount, md + cd);
    p.gate_b = &store.add("router.gate.b", kStageCount, 1);
    for (int e = 0; e < kStageCount; ++e) {
      const std::string base = "router.expert" + std::to_string(e);
      p.expert_w1[e] = &store.add(base + ".w1", sd, sd);
      p.expert_b1[e] = &store.add(base + ".b1", sd, 1);
      p.expert_w2[e] = &store.add(base + ".w2", md, sd);
      p.expert_b2[e] = &store.add(base + ".b2", md, 1);
    }
    p.response_table = &store.add("router.response_table", 3, md);
    p.ln_gamma = &store.add("router.ln.gamma", md, 1);
    p.ln_beta = &store.add("router.ln.beta", md, 1);
    return p;
  }

  static RouterParams bind(ParamStore<S>& store, const RouterConfig& cfg) {
    cfg.validate();
    RouterParams p;
    const int sd = cfg.stage_dim, md = cfg.model_dim, cd = cfg.context_dim;
    auto fetch = [&](const std::string& name, int r, int c) -> Parameter<S>* {
      Parameter<S>& q = store.get(name);
      if (q.value.rows() != r || q.value.cols() != c) {
        throw ValidationError("parameter shape mismatch for " + name);
      }
      return &q;
    };
    p.proj_w = fetch("router.proj.w", md, kStageCount * sd);
    p.proj_b = fetch("router.proj.b", md, 1);
    p.ctx_in_w = fetch("router.ctx_in.w", cd, 2 * md);
    p.gru_w_ih = fetch("router.gru.w_ih", 3 * cd, cd);
    p.gru_w_hh = fetch("router.gru.w_hh", 3 * cd, cd);
    p.gru_b_ih = fetch("router.gru.b_ih", 3 * cd, 1);
    p.gru_b_hh = fetch("router.gru.b_hh", 3 * cd, 1);
    p.gate_w = fetch("router.gate.w", kStageCount, md + cd);
    p.gate_b = fetch("router.gate.b", kStageCount, 1);
    for (int e = 0; e < kStageCount; ++e) {
      const std::string base = "router.expert" + std::to_string(e);
      p.expert_w1[e] = fetch(base + ".w1", sd, sd);
      p.expert_b1[e] = fetch(base + ".b1", sd, 1);
      p.expert_w2[e] = fetch(base + ".w2", md, sd);
      p.expert_b2[e] = fetch(base + ".b2", md, 1);
    }
    p.response_table = fetch("router.response_table", 3, md);
    p.ln_gamma = fetch("router.ln.gamma", md, 1);
    p.ln_beta = fetch("router.ln.beta", md, 1);
    return p;
  }

  void init(const RouterConfig& cfg, Rng& rng) {
    init_uniform(*proj_w, kStageCount * cfg.stage_dim, rng);
    init_uniform(*proj_b, kStageCount * cfg.stage_dim, rng);
    init_uniform(*ctx_in_w, 2 * cfg.model_dim, rng);
    init_uniform(*gru_w_ih, cfg.context_dim, rng);
    init_uniform(*gru_w_hh, cfg.context_dim, rng);
    init_uniform(*gru_b_ih, cfg.context_dim, rng);
    init_uniform(*gru_b_hh, cfg.context_dim, rng);
    init_uniform(*gate_w, cfg.model_dim + cfg.context_dim, rng);
    init_uniform(*gate_b, cfg.model_dim + cfg.context_dim, rng);
    for (int e = 0; e < kStageCount; ++e) {
      init_uniform(*expert_w1[e], cfg.stage_dim, rng);
      init_uniform(*expert_b1[e], cfg.stage_dim, rng);
      init_uniform(*expert_w2[e], cfg.stage_dim, rng);
      init_uniform(*expert_b2[e], cfg.stage_dim, rng);
    }
    init_uniform(*response_table, cfg.model_dim, rng);
    ln_gamma->value.setOnes();
    ln_beta->value.setZero();
  }
};

// Row index into response_table for an observed response or the
// start-of-sequence placeholder used at t=0.
inline int response_row(int response_or_start) {
  if (response_or_start < 0 || response_or_start > 2) {
    throw ValidationError("response row must be 0 (wrong), 1 (right) or 2 (start)");
  }
  return response_or_start;
}
constexpr int kResponseStartRow = 2;

constexpr double kLayerNormEps = 1e-5;

// ---- graph builders (batched: columns are batch entries) -----------------

// s = dropout(ReLU(proj_w · stage_concat + proj_b)). stage_concat is the
// (4*stage_dim x B) stack of the item's four stage vectors.
template <typename S>
typename Tape<S>::Id encode_solution_graph(Tape<S>& tape, typename Tape<S>::Id stage_concat,
                                           const RouterParams<S>& p, const RouterConfig& cfg,
                                           bool train, Rng& rng) {
  if (tape.rows(stage_concat) != kStageCount * cfg.stage_dim) {
    throw ValidationError("encode_solution: stage stack width mismatch");
  }
  auto a = tape.add_bias(tape.matmul(tape.param(*p.proj_w), stage_concat),
                         tape.param(*p.proj_b));
  return tape.dropout(tape.relu(a), cfg.dropout_rate, train, rng);
}

// Standard GRU cell over the projected [s_prev ⊕ response-embedding] input:
//   r = sigma(W_ir x + b_ir + W_hr m + b_hr)
//   z = sigma(W_iz x + b_iz + W_hz m + b_hz)
//   n = tanh(W_in x + b_in + r .* (W_hn m + b_hn))
//   m' = z .* m + (1 - z) .* n
template <typename S>
typename Tape<S>::Id update_context_graph(Tape<S>& tape, typename Tape<S>::Id m_prev,
                                          typename Tape<S>::Id s_prev,
                                          const std::vector<int>& response_rows,
                                          const RouterParams<S>& p, const RouterConfig& cfg) {
  if (tape.rows(s_prev) != cfg.model_dim || tape.rows(m_prev) != cfg.context_dim) {
    throw ValidationError("update_context: state width mismatch");
  }
  auto resp = tape.take_rows_t(*p.response_table, response_rows);
  auto x = tape.matmul(tape.param(*p.ctx_in_w), tape.concat_rows(s_prev, resp));
  auto gi = tape.add_bias(tape.matmul(tape.param(*p.gru_w_ih), x), tape.param(*p.gru_b_ih));
  auto gh = tape.add_bias(tape.matmul(tape.param(*p.gru_w_hh), m_prev), tape.param(*p.gru_b_hh));
  const int cd = cfg.context_dim;
  auto r = tape.sigmoid(tape.add(tape.slice_rows(gi, 0, cd), tape.slice_rows(gh, 0, cd)));
  auto z = tape.sigmoid(tape.add(tape.slice_rows(gi, cd, cd), tape.slice_rows(gh, cd, cd)));
  auto n = tape.tanh_op(tape.add(tape.slice_rows(gi, 2 * cd, cd),
                                 tape.hadamard(r, tape.slice_rows(gh, 2 * cd, cd))));
  return tape.add(tape.hadamard(z, m_prev), tape.hadamard(tape.one_minus(z), n));
}

// Result of one batched gating decision.
template <typename S>
struct GateStep {
  typename Tape<S>::Id clean_logits = -1;  // 4 x B
  typename Tape<S>::Id sel_logits = -1;    // logits the argmax ran on
  typename Tape<S>::Id probs = -1;         // softmax_cols(sel_logits)
  std::vector<int> selected;               // per column, ties -> lowest index
};

template <typename S>
std::vector<int> argmax_cols_lowest_tie(const Mat<S>& logits) {
  std::vector<int> out(logits.cols());
  for (int j = 0; j < logits.cols(); ++j) {
    int best = 0;
    for (int i = 1; i < logits.rows(); ++i) {
      if (logits(i, j) > logits(best, j)) best = i;
    }
    out[j] = best;
  }
  return out;
}

// logits = gate_w · [s ⊕ m] + gate_b. Train mode draws one Gaussian per
// logit (column-major order) from `rng` and selects on the noisy values;
// eval selects on the clean ones. `replay_selected` overrides the argmax
// (frozen-routing gradient checks); noise is still drawn so the stream
// stays aligned.
template <typename S>
GateStep<S> gate_graph(Tape<S>& tape, typename Tape<S>::Id s, typename Tape<S>::Id m,
                       const RouterParams<S>& p, const RouterConfig& cfg, bool train,
                       Rng& rng, const std::vector<int>* replay_selected = nullptr) {
  GateStep<S> step;
  auto cat = tape.concat_rows(s, m);
  step.clean_logits =
      tape.add_bias(tape.matmul(tape.param(*p.gate_w), cat), tape.param(*p.gate_b));
  step.sel_logits = step.clean_logits;
  if (train && cfg.noise_std > 0.0) {
    Mat<S> noise(kStageCount, tape.cols(s));
    for (int j = 0; j < noise.cols(); ++j) {
      for (int i = 0; i < noise.rows(); ++i) {
        noise(i, j) = static_cast<S>(rng.normal(0.0, cfg.noise_std));
      }
    }
    step.sel_logits = tape.add(step.clean_logits, tape.constant(std::move(noise)));
  }
  step.probs = tape.softmax_cols(step.sel_logits);
  if (replay_selected != nullptr) {
    if (static_cast<int>(replay_selected->size()) != tape.cols(s)) {
      throw ValidationError("routing replay has wrong batch width");
    }
    step.selected = *replay_selected;
  } else {
    step.selected = argmax_cols_lowest_tie(tape.value(step.sel_logits));
  }
  return step;
}

// LayerNorm(expert_{k*_j}(column j of expert_in)). All four experts run on
// the full batch and a 0/1 column mask keeps only the selected one, which
// makes the non-selected experts' gradients exactly zero for that column.
template <typename S>
typename Tape<S>::Id expert_transform_graph(Tape<S>& tape, typename Tape<S>::Id expert_in,
                                            const std::vector<int>& selected,
                                            const RouterParams<S>& p, const RouterConfig& cfg,
                                            bool train, Rng& rng) {
  const int b = tape.cols(expert_in);
  if (static_cast<int>(selected.size()) != b) {
    throw ValidationError("expert selection has wrong batch width");
  }
  typename Tape<S>::Id combined = -1;
  for (int e = 0; e < kStageCount; ++e) {
    auto h1 = tape.relu(tape.add_bias(tape.matmul(tape.param(*p.expert_w1[e]), expert_in),
                                      tape.param(*p.expert_b1[e])));
    h1 = tape.dropout(h1, cfg.dropout_rate, train, rng);
    auto out = tape.add_bias(tape.matmul(tape.param(*p.expert_w2[e]), h1),
                             tape.param(*p.expert_b2[e]));
    Mat<S> mask = Mat<S>::Zero(cfg.model_dim, b);
    for (int j = 0; j < b; ++j) {
      if (selected[j] == e) mask.col(j).setOnes();
    }
    auto masked = tape.cmul(out, std::move(mask));
    combined = (combined < 0) ? masked : tape.add(combined, masked);
  }
  return tape.layer_norm_cols(combined, tape.param(*p.ln_gamma), tape.param(*p.ln_beta),
                              static_cast<S>(kLayerNormEps));
}

// ---- single-vector wrappers (tests, analysis) ----------------------------

template <typename S>
Vec<S> encode_solution(const std::array<Vec<S>, kStageCount>& stage_vectors,
                       const RouterParams<S>& p, const RouterConfig& cfg, bool train,
                       Rng& rng) {
  Mat<S> cat(kStageCount * cfg.stage_dim, 1);
  for (int i = 0; i < kStageCount; ++i) {
    if (stage_vectors[i].size() != cfg.stage_dim) {
      throw ValidationError("encode_solution: stage vector width mismatch");
    }
    cat.block(i * cfg.stage_dim, 0, cfg.stage_dim, 1) = stage_vectors[i];
  }
  Tape<S> tape;
  auto s = encode_solution_graph(tape, tape.constant(std::move(cat)),
                                 p, cfg, train, rng);
  return tape.value(s).col(0);
}

template <typename S>
Vec<S> update_context(const Vec<S>& m_prev, const Vec<S>& s_prev, int response_or_start,
                      const RouterParams<S>& p, const RouterConfig& cfg) {
  Tape<S> tape;
  auto m = update_context_graph(tape, tape.constant(Mat<S>(m_prev)),
                                tape.constant(Mat<S>(s_prev)),
                                std::vector<int>{response_row(response_or_start)},
                                p, cfg);
  return tape.value(m).col(0);
}

template <typename S>
RoutingTraceEntry gate(const Vec<S>& s, const Vec<S>& m, const RouterParams<S>& p,
                       const RouterConfig& cfg, bool train, Rng& rng, int timestep = -1) {
  Tape<S> tape;
  auto step = gate_graph(tape, tape.constant(Mat<S>(s)), tape.constant(Mat<S>(m)),
                         p, cfg, train, rng);
  RoutingTraceEntry e;
  e.timestep = timestep;
  e.train_mode = train;
  e.selected = step.selected[0];
  for (int i = 0; i < kStageCount; ++i) {
    e.clean_logits[i] = static_cast<float>(tape.value(step.clean_logits)(i, 0));
    e.noisy_logits[i] = static_cast<float>(tape.value(step.sel_logits)(i, 0));
    e.probs[i] = static_cast<float>(tape.value(step.probs)(i, 0));
  }
  return e;
}

template <typename S>
Vec<S> expert_transform(const Vec<S>& stage_vector, int selected, const RouterParams<S>& p,
                        const RouterConfig& cfg, bool train, Rng& rng) {
  if (selected < 0 || selected >= kStageCount) {
    throw ValidationError("expert index out of range");
  }
  Tape<S> tape;
  auto out = expert_transform_graph(tape, tape.constant(Mat<S>(stage_vector)),
                                    std::vector<int>{selected},
                                    p, cfg, train, rng);
  return tape.value(out).col(0);
}

// Full per-item composition against a trainable stage table whose rows are
// laid out as item*4+stage. Returns the item representation and the trace.
template <typename S>
std::pair<Vec<S>, RoutingTraceEntry> route_item(int item_id, Parameter<S>& stage_table,
                                                int item_count, const Vec<S>& context_m,
                                                const RouterParams<S>& p,
                                                const RouterConfig& cfg, bool train, Rng& rng,
                                                int timestep = -1) {
  if (item_id < 0 || item_id >= item_count) {
    throw ValidationError("route_item: unknown item " + std::to_string(item_id));
  }
  Tape<S> tape;
  std::vector<typename Tape<S>::Id> stage_nodes;
  for (int s = 0; s < kStageCount; ++s) {
    stage_nodes.push_back(
        tape.take_rows_t(stage_table, std::vector<int>{item_id * kStageCount + s}));
  }
  typename Tape<S>::Id cat = stage_nodes[0];
  for (int s = 1; s < kStageCount; ++s) cat = tape.concat_rows(cat, stage_nodes[s]);
  auto s_node = encode_solution_graph(tape, cat, p, cfg, train, rng);
  auto step = gate_graph(tape, s_node, tape.constant(Mat<S>(context_m)), p, cfg, train, rng);
  RoutingTraceEntry e;
  e.timestep = timestep;
  e.train_mode = train;
  e.selected = step.selected[0];
  for (int i = 0; i < kStageCount; ++i) {
    e.clean_logits[i] = static_cast<float>(tape.value(step.clean_logits)(i, 0));
    e.noisy_logits[i] = static_cast<float>(tape.value(step.sel_logits)(i, 0));
    e.probs[i] = static_cast<float>(tape.value(step.probs)(i, 0));
  }
  auto expert_in = tape.take_rows_t(
      stage_table, std::vector<int>{item_id * kStageCount + e.selected});
  auto repr = expert_transform_graph(tape, expert_in, step.selected, p, cfg, train, rng);
  if (cfg.scale_by_gate_prob) {
    Mat<S> sel_mask = Mat<S>::Zero(kStageCount, 1);
    sel_mask(e.selected, 0) = S(1);
    auto p_sel = tape.coldot(step.probs, tape.constant(std::move(sel_mask)));
    repr = tape.mul_colscale(repr, p_sel);
  }
  return {tape.value(repr).col(0), e};
}

// Batch-mean routing probabilities and their squared deviation from the
// uniform distribution: L = sum_j (pbar_j - 1/4)^2.
std::pair<std::array<double, kStageCount>, double> load_balance_stats(
    const std::vector<RoutingTraceEntry>& entries,
    const std::vector<std::uint8_t>* valid = nullptr);

}  // namespace baim
