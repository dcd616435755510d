// SPDX-License-Identifier: Apache-2.0
//
// Tests for the two sequence backbones and the full-model forward pass:
// interaction embeddings, the static item-lookup baseline, causal
// attention reduced to hand-checkable cases, strict causality, padding
// invariance, and context-driven routing flips end to end.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "baim/model.hpp"

namespace {

using BParamsD = baim::BackboneParams<double>;

baim::BackboneConfig recurrent_config(int dim) {
  baim::BackboneConfig cfg;
  cfg.kind = baim::BackboneKind::kRecurrent;
  cfg.model_dim = dim;
  return cfg;
}

baim::BackboneConfig attention_config(int dim, int heads, int max_len) {
  baim::BackboneConfig cfg;
  cfg.kind = baim::BackboneKind::kAttention;
  cfg.model_dim = dim;
  cfg.heads = heads;
  cfg.max_len = max_len;
  return cfg;
}

// Hand-built right-padded batch; rows are timesteps, columns are learners.
baim::Batch make_batch(const std::vector<std::vector<int>>& items,
                       const std::vector<std::vector<int>>& responses) {
  const int b = static_cast<int>(items.size());
  int t_max = 0;
  for (const auto& seq : items) t_max = std::max(t_max, int(seq.size()));
  baim::Batch batch;
  batch.items.setZero(t_max, b);
  batch.responses.setZero(t_max, b);
  batch.active.setZero(t_max, b);
  for (int j = 0; j < b; ++j) {
    batch.learner_ids.push_back(j);
    for (int t = 0; t < int(items[j].size()); ++t) {
      batch.items(t, j) = items[j][t];
      batch.responses(t, j) = responses[j][t];
      batch.active(t, j) = 1;
    }
  }
  return batch;
}

baim::ModelConfig static_model_config(baim::BackboneConfig backbone) {
  baim::ModelConfig cfg;
  backbone.item_repr_mode = baim::ItemReprMode::kStatic;
  cfg.backbone = backbone;
  return cfg;
}

baim::ModelConfig baim_model_config(baim::BackboneConfig backbone,
                                    int stage_dim, int context_dim) {
  baim::ModelConfig cfg;
  backbone.item_repr_mode = baim::ItemReprMode::kBaim;
  cfg.backbone = backbone;
  cfg.router.stage_dim = stage_dim;
  cfg.router.model_dim = backbone.model_dim;
  cfg.router.context_dim = context_dim;
  cfg.router.dropout_rate = 0.0;
  return cfg;
}

baim::MatD eval_predictions(const baim::KtModel<double>& model,
                            const baim::Batch& batch) {
  baim::Tape<double> tape;
  baim::Rng rng(1);
  baim::ForwardOptions opt;
  auto out = model.forward(tape, batch, opt, rng);
  return out.predictions;
}

}  // namespace

// ---------------------------------------------------------------------------
// Interaction embeddings
// ---------------------------------------------------------------------------

TEST_CASE("attention interaction embedding with zero response table is the identity") {
  auto cfg = attention_config(3, 1, 8);
  baim::ParamStore<double> store;
  auto p = BParamsD::create(store, cfg);
  baim::VecD v(3);
  v << 0.5, -1.0, 2.0;
  baim::VecD out = baim::interaction_embed(v, 1, p, cfg);
  CHECK((out - v).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("attention interaction embedding adds the response row") {
  auto cfg = attention_config(3, 1, 8);
  baim::ParamStore<double> store;
  auto p = BParamsD::create(store, cfg);
  p.resp_embed->value.row(0) << 1.0, 2.0, 3.0;
  p.resp_embed->value.row(1) << -1.0, 0.0, 1.0;
  baim::VecD v(3);
  v << 0.5, 0.5, 0.5;
  baim::VecD wrong = baim::interaction_embed(v, 0, p, cfg);
  baim::VecD right = baim::interaction_embed(v, 1, p, cfg);
  CHECK(wrong(0) == doctest::Approx(1.5));
  CHECK(wrong(1) == doctest::Approx(2.5));
  CHECK(wrong(2) == doctest::Approx(3.5));
  CHECK(right(0) == doctest::Approx(-0.5));
  CHECK(right(1) == doctest::Approx(0.5));
  CHECK(right(2) == doctest::Approx(1.5));
}

TEST_CASE("recurrent embedding applies opposite-sign maps per response") {
  auto cfg = recurrent_config(3);
  baim::ParamStore<double> store;
  auto p = BParamsD::create(store, cfg);
  p.resp_w1->value.setIdentity();
  p.resp_w0->value = -baim::MatD::Identity(3, 3);
  baim::VecD v(3);
  v << 1.0, -2.0, 0.25;
  baim::VecD wrong = baim::interaction_embed(v, 0, p, cfg);
  baim::VecD right = baim::interaction_embed(v, 1, p, cfg);
  CHECK((wrong + v).cwiseAbs().maxCoeff() == 0.0);
  CHECK((right - v).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("identical response maps make the embedding response-blind") {
  auto cfg = recurrent_config(4);
  baim::ParamStore<double> store;
  auto p = BParamsD::create(store, cfg);
  baim::Rng rng(3);
  p.init(cfg, rng);
  p.resp_w0->value = p.resp_w1->value;
  p.resp_b0->value = p.resp_b1->value;
  baim::VecD v(4);
  for (int i = 0; i < 4; ++i) v(i) = rng.normal(0.0, 1.0);
  baim::VecD a = baim::interaction_embed(v, 0, p, cfg);
  baim::VecD b = baim::interaction_embed(v, 1, p, cfg);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("interaction embedding rejects non-binary responses") {
  auto cfg = recurrent_config(3);
  baim::ParamStore<double> store;
  auto p = BParamsD::create(store, cfg);
  baim::VecD v = baim::VecD::Zero(3);
  CHECK_THROWS_AS(baim::interaction_embed(v, 2, p, cfg), baim::ValidationError);
  CHECK_THROWS_AS(baim::interaction_embed(v, -1, p, cfg), baim::ValidationError);
}

// ---------------------------------------------------------------------------
// Static item lookup
// ---------------------------------------------------------------------------

TEST_CASE("static item lookup is a deterministic per-item table read") {
  baim::ParamStore<double> store;
  auto& table = store.add("static_table", 5, 3);
  baim::Rng rng(7);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 3; ++c) table.value(r, c) = rng.normal(0.0, 1.0);
  baim::VecD a = baim::static_item_repr(table, 2);
  baim::VecD b = baim::static_item_repr(table, 2);
  CHECK(a.size() == 3);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  baim::VecD other = baim::static_item_repr(table, 3);
  CHECK((a - other).cwiseAbs().maxCoeff() > 0.0);
  CHECK_THROWS_AS(baim::static_item_repr(table, 5), baim::ValidationError);
  CHECK_THROWS_AS(baim::static_item_repr(table, -1), baim::ValidationError);
}

// ---------------------------------------------------------------------------
// Attention context
// ---------------------------------------------------------------------------

TEST_CASE("single-head attention with identity projections, hand case") {
  // Query (sqrt(2) ln 2, 0) against keys e1, e2 gives scaled scores
  // (ln 2, 0), softmax weights (2/3, 1/3), and with identity value and
  // output projections the context is exactly (2/3, 1/3).
  auto cfg = attention_config(2, 1, 8);
  baim::ParamStore<double> store;
  auto p = BParamsD::create(store, cfg);
  p.attn_wq->value.setIdentity();
  p.attn_wo->value.setIdentity();
  baim::Tape<double> tape;
  baim::MatD k1(2, 1), k2(2, 1), v1(2, 1), v2(2, 1), q(2, 1);
  k1 << 1.0, 0.0;
  k2 << 0.0, 1.0;
  v1 << 1.0, 0.0;
  v2 << 0.0, 1.0;
  q << std::sqrt(2.0) * std::log(2.0), 0.0;
  std::vector<baim::Tape<double>::Id> keys = {tape.constant(k1), tape.constant(k2)};
  std::vector<baim::Tape<double>::Id> values = {tape.constant(v1), tape.constant(v2)};
  auto ctx = baim::attention_context_graph(tape, tape.constant(q), keys, values, p, cfg);
  CHECK(tape.value(ctx)(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(tape.value(ctx)(1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("attention context stays in the convex hull of the values") {
  auto cfg = attention_config(2, 1, 8);
  baim::ParamStore<double> store;
  auto p = BParamsD::create(store, cfg);
  p.attn_wq->value.setIdentity();
  p.attn_wo->value.setIdentity();
  baim::Rng rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    baim::Tape<double> tape;
    std::vector<baim::Tape<double>::Id> keys, values;
    std::vector<baim::MatD> raw_values;
    for (int j = 0; j < 3; ++j) {
      baim::MatD k(2, 1), v(2, 1);
      k << rng.normal(0.0, 1.0), rng.normal(0.0, 1.0);
      v << rng.normal(0.0, 1.0), rng.normal(0.0, 1.0);
      keys.push_back(tape.constant(k));
      values.push_back(tape.constant(v));
      raw_values.push_back(v);
    }
    baim::MatD q(2, 1);
    q << rng.normal(0.0, 1.0), rng.normal(0.0, 1.0);
    auto ctx = baim::attention_context_graph(tape, tape.constant(q), keys, values, p, cfg);
    for (int i = 0; i < 2; ++i) {
      double lo = raw_values[0](i, 0), hi = raw_values[0](i, 0);
      for (const auto& v : raw_values) {
        lo = std::min(lo, v(i, 0));
        hi = std::max(hi, v(i, 0));
      }
      CHECK(tape.value(ctx)(i, 0) >= lo - 1e-12);
      CHECK(tape.value(ctx)(i, 0) <= hi + 1e-12);
    }
  }
}

TEST_CASE("attention context requires matching non-empty history") {
  auto cfg = attention_config(2, 1, 8);
  baim::ParamStore<double> store;
  auto p = BParamsD::create(store, cfg);
  baim::Tape<double> tape;
  auto q = tape.constant(baim::MatD::Zero(2, 1).eval());
  std::vector<baim::Tape<double>::Id> empty;
  CHECK_THROWS_AS(baim::attention_context_graph(tape, q, empty, empty, p, cfg),
                  baim::ValidationError);
}

// ---------------------------------------------------------------------------
// Full forward pass
// ---------------------------------------------------------------------------

TEST_CASE("zero prediction head outputs one half everywhere") {
  for (auto kind : {baim::BackboneKind::kRecurrent, baim::BackboneKind::kAttention}) {
    auto backbone = kind == baim::BackboneKind::kRecurrent
                        ? recurrent_config(4)
                        : attention_config(4, 2, 8);
    baim::KtModel<double> model(static_model_config(backbone), /*item_count=*/3);
    // Parameters start at zero: the head logit is exactly 0.
    auto batch = make_batch({{0, 1, 2}, {2, 2, 0}}, {{1, 0, 1}, {0, 0, 1}});
    baim::MatD y = eval_predictions(model, batch);
    for (int t = 0; t < y.rows(); ++t) {
      for (int j = 0; j < y.cols(); ++j) CHECK(y(t, j) == 0.5);
    }
    // Mean binary cross-entropy at exactly 0.5 is ln 2.
    baim::Tape<double> tape;
    baim::Rng rng(1);
    baim::ForwardOptions opt;
    auto out = model.forward(tape, batch, opt, rng);
    CHECK(out.active_count == 6);
    CHECK(tape.value(out.kt_loss)(0, 0) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
}

TEST_CASE("predictions never leave the open unit interval") {
  for (auto kind : {baim::BackboneKind::kRecurrent, baim::BackboneKind::kAttention}) {
    auto backbone = kind == baim::BackboneKind::kRecurrent
                        ? recurrent_config(6)
                        : attention_config(6, 3, 8);
    baim::KtModel<double> model(static_model_config(backbone), 4);
    baim::Rng rng(23);
    model.init_params(rng, nullptr);
    // Exaggerate the head so the logit magnitude is large but finite.
    model.store().get("backbone.head.w2").value *= 50.0;
    auto batch = make_batch({{0, 1, 2, 3, 0}}, {{1, 0, 1, 1, 0}});
    baim::MatD y = eval_predictions(model, batch);
    for (int t = 0; t < y.rows(); ++t) {
      CHECK(y(t, 0) > 0.0);
      CHECK(y(t, 0) < 1.0);
      CHECK(std::isfinite(y(t, 0)));
    }
  }
}

TEST_CASE("future interactions cannot reach earlier predictions") {
  // Modify the interaction at one position; every prediction strictly
  // before it must be bit-for-bit unchanged.
  for (auto kind : {baim::BackboneKind::kRecurrent, baim::BackboneKind::kAttention}) {
    auto backbone = kind == baim::BackboneKind::kRecurrent
                        ? recurrent_config(5)
                        : attention_config(6, 2, 10);
    baim::KtModel<double> model(static_model_config(backbone), 4);
    baim::Rng rng(29);
    model.init_params(rng, nullptr);
    auto batch = make_batch({{0, 1, 2, 3, 0, 1}, {3, 2, 1, 0, 3, 2}},
                            {{1, 0, 1, 1, 0, 1}, {0, 1, 0, 1, 1, 0}});
    baim::MatD base = eval_predictions(model, batch);
    const int cut = 3;
    auto perturbed = batch;
    perturbed.items(cut, 0) = 2;
    perturbed.responses(cut, 0) = 0;
    perturbed.items(cut + 1, 1) = 0;
    perturbed.responses(cut + 1, 1) = 1;
    baim::MatD changed = eval_predictions(model, perturbed);
    for (int t = 0; t < cut; ++t) {
      CHECK(changed(t, 0) == base(t, 0));
      CHECK(changed(t, 1) == base(t, 1));
    }
    // The perturbed position itself must feel the item change.
    CHECK(changed(cut, 0) != base(cut, 0));
  }
}

TEST_CASE("padded tail values cannot reach active predictions or losses") {
  // Column 0 is 3 long inside a 5-step batch. Scribbling over its padded
  // tail must leave every active prediction and both loss terms identical.
  auto backbone = recurrent_config(4);
  auto cfg = baim_model_config(backbone, 3, 2);
  baim::KtModel<double> model(cfg, 4);
  baim::Rng rng(31);
  model.init_params(rng, nullptr);
  auto batch = make_batch({{0, 1, 2}, {3, 2, 1, 0, 3}}, {{1, 0, 1}, {0, 1, 1, 0, 1}});
  auto scribbled = batch;
  scribbled.items(3, 0) = 2;
  scribbled.items(4, 0) = 1;
  scribbled.responses(3, 0) = 1;
  scribbled.responses(4, 0) = 1;

  baim::Tape<double> tape_a, tape_b;
  baim::Rng ra(1), rb(1);
  baim::ForwardOptions opt;
  opt.lambda_lb = 0.01;
  auto out_a = model.forward(tape_a, batch, opt, ra);
  auto out_b = model.forward(tape_b, scribbled, opt, rb);
  for (int t = 0; t < batch.steps(); ++t) {
    for (int j = 0; j < batch.width(); ++j) {
      if (batch.active(t, j)) {
        CHECK(out_b.predictions(t, j) == out_a.predictions(t, j));
      }
    }
  }
  CHECK(tape_b.value(out_b.kt_loss)(0, 0) == tape_a.value(out_a.kt_loss)(0, 0));
  CHECK(tape_b.value(out_b.lb_loss)(0, 0) == tape_a.value(out_a.lb_loss)(0, 0));
  CHECK(out_a.active_count == 8);
}

TEST_CASE("learner context can flip the routed stage inside the forward pass") {
  // Wire the context path so the response at t=0 determines the first
  // context coordinate's sign, and the gate reads only that sign. The
  // stage selected at t=1 must then follow the t=0 response.
  auto cfg = baim_model_config(recurrent_config(3), 2, 2);
  baim::KtModel<double> model(cfg, 1);
  baim::Rng rng(37);
  model.init_params(rng, nullptr);
  auto router = baim::RouterParams<double>::bind(model.store(), cfg.router);
  const int md = cfg.router.model_dim;  // 3
  const int cd = cfg.router.context_dim;  // 2
  // Context input reads only the response embedding's first coordinate.
  router.ctx_in_w->value.setZero();
  router.ctx_in_w->value(0, md) = 1.0;
  router.response_table->value.setZero();
  router.response_table->value(0, 0) = -5.0;  // wrong answer -> negative
  router.response_table->value(1, 0) = 5.0;   // right answer -> positive
  // GRU: zero hidden path, unit candidate on coordinate 0, neutral gates.
  router.gru_w_ih->value.setZero();
  router.gru_w_hh->value.setZero();
  router.gru_b_ih->value.setZero();
  router.gru_b_hh->value.setZero();
  router.gru_w_ih->value(2 * cd, 0) = 1.0;
  // Gate: logit 0 = +m(0), logit 1 = -m(0), others 0.
  router.gate_w->value.setZero();
  router.gate_b->value.setZero();
  router.gate_w->value(0, md) = 1.0;
  router.gate_w->value(1, md) = -1.0;

  auto run = [&](int first_response) {
    auto batch = make_batch({{0, 0}}, {{first_response, 0}});
    baim::Tape<double> tape;
    baim::Rng r(1);
    baim::ForwardOptions opt;
    auto out = model.forward(tape, batch, opt, r);
    return std::make_pair(out.traces, out.predictions);
  };
  auto [traces_right, y_right] = run(1);
  auto [traces_wrong, y_wrong] = run(0);
  // t=0: zero context, all logits tie, lowest index wins in both runs.
  CHECK(traces_right[0][0].selected == 0);
  CHECK(traces_wrong[0][0].selected == 0);
  // t=1: context sign follows the first response and the gate follows it.
  CHECK(traces_right[1][0].selected == 0);
  CHECK(traces_wrong[1][0].selected == 1);
  // Different experts produce different representations and predictions.
  CHECK(y_right(1, 0) != y_wrong(1, 0));
}

TEST_CASE("forced routing strategies bypass the gate") {
  auto cfg = baim_model_config(recurrent_config(3), 2, 2);
  cfg.routing = baim::RoutingStrategy::fixed(2);
  baim::KtModel<double> model(cfg, 2);
  baim::Rng rng(41);
  model.init_params(rng, nullptr);
  auto batch = make_batch({{0, 1, 0}}, {{1, 0, 1}});
  baim::Tape<double> tape;
  baim::Rng r(1);
  baim::ForwardOptions opt;
  opt.lambda_lb = 0.01;
  auto out = model.forward(tape, batch, opt, r);
  for (const auto& step : out.traces) {
    CHECK(step[0].selected == 2);
    CHECK(step[0].probs[2] == 1.0f);
  }
  // No adaptive gate -> no balance term.
  CHECK(out.lb_loss == -1);
}

TEST_CASE("routing strategy names round trip") {
  using RS = baim::RoutingStrategy;
  CHECK(RS::parse("adaptive").kind == RS::Kind::kAdaptive);
  CHECK(RS::parse("holistic").kind == RS::Kind::kHolistic);
  auto f = RS::parse("fixed-stage-2");
  CHECK(f.kind == RS::Kind::kFixedStage);
  CHECK(f.fixed_stage == 2);
  CHECK(RS::parse(RS::fixed(3).str()).fixed_stage == 3);
  CHECK(RS::adaptive().str() == "adaptive");
  CHECK_THROWS_AS(RS::parse("fixed-stage-4"), baim::ValidationError);
  CHECK_THROWS_AS(RS::parse("bogus"), baim::ValidationError);
  CHECK_THROWS_AS(RS::fixed(4), baim::ValidationError);
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

TEST_CASE("backbone config validation") {
  auto cfg = attention_config(6, 4, 8);  // 4 does not divide 6
  CHECK_THROWS_AS(cfg.validate(), baim::ValidationError);
  cfg = attention_config(8, 4, 8);
  CHECK_NOTHROW(cfg.validate());
  cfg.attention_layers = 2;
  CHECK_THROWS_AS(cfg.validate(), baim::ValidationError);
  cfg = attention_config(8, 4, 0);
  CHECK_THROWS_AS(cfg.validate(), baim::ValidationError);
  cfg = recurrent_config(0);
  CHECK_THROWS_AS(cfg.validate(), baim::ValidationError);
  // The recurrent kind ignores attention-only fields.
  cfg = recurrent_config(6);
  cfg.heads = 4;
  CHECK_NOTHROW(cfg.validate());

  CHECK(baim::backbone_kind_from_string("recurrent") == baim::BackboneKind::kRecurrent);
  CHECK(baim::to_string(baim::BackboneKind::kAttention) == "attention");
  CHECK_THROWS_AS(baim::backbone_kind_from_string("gru"), baim::ValidationError);
  CHECK(baim::item_repr_mode_from_string("baim") == baim::ItemReprMode::kBaim);
  CHECK_THROWS_AS(baim::item_repr_mode_from_string("table"), baim::ValidationError);
}

TEST_CASE("model config ties router and backbone widths in routed mode") {
  auto cfg = baim_model_config(recurrent_config(4), 3, 2);
  CHECK_NOTHROW(cfg.validate());
  cfg.router.model_dim = 5;
  CHECK_THROWS_AS(cfg.validate(), baim::ValidationError);
  // Static mode does not involve the router at all.
  auto s = static_model_config(recurrent_config(4));
  s.router.model_dim = -3;
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("forward rejects malformed batches") {
  baim::KtModel<double> model(static_model_config(recurrent_config(3)), 2);
  baim::Rng rng(43);
  model.init_params(rng, nullptr);
  baim::ForwardOptions opt;

  auto bad_item = make_batch({{0, 2}}, {{1, 0}});  // item 2 out of range
  baim::Tape<double> t1;
  CHECK_THROWS_AS(model.forward(t1, bad_item, opt, rng), baim::ValidationError);

  auto bad_resp = make_batch({{0, 1}}, {{1, 7}});
  baim::Tape<double> t2;
  CHECK_THROWS_AS(model.forward(t2, bad_resp, opt, rng), baim::ValidationError);

  auto inactive = make_batch({{0, 1}}, {{1, 0}});
  inactive.active.setZero();
  baim::Tape<double> t3;
  CHECK_THROWS_AS(model.forward(t3, inactive, opt, rng), baim::ValidationError);

  auto misaligned = make_batch({{0, 1}}, {{1, 0}});
  misaligned.learner_ids.pop_back();
  baim::Tape<double> t4;
  CHECK_THROWS_AS(model.forward(t4, misaligned, opt, rng), baim::ValidationError);
}

TEST_CASE("attention batches longer than the position table are rejected") {
  baim::KtModel<double> model(static_model_config(attention_config(4, 2, 3)), 2);
  baim::Rng rng(47);
  model.init_params(rng, nullptr);
  auto batch = make_batch({{0, 1, 0, 1}}, {{1, 0, 1, 0}});  // 4 > max_len 3
  baim::Tape<double> tape;
  baim::ForwardOptions opt;
  CHECK_THROWS_AS(model.forward(tape, batch, opt, rng), baim::ValidationError);
}
