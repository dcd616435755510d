// SPDX-License-Identifier: Apache-2.0
//
// Tests for stage routing: solution encoding, the learner-context GRU,
// noisy Top-1 gating, stage-expert transformation with exact dead-expert
// gradients, per-item composition, and load-balance statistics.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include "baim/router.hpp"

namespace {

using ParamsD = baim::RouterParams<double>;

baim::RouterConfig small_config() {
  baim::RouterConfig cfg;
  cfg.stage_dim = 3;
  cfg.model_dim = 4;
  cfg.context_dim = 2;
  cfg.dropout_rate = 0.0;
  cfg.noise_std = 0.25;
  return cfg;
}

std::array<baim::VecD, baim::kStageCount> zero_stages(int dim) {
  std::array<baim::VecD, baim::kStageCount> s;
  for (auto& v : s) v = baim::VecD::Zero(dim);
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Solution encoding
// ---------------------------------------------------------------------------

TEST_CASE("zero stage vectors and zero weights encode to zero") {
  auto cfg = small_config();
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);  // all parameters start at zero
  baim::Rng rng(1);
  baim::VecD s = baim::encode_solution(zero_stages(cfg.stage_dim), p, cfg,
                                       /*train=*/false, rng);
  REQUIRE(s.size() == cfg.model_dim);
  CHECK(s.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encoding picks out a single stage coordinate when wired to") {
  auto cfg = small_config();
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);
  // Row 0 of the projection reads coordinate 0 of stage 0 (column 0 of the
  // concatenated stack) with weight 1.
  p.proj_w->value(0, 0) = 1.0;
  auto stages = zero_stages(cfg.stage_dim);
  stages[0](0) = 3.0;
  baim::Rng rng(1);
  baim::VecD s = baim::encode_solution(stages, p, cfg, false, rng);
  CHECK(s(0) == doctest::Approx(3.0).epsilon(1e-12));
  for (int i = 1; i < cfg.model_dim; ++i) CHECK(s(i) == 0.0);
}

TEST_CASE("eval-mode encoding is deterministic") {
  auto cfg = small_config();
  cfg.dropout_rate = 0.3;  // must be ignored outside train mode
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);
  baim::Rng init(42);
  p.init(cfg, init);
  auto stages = zero_stages(cfg.stage_dim);
  for (auto& v : stages)
    for (int i = 0; i < v.size(); ++i) v(i) = init.normal(0.0, 1.0);
  baim::Rng rng_a(7), rng_b(8);  // different streams must not matter at eval
  baim::VecD a = baim::encode_solution(stages, p, cfg, false, rng_a);
  baim::VecD b = baim::encode_solution(stages, p, cfg, false, rng_b);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("train-mode encoding applies inverted dropout") {
  auto cfg = small_config();
  cfg.model_dim = 64;  // wide enough that dropout almost surely hits
  cfg.dropout_rate = 0.5;
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);
  // Positive bias so every pre-dropout entry is strictly positive.
  p.proj_b->value.setConstant(1.0);
  auto stages = zero_stages(cfg.stage_dim);
  baim::Rng eval_rng(1);
  baim::VecD clean = baim::encode_solution(stages, p, cfg, false, eval_rng);
  baim::Rng train_rng(2);
  baim::VecD noisy = baim::encode_solution(stages, p, cfg, true, train_rng);
  int dropped = 0;
  for (int i = 0; i < cfg.model_dim; ++i) {
    if (noisy(i) == 0.0) {
      ++dropped;
    } else {
      CHECK(noisy(i) == doctest::Approx(clean(i) * 2.0).epsilon(1e-12));
    }
  }
  CHECK(dropped > 0);
  CHECK(dropped < cfg.model_dim);
}

TEST_CASE("encoding rejects stage vectors of the wrong width") {
  auto cfg = small_config();
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);
  auto stages = zero_stages(cfg.stage_dim);
  stages[2] = baim::VecD::Zero(cfg.stage_dim + 1);
  baim::Rng rng(1);
  CHECK_THROWS_AS(baim::encode_solution(stages, p, cfg, false, rng),
                  baim::ValidationError);
}

// ---------------------------------------------------------------------------
// Learner-context GRU
// ---------------------------------------------------------------------------

TEST_CASE("zero GRU parameters halve the previous context") {
  // With all weights and biases zero: update gate z = sigmoid(0) = 0.5 and
  // candidate tanh(0) = 0, so the new state is 0.5 * m_prev exactly.
  auto cfg = small_config();
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);
  baim::VecD m_prev(cfg.context_dim);
  m_prev << 0.8, -0.4;
  baim::VecD s_prev = baim::VecD::Zero(cfg.model_dim);
  baim::VecD m = baim::update_context(m_prev, s_prev, 1, p, cfg);
  CHECK(m(0) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(m(1) == doctest::Approx(-0.2).epsilon(1e-12));
}

TEST_CASE("zero context is a fixed point of the zero-parameter GRU") {
  auto cfg = small_config();
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);
  baim::VecD m = baim::update_context(baim::VecD::Zero(cfg.context_dim).eval(),
                                      baim::VecD::Zero(cfg.model_dim).eval(),
                                      baim::kResponseStartRow, p, cfg);
  CHECK(m.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("context stays inside the unit box") {
  // m' = z .* m + (1-z) .* tanh(...) is a convex combination of m_prev and
  // a value in (-1, 1), so it cannot leave (-1, 1) when m_prev is inside.
  auto cfg = small_config();
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);
  baim::Rng rng(11);
  p.init(cfg, rng);
  p.gru_w_ih->value *= 10.0;  // exaggerate to stress the bound
  p.gru_w_hh->value *= 10.0;
  for (int trial = 0; trial < 20; ++trial) {
    baim::VecD m_prev(cfg.context_dim);
    for (int i = 0; i < m_prev.size(); ++i) m_prev(i) = rng.uniform(-1.0, 1.0);
    baim::VecD s_prev(cfg.model_dim);
    for (int i = 0; i < s_prev.size(); ++i) s_prev(i) = rng.normal(0.0, 3.0);
    baim::VecD m = baim::update_context(m_prev, s_prev, trial % 2, p, cfg);
    CHECK(m.cwiseAbs().maxCoeff() < 1.0);
  }
}

TEST_CASE("the response embedding changes the context update") {
  auto cfg = small_config();
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);
  baim::Rng rng(13);
  p.init(cfg, rng);
  baim::VecD m_prev = baim::VecD::Zero(cfg.context_dim);
  baim::VecD s_prev = baim::VecD::Ones(cfg.model_dim);
  baim::VecD wrong = baim::update_context(m_prev, s_prev, 0, p, cfg);
  baim::VecD right = baim::update_context(m_prev, s_prev, 1, p, cfg);
  baim::VecD start =
      baim::update_context(m_prev, s_prev, baim::kResponseStartRow, p, cfg);
  CHECK((wrong - right).cwiseAbs().maxCoeff() > 1e-8);
  CHECK((wrong - start).cwiseAbs().maxCoeff() > 1e-8);
  CHECK((right - start).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("context update rejects bad widths and bad response rows") {
  auto cfg = small_config();
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);
  baim::VecD m_prev = baim::VecD::Zero(cfg.context_dim);
  baim::VecD s_bad = baim::VecD::Zero(cfg.model_dim + 2);
  CHECK_THROWS_AS(baim::update_context(m_prev, s_bad, 1, p, cfg),
                  baim::ValidationError);
  CHECK_THROWS_AS(baim::response_row(3), baim::ValidationError);
  CHECK_THROWS_AS(baim::response_row(-1), baim::ValidationError);
  CHECK(baim::response_row(baim::kResponseStartRow) == 2);
}

// ---------------------------------------------------------------------------
// Gating
// ---------------------------------------------------------------------------

TEST_CASE("eval gate selects the largest bias logit") {
  auto cfg = small_config();
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);
  p.gate_b->value << 0.1, 0.2, 0.3, 0.4;
  baim::Rng rng(1);
  auto entry = baim::gate(baim::VecD::Zero(cfg.model_dim).eval(),
                          baim::VecD::Zero(cfg.context_dim).eval(), p, cfg,
                          /*train=*/false, rng);
  CHECK(entry.selected == 3);
  for (int i = 0; i < baim::kStageCount; ++i) {
    CHECK(entry.clean_logits[i] == doctest::Approx(0.1 * (i + 1)));
  }
  double sum = 0.0;
  for (float q : entry.probs) sum += q;
  CHECK(std::abs(sum - 1.0) < 1e-6);
}

TEST_CASE("gate ties break toward the lowest stage index") {
  auto cfg = small_config();
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);  // all logits identically zero
  baim::Rng rng(1);
  auto entry = baim::gate(baim::VecD::Zero(cfg.model_dim).eval(),
                          baim::VecD::Zero(cfg.context_dim).eval(), p, cfg,
                          false, rng);
  CHECK(entry.selected == 0);
  for (float q : entry.probs) CHECK(q == doctest::Approx(0.25));
}

TEST_CASE("shifting all logits changes neither selection nor probabilities") {
  auto cfg = small_config();
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);
  baim::Rng rng(17);
  p.init(cfg, rng);
  baim::VecD s(cfg.model_dim), m(cfg.context_dim);
  for (int i = 0; i < s.size(); ++i) s(i) = rng.normal(0.0, 1.0);
  for (int i = 0; i < m.size(); ++i) m(i) = rng.normal(0.0, 1.0);
  baim::Rng r1(1);
  auto base = baim::gate(s, m, p, cfg, false, r1);
  p.gate_b->value.array() += 5.0;  // shift every logit by the same constant
  baim::Rng r2(1);
  auto shifted = baim::gate(s, m, p, cfg, false, r2);
  CHECK(shifted.selected == base.selected);
  for (int i = 0; i < baim::kStageCount; ++i) {
    CHECK(shifted.probs[i] == doctest::Approx(base.probs[i]).epsilon(1e-6));
    CHECK(shifted.clean_logits[i] ==
          doctest::Approx(base.clean_logits[i] + 5.0).epsilon(1e-6));
  }
}

TEST_CASE("train-mode gating is reproducible from the stream seed") {
  auto cfg = small_config();
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);
  baim::Rng init(19);
  p.init(cfg, init);
  baim::VecD s = baim::VecD::Ones(cfg.model_dim);
  baim::VecD m = baim::VecD::Ones(cfg.context_dim);
  baim::Rng ra(123), rb(123);
  auto a = baim::gate(s, m, p, cfg, true, ra);
  auto b = baim::gate(s, m, p, cfg, true, rb);
  CHECK(a.selected == b.selected);
  for (int i = 0; i < baim::kStageCount; ++i) {
    CHECK(a.noisy_logits[i] == b.noisy_logits[i]);
    CHECK(a.probs[i] == b.probs[i]);
  }
  // The selection and probabilities come from the noisy logits.
  int argmax = 0;
  for (int i = 1; i < baim::kStageCount; ++i) {
    if (a.noisy_logits[i] > a.noisy_logits[argmax]) argmax = i;
  }
  CHECK(a.selected == argmax);
}

TEST_CASE("gate noise is centered on the clean logits") {
  auto cfg = small_config();
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);
  p.gate_b->value << -0.3, 0.1, 0.4, -0.2;
  baim::VecD s = baim::VecD::Zero(cfg.model_dim);
  baim::VecD m = baim::VecD::Zero(cfg.context_dim);
  baim::Rng rng(31);
  const int draws = 10000;
  std::array<double, baim::kStageCount> mean{};
  for (int n = 0; n < draws; ++n) {
    auto e = baim::gate(s, m, p, cfg, true, rng);
    for (int i = 0; i < baim::kStageCount; ++i) mean[i] += e.noisy_logits[i];
  }
  const double tol = 3.0 * cfg.noise_std / std::sqrt(double(draws));
  for (int i = 0; i < baim::kStageCount; ++i) {
    mean[i] /= draws;
    CHECK(std::abs(mean[i] - p.gate_b->value(i, 0)) < tol);
  }
}

// ---------------------------------------------------------------------------
// Expert transformation
// ---------------------------------------------------------------------------

TEST_CASE("expert output is layer normalized, hand case") {
  // Width-2 model: wire the expert so its pre-norm output is (1, 3); with
  // unit scale and zero shift, normalization gives (-1, 1) up to epsilon.
  auto cfg = small_config();
  cfg.model_dim = 2;
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);
  p.ln_gamma->value.setOnes();
  p.expert_b2[1]->value << 1.0, 3.0;  // zero input -> pre-norm (1, 3)
  baim::Rng rng(1);
  baim::VecD out = baim::expert_transform(
      baim::VecD::Zero(cfg.stage_dim).eval(), 1, p, cfg, false, rng);
  CHECK(out(0) == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(out(1) == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("expert outputs are standardized per vector") {
  auto cfg = small_config();
  cfg.model_dim = 16;
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);
  baim::Rng rng(23);
  p.init(cfg, rng);
  p.ln_gamma->value.setOnes();
  p.ln_beta->value.setZero();
  baim::VecD x(cfg.stage_dim);
  for (int i = 0; i < x.size(); ++i) x(i) = rng.normal(0.0, 2.0);
  baim::VecD out = baim::expert_transform(x, 2, p, cfg, false, rng);
  const double mean = out.mean();
  const double var = (out.array() - mean).square().sum() / out.size();
  CHECK(std::abs(mean) < 1e-9);
  CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("experts with copied parameters are interchangeable") {
  auto cfg = small_config();
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);
  baim::Rng rng(29);
  p.init(cfg, rng);
  // Copy expert 0 into expert 3.
  p.expert_w1[3]->value = p.expert_w1[0]->value;
  p.expert_b1[3]->value = p.expert_b1[0]->value;
  p.expert_w2[3]->value = p.expert_w2[0]->value;
  p.expert_b2[3]->value = p.expert_b2[0]->value;
  baim::VecD x(cfg.stage_dim);
  for (int i = 0; i < x.size(); ++i) x(i) = rng.normal(0.0, 1.0);
  baim::VecD a = baim::expert_transform(x, 0, p, cfg, false, rng);
  baim::VecD b = baim::expert_transform(x, 3, p, cfg, false, rng);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  // Independent experts differ on the same input.
  baim::VecD c = baim::expert_transform(x, 1, p, cfg, false, rng);
  CHECK((a - c).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("expert index is range checked") {
  auto cfg = small_config();
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);
  baim::Rng rng(1);
  baim::VecD x = baim::VecD::Zero(cfg.stage_dim);
  CHECK_THROWS_AS(baim::expert_transform(x, 4, p, cfg, false, rng),
                  baim::ValidationError);
  CHECK_THROWS_AS(baim::expert_transform(x, -1, p, cfg, false, rng),
                  baim::ValidationError);
}

TEST_CASE("only the selected expert and stage row receive gradient") {
  // Batched graph with every column routed to expert 1: all other experts'
  // parameters and all non-selected table rows must end with exactly zero
  // gradient -- the masking is structural, not approximate.
  auto cfg = small_config();
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);
  auto& table = store.add("item_table", baim::kStageCount, cfg.stage_dim);
  baim::Rng rng(37);
  p.init(cfg, rng);
  for (int r = 0; r < table.value.rows(); ++r)
    for (int c = 0; c < table.value.cols(); ++c)
      table.value(r, c) = rng.normal(0.0, 1.0);

  store.zero_grad();
  baim::Tape<double> tape;
  const std::vector<int> selected = {1, 1, 1};
  // Three batch columns, all reading table row 1 (stage 1 of item 0).
  auto expert_in = tape.take_rows_t(table, {1, 1, 1});
  baim::Rng drop(5);
  auto out = baim::expert_transform_graph(tape, expert_in, selected, p, cfg,
                                          false, drop);
  tape.backward(tape.sum_all(out));

  for (int e = 0; e < baim::kStageCount; ++e) {
    const double w1 = p.expert_w1[e]->grad.cwiseAbs().maxCoeff();
    const double b1 = p.expert_b1[e]->grad.cwiseAbs().maxCoeff();
    const double w2 = p.expert_w2[e]->grad.cwiseAbs().maxCoeff();
    const double b2 = p.expert_b2[e]->grad.cwiseAbs().maxCoeff();
    if (e == 1) {
      CHECK(w2 > 0.0);
      CHECK(b2 > 0.0);
    } else {
      CHECK(w1 == 0.0);
      CHECK(b1 == 0.0);
      CHECK(w2 == 0.0);
      CHECK(b2 == 0.0);
    }
  }
  // Only the row that was gathered carries gradient.
  CHECK(table.grad.row(1).cwiseAbs().maxCoeff() > 0.0);
  CHECK(table.grad.row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(table.grad.row(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(table.grad.row(3).cwiseAbs().maxCoeff() == 0.0);
}

// ---------------------------------------------------------------------------
// Per-item composition
// ---------------------------------------------------------------------------

namespace {

struct RouteFixture {
  baim::RouterConfig cfg = small_config();
  baim::ParamStore<double> store;
  ParamsD p;
  baim::Parameter<double>* table = nullptr;
  static constexpr int kItems = 3;

  RouteFixture() : p(ParamsD::create(store, cfg)) {
    table = &store.add("item_table", kItems * baim::kStageCount,
                       cfg.stage_dim);
    baim::Rng rng(41);
    p.init(cfg, rng);
    for (int r = 0; r < table->value.rows(); ++r)
      for (int c = 0; c < table->value.cols(); ++c)
        table->value(r, c) = rng.normal(0.0, 1.0);
  }
};

}  // namespace

TEST_CASE("eval routing is a deterministic function of its inputs") {
  RouteFixture f;
  baim::VecD m = baim::VecD::Ones(f.cfg.context_dim) * 0.3;
  baim::Rng r1(1), r2(99);
  auto [repr_a, trace_a] = baim::route_item(2, *f.table, f.kItems, m, f.p,
                                            f.cfg, false, r1);
  auto [repr_b, trace_b] = baim::route_item(2, *f.table, f.kItems, m, f.p,
                                            f.cfg, false, r2);
  CHECK((repr_a - repr_b).cwiseAbs().maxCoeff() == 0.0);
  CHECK(trace_a.selected == trace_b.selected);
  for (int i = 0; i < baim::kStageCount; ++i) {
    CHECK(trace_a.probs[i] == trace_b.probs[i]);
  }
}

TEST_CASE("the learner context can flip the routing decision") {
  RouteFixture f;
  // Gate reads only the first context coordinate: row 0 with +1, row 1
  // with -1. Flipping m's sign must flip the selection between 0 and 1.
  f.p.gate_w->value.setZero();
  f.p.gate_b->value.setZero();
  f.p.gate_w->value(0, f.cfg.model_dim) = 1.0;
  f.p.gate_w->value(1, f.cfg.model_dim) = -1.0;
  baim::VecD m_pos(f.cfg.context_dim), m_neg(f.cfg.context_dim);
  m_pos << 1.0, 0.0;
  m_neg << -1.0, 0.0;
  baim::Rng rng(1);
  auto [repr_p, trace_p] = baim::route_item(0, *f.table, f.kItems, m_pos, f.p,
                                            f.cfg, false, rng);
  auto [repr_n, trace_n] = baim::route_item(0, *f.table, f.kItems, m_neg, f.p,
                                            f.cfg, false, rng);
  CHECK(trace_p.selected == 0);
  CHECK(trace_n.selected == 1);
  CHECK((repr_p - repr_n).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("zeroing the context columns makes routing context-free") {
  RouteFixture f;
  // Erase every gate weight that reads m.
  for (int r = 0; r < baim::kStageCount; ++r) {
    for (int c = f.cfg.model_dim; c < f.cfg.model_dim + f.cfg.context_dim;
         ++c) {
      f.p.gate_w->value(r, c) = 0.0;
    }
  }
  baim::Rng rng(1);
  baim::VecD m1 = baim::VecD::Ones(f.cfg.context_dim) * 2.0;
  baim::VecD m2 = baim::VecD::Ones(f.cfg.context_dim) * -2.0;
  auto [repr_a, trace_a] = baim::route_item(1, *f.table, f.kItems, m1, f.p,
                                            f.cfg, false, rng);
  auto [repr_b, trace_b] = baim::route_item(1, *f.table, f.kItems, m2, f.p,
                                            f.cfg, false, rng);
  CHECK(trace_a.selected == trace_b.selected);
  for (int i = 0; i < baim::kStageCount; ++i) {
    CHECK(trace_a.clean_logits[i] == trace_b.clean_logits[i]);
  }
}

TEST_CASE("unknown items are rejected") {
  RouteFixture f;
  baim::Rng rng(1);
  baim::VecD m = baim::VecD::Zero(f.cfg.context_dim);
  CHECK_THROWS_AS(
      baim::route_item(3, *f.table, f.kItems, m, f.p, f.cfg, false, rng),
      baim::ValidationError);
  CHECK_THROWS_AS(
      baim::route_item(-1, *f.table, f.kItems, m, f.p, f.cfg, false, rng),
      baim::ValidationError);
}

TEST_CASE("gate-probability scaling multiplies the representation") {
  RouteFixture f;
  baim::VecD m = baim::VecD::Ones(f.cfg.context_dim) * 0.5;
  baim::Rng r1(1), r2(1);
  auto [raw, trace_raw] = baim::route_item(1, *f.table, f.kItems, m, f.p,
                                           f.cfg, false, r1);
  auto scaled_cfg = f.cfg;
  scaled_cfg.scale_by_gate_prob = true;
  auto [scaled, trace_scaled] = baim::route_item(1, *f.table, f.kItems, m,
                                                 f.p, scaled_cfg, false, r2);
  REQUIRE(trace_raw.selected == trace_scaled.selected);
  const double p_sel = trace_raw.probs[trace_raw.selected];
  for (int i = 0; i < raw.size(); ++i) {
    CHECK(scaled(i) == doctest::Approx(raw(i) * p_sel).epsilon(1e-5));
  }
}

// ---------------------------------------------------------------------------
// Load-balance statistics
// ---------------------------------------------------------------------------

namespace {

baim::RoutingTraceEntry entry_with_probs(std::array<float, 4> probs) {
  baim::RoutingTraceEntry e;
  e.probs = probs;
  int best = 0;
  for (int i = 1; i < 4; ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  e.selected = best;
  return e;
}

}  // namespace

TEST_CASE("uniform routing probabilities have zero balance penalty") {
  std::vector<baim::RoutingTraceEntry> entries(
      5, entry_with_probs({0.25f, 0.25f, 0.25f, 0.25f}));
  auto [pbar, loss] = baim::load_balance_stats(entries);
  for (double q : pbar) CHECK(q == doctest::Approx(0.25));
  CHECK(loss == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("fully collapsed routing hits the maximum penalty") {
  std::vector<baim::RoutingTraceEntry> entries(
      3, entry_with_probs({1.0f, 0.0f, 0.0f, 0.0f}));
  auto [pbar, loss] = baim::load_balance_stats(entries);
  CHECK(pbar[0] == doctest::Approx(1.0));
  // (3/4)^2 + 3 * (1/4)^2 = 0.75.
  CHECK(loss == doctest::Approx(0.75).epsilon(1e-6));
}

TEST_CASE("two-way collapse scores a quarter") {
  std::vector<baim::RoutingTraceEntry> entries = {
      entry_with_probs({1.0f, 0.0f, 0.0f, 0.0f}),
      entry_with_probs({0.0f, 1.0f, 0.0f, 0.0f}),
  };
  auto [pbar, loss] = baim::load_balance_stats(entries);
  CHECK(pbar[0] == doctest::Approx(0.5));
  CHECK(pbar[1] == doctest::Approx(0.5));
  // 2 * (1/4)^2 + 2 * (1/4)^2 = 0.25.
  CHECK(loss == doctest::Approx(0.25).epsilon(1e-6));
}

TEST_CASE("validity mask excludes padded entries") {
  std::vector<baim::RoutingTraceEntry> entries = {
      entry_with_probs({1.0f, 0.0f, 0.0f, 0.0f}),
      entry_with_probs({0.0f, 0.0f, 0.0f, 1.0f}),  // masked out below
  };
  std::vector<std::uint8_t> valid = {1, 0};
  auto [pbar, loss] = baim::load_balance_stats(entries, &valid);
  CHECK(pbar[0] == doctest::Approx(1.0));
  CHECK(loss == doctest::Approx(0.75).epsilon(1e-6));
  std::vector<std::uint8_t> none = {0, 0};
  CHECK_THROWS_AS(baim::load_balance_stats(entries, &none),
                  baim::ValidationError);
  std::vector<baim::RoutingTraceEntry> empty;
  CHECK_THROWS_AS(baim::load_balance_stats(empty), baim::ValidationError);
}

TEST_CASE("balance penalty stays within its analytic range") {
  baim::Rng rng(47);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<baim::RoutingTraceEntry> entries;
    const int n = 1 + static_cast<int>(rng.index(6));
    for (int i = 0; i < n; ++i) {
      std::array<float, 4> probs;
      double total = 0.0;
      for (int j = 0; j < 4; ++j) {
        probs[j] = static_cast<float>(rng.uniform(0.001, 1.0));
        total += probs[j];
      }
      for (int j = 0; j < 4; ++j) probs[j] = float(probs[j] / total);
      entries.push_back(entry_with_probs(probs));
    }
    auto [pbar, loss] = baim::load_balance_stats(entries);
    CHECK(loss >= 0.0);
    CHECK(loss <= 0.75 + 1e-9);
  }
}

// ---------------------------------------------------------------------------
// Parameter registration
// ---------------------------------------------------------------------------

TEST_CASE("router parameter creation, binding and initialization") {
  auto cfg = small_config();
  baim::ParamStore<double> store;
  auto p = ParamsD::create(store, cfg);
  CHECK(store.size() == 12 + 4 * baim::kStageCount);
  CHECK(p.gate_w->value.rows() == baim::kStageCount);
  CHECK(p.gate_w->value.cols() == cfg.model_dim + cfg.context_dim);
  CHECK(p.response_table->value.rows() == 3);

  baim::Rng rng(53);
  p.init(cfg, rng);
  // Uniform init stays inside +-1/sqrt(fan_in); layer norm starts at
  // identity.
  const double bound = 1.0 / std::sqrt(double(baim::kStageCount) * cfg.stage_dim);
  CHECK(p.proj_w->value.cwiseAbs().maxCoeff() <= bound);
  CHECK(p.proj_w->value.cwiseAbs().maxCoeff() > 0.0);
  CHECK(p.ln_gamma->value.minCoeff() == 1.0);
  CHECK(p.ln_gamma->value.maxCoeff() == 1.0);
  CHECK(p.ln_beta->value.cwiseAbs().maxCoeff() == 0.0);

  // Binding against the same store succeeds; a mismatched config fails.
  CHECK_NOTHROW(ParamsD::bind(store, cfg));
  auto wrong = cfg;
  wrong.model_dim = cfg.model_dim + 1;
  CHECK_THROWS_AS(ParamsD::bind(store, wrong), baim::ValidationError);
}

TEST_CASE("router config validation") {
  auto cfg = small_config();
  CHECK_NOTHROW(cfg.validate());
  auto bad = cfg;
  bad.dropout_rate = 1.0;
  CHECK_THROWS_AS(bad.validate(), baim::ValidationError);
  bad = cfg;
  bad.noise_std = -0.1;
  CHECK_THROWS_AS(bad.validate(), baim::ValidationError);
  bad = cfg;
  bad.model_dim = 0;
  CHECK_THROWS_AS(bad.validate(), baim::ValidationError);
}
