// SPDX-License-Identifier: Apache-2.0
#include "baim/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace baim {

namespace {

Batch random_batch(int item_count, int seq_len, int batch_cols, Rng& rng) {
  Batch b;
  b.items.resize(seq_len, batch_cols);
  b.responses.resize(seq_len, batch_cols);
  b.active.setOnes(seq_len, batch_cols);
  b.learner_ids.resize(batch_cols);
  for (int j = 0; j < batch_cols; ++j) {
    b.learner_ids[j] = j;
    for (int t = 0; t < seq_len; ++t) {
      b.items(t, j) = static_cast<int>(rng.index(static_cast<size_t>(item_count)));
      b.responses(t, j) = rng.bernoulli(0.5) ? 1 : 0;
    }
  }
  return b;
}

// Smallest gap between the best and second-best selection logits across
// all decisions; tiny gaps mean a finite-difference probe could cross a
// routing boundary, so the caller re-seeds.
double min_margin(const ForwardOutput<double>& fwd) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& row : fwd.traces) {
    for (const RoutingTraceEntry& e : row) {
      double best = -std::numeric_limits<double>::infinity(), second = best;
      for (float v : e.noisy_logits) {
        const double d = static_cast<double>(v);
        if (d > best) {
          second = best;
          best = d;
        } else if (d > second) {
          second = d;
        }
      }
      m = std::min(m, best - second);
    }
  }
  return m;
}

}  // namespace

GradCheckReport grad_check_model(const ModelConfig& cfg, int item_count, int seq_len,
                                 int batch_cols, std::uint64_t seed, double lambda_lb,
                                 double fd_step, double margin_floor) {
  cfg.validate();
  GradCheckReport report;
  const bool baim = cfg.repr_mode() == ItemReprMode::kBaim;

  for (int attempt = 0; attempt < 20; ++attempt) {
    const std::uint64_t try_seed = seed + 1000ull * static_cast<std::uint64_t>(attempt);
    report.resample_attempts = attempt + 1;

    Rng init_rng(try_seed);
    KtModel<double> model(cfg, item_count);
    model.init_params(init_rng, nullptr);
    Batch batch = random_batch(item_count, seq_len, batch_cols, init_rng);

    const std::uint64_t stream_seed = try_seed + 1;
    RoutingPlan plan;
    {
      Rng model_rng(stream_seed);
      Tape<double> tape;
      ForwardOptions opt;
      opt.train = true;
      opt.lambda_lb = lambda_lb;
      opt.record_plan = &plan;
      ForwardOutput<double> fwd = model.forward(tape, batch, opt, model_rng);
      report.min_decision_margin = baim && cfg.routing.kind == RoutingStrategy::Kind::kAdaptive
                                       ? min_margin(fwd)
                                       : std::numeric_limits<double>::infinity();
      report.min_kink_margin = tape.kink_margin();
    }
    if (report.min_decision_margin < margin_floor) continue;
    if (report.min_kink_margin < 20.0 * fd_step) continue;

    report.dead_experts.clear();
    if (baim) {
      std::set<int> used;
      for (const auto& row : plan.selected) used.insert(row.begin(), row.end());
      for (int e = 0; e < kStageCount; ++e) {
        if (!used.count(e)) report.dead_experts.push_back(e);
      }
      // The dead-path assertion needs at least one idle expert; re-seed
      // until the routing pattern leaves one out.
      if (report.dead_experts.empty() && attempt < 19) continue;
    }

    // Loss as a deterministic function of the flat parameter vector: fixed
    // batch, fixed routing plan, re-seeded noise/dropout stream.
    const auto loss_at = [&]() -> double {
      Rng model_rng(stream_seed);
      Tape<double> tape;
      ForwardOptions opt;
      opt.train = true;
      opt.lambda_lb = lambda_lb;
      opt.replay_plan = &plan;
      ForwardOutput<double> fwd = model.forward(tape, batch, opt, model_rng);
      return tape.value(fwd.total_loss)(0, 0);
    };

    // Analytic pass under the same replay.
    {
      Rng model_rng(stream_seed);
      Tape<double> tape;
      ForwardOptions opt;
      opt.train = true;
      opt.lambda_lb = lambda_lb;
      opt.replay_plan = &plan;
      ForwardOutput<double> fwd = model.forward(tape, batch, opt, model_rng);
      model.store().zero_grad();
      tape.backward(fwd.total_loss);
    }
    const VecD analytic = model.store().flatten_grads();
    VecD theta = model.store().flatten_values();
    report.param_count = theta.size();

    std::set<std::string> dead_names;
    for (int e : report.dead_experts) {
      const std::string base = "router.expert" + std::to_string(e);
      dead_names.insert({base + ".w1", base + ".b1", base + ".w2", base + ".b2"});
    }

    report.max_rel_err = 0.0;
    report.max_dead_numeric = 0.0;
    report.zero_grad_exact = true;
    for (std::int64_t i = 0; i < theta.size(); ++i) {
      const double saved = theta(i);
      theta(i) = saved + fd_step;
      model.store().unflatten_values(theta);
      const double f_plus = loss_at();
      theta(i) = saved - fd_step;
      model.store().unflatten_values(theta);
      const double f_minus = loss_at();
      theta(i) = saved;
      model.store().unflatten_values(theta);

      const double numeric = (f_plus - f_minus) / (2.0 * fd_step);
      const double ga = analytic(i);
      const double rel =
          std::abs(ga - numeric) / std::max({1.0, std::abs(ga), std::abs(numeric)});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = model.store().name_of_flat_index(i);
      }
      if (dead_names.count(model.store().name_of_flat_index(i))) {
        if (ga != 0.0) report.zero_grad_exact = false;
        report.max_dead_numeric = std::max(report.max_dead_numeric, std::abs(numeric));
      }
    }
    return report;
  }
  throw NumericError(
      "gradient check could not find a seed with a safe routing margin and an idle expert");
}

double grad_check_quadratic(double fd_step) {
  ParamStore<double> store;
  Parameter<double>& w = store.add("w", 3, 2);
  Rng rng(7);
  init_uniform(w, 2, rng);

  Tape<double> tape;
  auto loss = tape.sum_all(tape.square(tape.param(w)));
  store.zero_grad();
  tape.backward(loss);
  const VecD analytic = store.flatten_grads();

  VecD theta = store.flatten_values();
  double max_rel = 0.0;
  for (std::int64_t i = 0; i < theta.size(); ++i) {
    const double saved = theta(i);
    const auto eval = [&](double v) {
      theta(i) = v;
      store.unflatten_values(theta);
      Tape<double> t2;
      return t2.value(t2.sum_all(t2.square(t2.param(w))))(0, 0);
    };
    const double numeric = (eval(saved + fd_step) - eval(saved - fd_step)) / (2.0 * fd_step);
    theta(i) = saved;
    store.unflatten_values(theta);
    const double rel = std::abs(analytic(i) - numeric) /
                       std::max({1.0, std::abs(analytic(i)), std::abs(numeric)});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace baim
