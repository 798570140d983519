// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "test_support.hpp"
#include "vimco/oracle.hpp"
#include "vimco/train.hpp"

using namespace vimco;

TEST_CASE("adam leaves parameters alone under zero gradients", "[train]") {
  Vec p(3);
  p << 1.0, -2.0, 0.5;
  Vec g = Vec::Zero(3);
  std::vector<TensorRef> prefs = {{p.data(), 3}};
  std::vector<TensorRef> grefs = {{g.data(), 3}};
  AdamState st = AdamState::like(prefs);
  const Vec before = p;
  adam_step(prefs, grefs, st, 0.1);
  CHECK(p == before);
}

TEST_CASE("first adam step moves by roughly the learning rate", "[train]") {
  Vec p = Vec::Zero(4);
  Vec g(4);
  g << 2.0, -0.5, 1e-3, -30.0;
  std::vector<TensorRef> prefs = {{p.data(), 4}};
  std::vector<TensorRef> grefs = {{g.data(), 4}};
  AdamState st = AdamState::like(prefs);
  const double lr = 0.01;
  adam_step(prefs, grefs, st, lr);
  for (int i = 0; i < 4; ++i) {
    const double expected = lr * g[i] / (std::abs(g[i]) + st.eps);
    CHECK(p[i] == Catch::Approx(expected).epsilon(1e-9));
  }
  CHECK(st.t == 1);
}

TEST_CASE("adam validates tensor shapes", "[train]") {
  Vec p = Vec::Zero(3), g = Vec::Zero(2);
  std::vector<TensorRef> prefs = {{p.data(), 3}};
  std::vector<TensorRef> grefs = {{g.data(), 2}};
  AdamState st = AdamState::like(prefs);
  CHECK_THROWS_AS(adam_step(prefs, grefs, st, 0.1), std::invalid_argument);
}

TEST_CASE("config validation", "[train]") {
  TrainConfig cfg;
  cfg.estimator = EstimatorKind::Vimco;
  cfg.k = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.k = 2;
  CHECK_NOTHROW(cfg.validate());
  cfg.minibatch = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.minibatch = 4;
  cfg.estimator = EstimatorKind::RwsSleep;
  cfg.mode = TrainMode::SopPrior;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.mode = TrainMode::Generative;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("training centering comes from the training split only", "[train]") {
  Dataset data = synthetic_dataset({40, 20, 10}, 9, {.rows = 4, .cols = 4});
  TrainConfig cfg;
  cfg.k = 2;
  cfg.latent_sizes = {3};
  cfg.epochs = 1;
  cfg.minibatch = 8;
  Trainer trainer(cfg, data);
  CHECK(trainer.centering().obs_mean == centering_stats(data.train()));
  CHECK((trainer.centering().obs_mean - centering_stats(data.valid())).cwiseAbs().maxCoeff() >
        1e-6);
}

TEST_CASE("smoothed training bound climbs on a small dataset", "[train]") {
  Dataset data = synthetic_dataset({16, 8, 0}, 13, {.rows = 8, .cols = 8, .flip_prob = 0.05});
  TrainConfig cfg;
  cfg.estimator = EstimatorKind::Vimco;
  cfg.k = 5;
  cfg.lr = 3e-3;
  cfg.latent_sizes = {8};
  cfg.minibatch = 8;
  cfg.epochs = 100;  // 2 steps per epoch -> 200 steps
  cfg.log_every = 1;
  cfg.seed = 4;
  cfg.init_obs_bias = false;
  MetricsLog log;
  Trainer trainer(cfg, data);
  trainer.run(log);

  std::vector<double> per_step;
  for (const auto& r : log.rows)
    if (r.metric == "bound_step") per_step.push_back(r.value);
  REQUIRE(per_step.size() == 200);
  std::vector<double> smooth(per_step.size());
  double ema = per_step[0];
  for (std::size_t i = 0; i < per_step.size(); ++i) {
    ema = 0.95 * ema + 0.05 * per_step[i];
    smooth[i] = ema;
  }
  for (std::size_t i = 30; i < smooth.size(); i += 10)
    CHECK(smooth[i] >= smooth[i - 10] - 0.05 * std::abs(smooth[i - 10]));
  CHECK(smooth.back() > smooth[20] + 3.0);
}

TEST_CASE("single-sample training with learned baselines runs", "[train]") {
  Dataset data = synthetic_dataset({32, 8, 0}, 15, {.rows = 6, .cols = 6});
  TrainConfig cfg;
  cfg.estimator = EstimatorKind::Nvil;
  cfg.k = 1;
  cfg.lr = 3e-3;
  cfg.latent_sizes = {6};
  cfg.minibatch = 8;
  cfg.epochs = 30;
  cfg.seed = 6;
  cfg.init_obs_bias = false;
  MetricsLog log;
  Trainer trainer(cfg, data);
  trainer.run(log);
  double first = 0, last = 0;
  bool got_first = false;
  for (const auto& r : log.rows)
    if (r.split == "train" && r.metric == "bound") {
      if (!got_first) {
        first = r.value;
        got_first = true;
      }
      last = r.value;
    }
  CHECK(last > first + 1.0);
  CHECK(trainer.monitor().value() > 0.0);
}

TEST_CASE("prior-as-proposal training improves the conditional bound", "[train]") {
  Dataset data = synthetic_dataset({48, 12, 0}, 23, {.rows = 6, .cols = 6});
  TrainConfig cfg;
  cfg.mode = TrainMode::SopPrior;
  cfg.estimator = EstimatorKind::Vimco;
  cfg.k = 4;
  cfg.lr = 3e-3;
  cfg.latent_sizes = {5};
  cfg.minibatch = 12;
  cfg.epochs = 40;
  cfg.seed = 8;
  cfg.init_obs_bias = false;
  MetricsLog log;
  Trainer trainer(cfg, data);
  trainer.run(log);
  double first = 0, last = 0;
  bool got_first = false;
  for (const auto& r : log.rows)
    if (r.split == "train" && r.metric == "bound") {
      if (!got_first) {
        first = r.value;
        got_first = true;
      }
      last = r.value;
    }
  CHECK(last > first + 0.5);
}

TEST_CASE("full-run determinism of the metrics log", "[train]") {
  Dataset data = synthetic_dataset({36, 12, 6}, 77, {.rows = 5, .cols = 4});
  for (EstimatorKind kind : {EstimatorKind::Vimco, EstimatorKind::Nvil, EstimatorKind::RwsWake}) {
    TrainConfig cfg;
    cfg.estimator = kind;
    cfg.k = kind == EstimatorKind::Vimco ? 3 : 2;
    cfg.latent_sizes = {4};
    cfg.minibatch = 6;
    cfg.epochs = 3;
    cfg.seed = 31;
    cfg.log_every = 1;
    MetricsLog a, b;
    Trainer ta(cfg, data);
    ta.run(a);
    Trainer tb(cfg, data);
    tb.run(b);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
      CHECK(a.rows[i].step == b.rows[i].step);
      CHECK(a.rows[i].metric == b.rows[i].metric);
      CHECK(a.rows[i].value == b.rows[i].value);  // bitwise
    }
  }
}

TEST_CASE("wake-plus-sleep training is deterministic and learns", "[train]") {
  Dataset data = synthetic_dataset({32, 8, 0}, 41, {.rows = 5, .cols = 5});
  TrainConfig cfg;
  cfg.estimator = EstimatorKind::RwsWake;
  cfg.rws_sleep = true;
  cfg.k = 4;
  cfg.lr = 3e-3;
  cfg.latent_sizes = {5};
  cfg.minibatch = 8;
  cfg.epochs = 25;
  cfg.seed = 5;
  cfg.init_obs_bias = false;
  MetricsLog a, b;
  Trainer(cfg, data).run(a);
  Trainer(cfg, data).run(b);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) CHECK(a.rows[i].value == b.rows[i].value);
  double first = 0, last = 0;
  bool got_first = false;
  for (const auto& r : a.rows)
    if (r.split == "train" && r.metric == "bound") {
      if (!got_first) {
        first = r.value;
        got_first = true;
      }
      last = r.value;
    }
  CHECK(last > first);
}

TEST_CASE("eval_bound with a posterior proposal recovers the exact marginal", "[train]") {
  Rng rng(91);
  SbnModel m = make_model({1, 1}, 5);
  for (auto& L : m.prior) {
    vtest::randomize(L.W, rng, 1.3);
    vtest::randomize(L.b, rng, 1.0);
  }
  vtest::randomize(m.obs.W, rng, 1.3);
  vtest::randomize(m.obs.b, rng, 1.0);
  SbnProposal post = reverse_chain_posterior_proposal(m);
  ProposalEval q(post);

  std::vector<BitVec> xs;
  Rng xr(17);
  for (int i = 0; i < 12; ++i) {
    BitVec x(5);
    for (auto& bit : x) bit = xr.bernoulli(0.5) ? 1 : 0;
    xs.push_back(x);
  }
  double exact_mean = 0.0;
  for (const auto& x : xs) exact_mean += exact_log_likelihood(m, x);
  exact_mean /= static_cast<double>(xs.size());

  for (int K : {1, 3}) {
    const double eb =
        eval_bound(m, &q, ScoringMode::LearnedProposal, xs, {}, K, 2, Rng(5));
    CHECK(eb == Catch::Approx(exact_mean).margin(1e-9));
  }
  // and the NLL estimator is exact for any S in the zero-variance case
  const double nll = eval_nll(m, &q, ScoringMode::LearnedProposal, xs, {}, 4, Rng(6));
  CHECK(nll == Catch::Approx(-exact_mean).margin(1e-9));
}

TEST_CASE("eval_bound is deterministic and K = 1 matches a manual average", "[train]") {
  vtest::Toy t = vtest::random_toy(95, {.max_obs = 5});
  ProposalEval q(t.proposal);
  std::vector<BitVec> xs = {t.x, t.x};
  const double a = eval_bound(t.model, &q, ScoringMode::LearnedProposal, xs, {}, 1, 3, Rng(9));
  const double b = eval_bound(t.model, &q, ScoringMode::LearnedProposal, xs, {}, 1, 3, Rng(9));
  CHECK(a == b);

  double manual = 0.0;
  Rng root(9);
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (int s = 0; s < 3; ++s) {
      Rng sub = root.split(i, static_cast<std::uint64_t>(s));
      manual += bound(score_samples(t.model, q, xs[i], 1, sub));
    }
  manual /= 6.0;
  CHECK(a == Catch::Approx(manual).epsilon(1e-14));
}

TEST_CASE("more samples tighten the evaluated bound", "[train]") {
  vtest::Toy t = vtest::random_toy(97, {.max_layers = 2, .max_units = 2, .max_obs = 6});
  ProposalEval q(t.proposal);
  std::vector<BitVec> xs;
  Rng xr(3);
  for (int i = 0; i < 24; ++i) {
    BitVec x(t.x.size());
    for (auto& bit : x) bit = xr.bernoulli(0.5) ? 1 : 0;
    xs.push_back(x);
  }
  const double b1 = eval_bound(t.model, &q, ScoringMode::LearnedProposal, xs, {}, 1, 48, Rng(7));
  const double b4 = eval_bound(t.model, &q, ScoringMode::LearnedProposal, xs, {}, 4, 48, Rng(7));
  CHECK(b4 >= b1);
}

TEST_CASE("nll estimates do not increase with more samples", "[train]") {
  Rng rng(98);
  SbnModel m = make_model({2, 2}, 6);
  for (auto& L : m.prior) {
    vtest::randomize(L.W, rng, 1.5);
    vtest::randomize(L.b, rng, 1.0);
  }
  vtest::randomize(m.obs.W, rng, 1.5);
  vtest::randomize(m.obs.b, rng, 1.0);
  SbnProposal prop = make_proposal_from_observation({2, 2}, 6);  // uniform proposal
  ProposalEval q(prop);
  std::vector<BitVec> xs;
  Rng mr(4);
  for (int i = 0; i < 128; ++i) {
    Rng sub = mr.split(static_cast<std::uint64_t>(i));
    PriorSample s = sample_prior(m, sub);
    BitVec x(6);
    for (int d = 0; d < 6; ++d) x[static_cast<std::size_t>(d)] = sub.bernoulli(s.obs_means[d]) ? 1 : 0;
    xs.push_back(std::move(x));
  }
  double prev = 1e300;
  for (int S : {1, 4, 16, 64}) {
    const double nll = eval_nll(m, &q, ScoringMode::LearnedProposal, xs, {}, S, Rng(11));
    CHECK(nll <= prev + 1e-3);
    prev = nll;
  }
}

TEST_CASE("two-sample signal magnitudes are comparable across vimco and nvil", "[train]") {
  Dataset data = synthetic_dataset({192, 48, 0}, 29, {.rows = 10, .cols = 10});
  auto final_rms = [&](EstimatorKind kind) {
    TrainConfig cfg;
    cfg.estimator = kind;
    cfg.k = 2;
    cfg.lr = 1e-3;
    cfg.latent_sizes = {32};
    cfg.minibatch = 24;
    cfg.epochs = 40;  // 320 steps
    cfg.seed = 12;
    MetricsLog log;
    Trainer trainer(cfg, data);
    trainer.run(log);
    return trainer.monitor().value();
  };
  const double v = final_rms(EstimatorKind::Vimco);
  const double n = final_rms(EstimatorKind::Nvil);
  CHECK(v > 0.0);
  CHECK(n > 0.0);
  const double ratio = v / n;
  CHECK(ratio > 0.1);
  CHECK(ratio < 10.0);
}

TEST_CASE("completions vary across draws for a shared context", "[train]") {
  Dataset data = synthetic_dataset({96, 24, 8}, 33, {.rows = 8, .cols = 8});
  TrainConfig cfg;
  cfg.mode = TrainMode::SopLearned;
  cfg.estimator = EstimatorKind::Vimco;
  cfg.k = 3;
  cfg.latent_sizes = {8};
  cfg.minibatch = 24;
  cfg.epochs = 15;
  cfg.seed = 3;
  MetricsLog log;
  Trainer trainer(cfg, data);
  trainer.run(log);

  SopView v = sop_view(data);
  const BitVec& ctx = v.contexts[0];
  std::vector<Vec> means;
  Rng root(9);
  for (int draw = 0; draw < 6; ++draw) {
    Rng rng = root.split(static_cast<std::uint64_t>(draw));
    means.push_back(sample_prior(trainer.model(), rng, &ctx).obs_means);
  }
  Vec mean = Vec::Zero(means[0].size());
  for (const auto& m : means) mean += m;
  mean /= 6.0;
  double var = 0.0;
  for (const auto& m : means) var += (m - mean).squaredNorm();
  CHECK(var > 1e-6);  // bottom-half predictions genuinely vary across draws
}

TEST_CASE("metrics csv has the documented schema", "[train]") {
  MetricsLog log;
  log.estimator = "vimco";
  log.k = 5;
  log.lr = 1e-3;
  log.seed = 7;
  log.add(10, 0, "train", "bound", -12.5);
  std::ostringstream out;
  log.write_csv(out);
  CHECK(out.str() ==
        "step,epoch,split,metric,value,k,estimator,lr,seed\n"
        "10,0,train,bound,-12.5,5,vimco,0.001,7\n");
}
