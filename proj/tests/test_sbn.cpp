// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "test_support.hpp"
#include "vimco/sbn.hpp"

using namespace vimco;
using vtest::all_stacks;
using vtest::fd_grad;
using vtest::rel_gap;

TEST_CASE("zero-parameter model is a stack of fair coins", "[sbn]") {
  SbnModel m = make_model({1}, 1);
  Rng rng(3);
  PriorSample s = sample_prior(m, rng);
  CHECK(s.obs_means[0] == 0.5);

  // log P(x,h) = -2 log 2 for every combination
  for (int xb : {0, 1})
    for (int hb : {0, 1}) {
      LatentStack h;
      h.h.push_back(BitVec{static_cast<std::uint8_t>(hb)});
      BitVec x{static_cast<std::uint8_t>(xb)};
      CHECK(log_joint(m, x, h) == Catch::Approx(-2.0 * std::log(2.0)).epsilon(1e-14));
    }
}

TEST_CASE("saturated biases give a deterministic latent stack", "[sbn]") {
  SbnModel m = make_model({3, 2}, 4);
  m.prior[0].b << 50.0, -50.0, 50.0;
  m.prior[1].b << -50.0, 50.0;
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(1000 + static_cast<std::uint64_t>(trial));
    PriorSample s = sample_prior(m, rng);
    CHECK(s.h.h[0] == BitVec({1, 0, 1}));
    CHECK(s.h.h[1] == BitVec({0, 1}));
  }
}

TEST_CASE("prior sampling is reproducible from the seed", "[sbn]") {
  vtest::Toy t = vtest::random_toy(21);
  Rng a(7), b(7);
  PriorSample sa = sample_prior(t.model, a);
  PriorSample sb = sample_prior(t.model, b);
  CHECK(sa.h.h == sb.h.h);
  CHECK(sa.obs_means == sb.obs_means);
}

TEST_CASE("empirical latent means are 0.5 for a zero-parameter model", "[sbn]") {
  SbnModel m = make_model({2}, 2);
  Rng rng(17);
  double mean = 0.0;
  constexpr int n = 4000;
  for (int i = 0; i < n; ++i) {
    Rng sub = rng.split(static_cast<std::uint64_t>(i));
    PriorSample s = sample_prior(m, sub);
    mean += (s.h.h[0][0] + s.h.h[0][1]) / 2.0;
  }
  CHECK(std::abs(mean / n - 0.5) < 0.03);
}

TEST_CASE("context handling is validated", "[sbn]") {
  SbnModel uncond = make_model({2}, 3);
  SbnModel cond = make_model({2}, 3, 4);
  BitVec ctx{1, 0, 1, 0};
  Rng rng(5);
  CHECK_THROWS_AS(sample_prior(uncond, rng, &ctx), std::invalid_argument);
  CHECK_THROWS_AS(sample_prior(cond, rng), std::invalid_argument);
  BitVec short_ctx{1, 0};
  CHECK_THROWS_AS(sample_prior(cond, rng, &short_ctx), std::invalid_argument);
}

TEST_CASE("log_joint shape mismatches are errors", "[sbn]") {
  SbnModel m = make_model({2, 2}, 3);
  LatentStack h;
  h.h = {BitVec{0, 1}, BitVec{1, 0}};
  BitVec x{1, 0, 1};
  CHECK_NOTHROW(log_joint(m, x, h));
  BitVec bad_x{1, 0};
  CHECK_THROWS_AS(log_joint(m, bad_x, h), std::invalid_argument);
  LatentStack bad_h;
  bad_h.h = {BitVec{0, 1}};
  CHECK_THROWS_AS(log_joint(m, x, bad_h), std::invalid_argument);
}

TEST_CASE("increasing a bias toward an active unit raises log_joint", "[sbn]") {
  vtest::Toy t = vtest::random_toy(31);
  LatentStack h;
  for (int s : t.latent_sizes) h.h.push_back(BitVec(static_cast<std::size_t>(s), 1));
  const double before = log_joint(t.model, t.x, h);
  t.model.prior[0].b[0] += 0.25;  // unit 0 of the top layer is active (bit 1)
  CHECK(log_joint(t.model, t.x, h) > before);
}

TEST_CASE("model joint normalizes over (x, h)", "[sbn]") {
  for (std::uint64_t seed : {101u, 102u, 103u}) {
    vtest::Toy t = vtest::random_toy(seed, {.max_layers = 2, .max_units = 2, .max_obs = 4});
    const auto stacks = all_stacks(t.latent_sizes);
    const auto xs = vtest::all_bitvecs(static_cast<int>(t.x.size()));
    Vec terms(static_cast<Eigen::Index>(stacks.size() * xs.size()));
    Eigen::Index at = 0;
    for (const auto& x : xs)
      for (const auto& h : stacks) terms[at++] = log_joint(t.model, x, h);
    CHECK(std::abs(std::exp(log_sum_exp(terms)) - 1.0) < 1e-9);
  }
}

TEST_CASE("conditional joint normalizes per context", "[sbn]") {
  vtest::Toy t = vtest::random_toy(7, {.max_obs = 3, .context_dim = 3});
  const auto stacks = all_stacks(t.latent_sizes);
  const auto xs = vtest::all_bitvecs(static_cast<int>(t.x.size()));
  Vec terms(static_cast<Eigen::Index>(stacks.size() * xs.size()));
  Eigen::Index at = 0;
  for (const auto& x : xs)
    for (const auto& h : stacks) terms[at++] = log_joint(t.model, x, h, t.ctx_ptr());
  CHECK(std::abs(std::exp(log_sum_exp(terms)) - 1.0) < 1e-9);
}

TEST_CASE("proposal normalizes over stacks", "[sbn]") {
  for (bool prior_shaped : {false, true}) {
    vtest::Toy t = vtest::random_toy(55, {.max_obs = 4,
                                          .context_dim = prior_shaped ? 3 : 0,
                                          .prior_shaped_prop = prior_shaped});
    ProposalEval q(t.proposal);
    const auto stacks = all_stacks(t.latent_sizes);
    Vec terms(static_cast<Eigen::Index>(stacks.size()));
    Eigen::Index at = 0;
    for (const auto& h : stacks) terms[at++] = q.log_prob(t.x, h, t.ctx_ptr());
    CHECK(std::abs(std::exp(log_sum_exp(terms)) - 1.0) < 1e-9);
  }
}

TEST_CASE("zero-parameter proposal scores every stack uniformly", "[sbn]") {
  SbnProposal p = make_proposal_from_observation({2, 3}, 4);
  ProposalEval q(p);
  BitVec x{1, 0, 1, 1};
  Rng rng(9);
  auto draw = q.sample(x, rng);
  CHECK(draw.log_q == Catch::Approx(-5.0 * std::log(2.0)).epsilon(1e-14));
  // gradient of the bias is t - 0.5 at zero parameters
  NetGrad g = grad_log_q(p, x, draw.h);
  for (int k = 0; k < p.n_layers(); ++k) {
    const BitVec& bits = draw.h.h[static_cast<std::size_t>(p.stack_index(k))];
    for (Eigen::Index i = 0; i < g.layers[static_cast<std::size_t>(k)].b.size(); ++i)
      CHECK(g.layers[static_cast<std::size_t>(k)].b[i] ==
            Catch::Approx(bits[static_cast<std::size_t>(i)] - 0.5).epsilon(1e-14));
  }
}

TEST_CASE("proposal sampling is reproducible and matches its own log_prob", "[sbn]") {
  vtest::Toy t = vtest::random_toy(77);
  ProposalEval q(t.proposal);
  Rng a(13), b(13);
  auto da = q.sample(t.x, a);
  auto db = sample_proposal(t.proposal, t.x, b);
  CHECK(da.h.h == db.h.h);
  CHECK(da.log_q == db.log_q);
  CHECK(q.log_prob(t.x, da.h) == Catch::Approx(da.log_q).epsilon(1e-12));
  CHECK(log_q(t.proposal, t.x, da.h) == Catch::Approx(da.log_q).epsilon(1e-12));
}

TEST_CASE("analytic weight gradient at zero parameters is one half", "[sbn]") {
  // one layer, one unit, parent bit fixed to 1, target bit 1: d/dW = (1 - 0.5) * 1
  SbnModel m = make_model({1, 1}, 1);
  LatentStack h;
  h.h = {BitVec{1}, BitVec{1}};
  BitVec x{0};
  NetGrad g = grad_log_joint(m, x, h);
  CHECK(g.layers[1].W(0, 0) == Catch::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("weight gradients vanish for inactive parents", "[sbn]") {
  vtest::Toy t = vtest::random_toy(91, {.max_layers = 2, .max_units = 2});
  if (t.latent_sizes.size() < 2) t = vtest::random_toy(92, {.max_layers = 2, .max_units = 2});
  REQUIRE(t.latent_sizes.size() == 2);
  LatentStack h;
  h.h = {BitVec(static_cast<std::size_t>(t.latent_sizes[0]), 0),
         BitVec(static_cast<std::size_t>(t.latent_sizes[1]), 1)};
  NetGrad g = grad_log_joint(t.model, t.x, h);
  CHECK(g.layers[1].W.cwiseAbs().maxCoeff() == 0.0);  // parent layer all zero
}

TEST_CASE("log_joint gradient matches central differences", "[sbn]") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    vtest::Toy t = vtest::random_toy(200 + seed, {.context_dim = (seed % 2 == 0) ? 3 : 0});
    Rng rng(400 + seed);
    PriorSample hs = sample_prior(t.model, rng, t.ctx_ptr());
    NetGrad g = grad_log_joint(t.model, t.x, hs.h, t.ctx_ptr());
    auto f = [&]() { return log_joint(t.model, t.x, hs.h, t.ctx_ptr()); };
    const Vec fd = fd_grad(f, tensor_refs(t.model));
    CHECK(rel_gap(flatten(g), fd) < 1e-6);
  }
}

TEST_CASE("log_q gradient matches central differences", "[sbn]") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const bool sop = (seed % 2 == 1);
    vtest::Toy t = vtest::random_toy(300 + seed, {.context_dim = sop ? 3 : 0,
                                                  .prior_shaped_prop = sop});
    ProposalEval q(t.proposal);
    Rng rng(500 + seed);
    auto draw = q.sample(t.x, rng, t.ctx_ptr());
    NetGrad g = grad_log_q(t.proposal, t.x, draw.h, t.ctx_ptr());
    auto f = [&]() { return ProposalEval(t.proposal).log_prob(t.x, draw.h, t.ctx_ptr()); };
    const Vec fd = fd_grad(f, tensor_refs(t.proposal));
    CHECK(rel_gap(flatten(g), fd) < 1e-6);
  }
}

TEST_CASE("batched proposal gradients equal per-sample accumulation", "[sbn]") {
  for (bool centered : {false, true}) {
    vtest::Toy t = vtest::random_toy(601, {.max_obs = 6, .context_dim = 3,
                                           .prior_shaped_prop = true});
    Centering c;
    if (centered) {
      c.obs_mean = Vec::Constant(static_cast<Eigen::Index>(t.x.size()), 0.3);
      c.ctx_mean = Vec::Constant(3, 0.6);
    }
    ProposalEval q(t.proposal, centered ? &c : nullptr);
    Rng rng(71);
    std::vector<LatentStack> hs;
    std::vector<double> coeffs;
    for (int j = 0; j < 5; ++j) {
      hs.push_back(q.sample(t.x, rng, t.ctx_ptr()).h);
      coeffs.push_back(rng.normal());
    }
    NetGrad batched = zero_grad(t.proposal);
    q.accumulate_grads(t.x, hs, coeffs, t.ctx_ptr(), batched);
    NetGrad separate = zero_grad(t.proposal);
    for (int j = 0; j < 5; ++j)
      q.accumulate_grad(t.x, hs[static_cast<std::size_t>(j)], t.ctx_ptr(),
                        coeffs[static_cast<std::size_t>(j)], separate);
    CHECK(rel_gap(flatten(batched), flatten(separate)) < 1e-12);
  }
}

TEST_CASE("centered proposal gradients match central differences", "[sbn]") {
  vtest::Toy t = vtest::random_toy(611, {.max_obs = 5, .context_dim = 2,
                                         .prior_shaped_prop = true});
  Centering c;
  c.obs_mean = Vec::LinSpaced(static_cast<Eigen::Index>(t.x.size()), 0.1, 0.8);
  c.ctx_mean = Vec::LinSpaced(2, 0.2, 0.7);
  ProposalEval q(t.proposal, &c);
  Rng rng(72);
  auto draw = q.sample(t.x, rng, t.ctx_ptr());
  NetGrad g = zero_grad(t.proposal);
  q.accumulate_grad(t.x, draw.h, t.ctx_ptr(), 1.0, g);
  auto f = [&]() { return ProposalEval(t.proposal, &c).log_prob(t.x, draw.h, t.ctx_ptr()); };
  const Vec fd = fd_grad(f, tensor_refs(t.proposal));
  CHECK(rel_gap(flatten(g), fd) < 1e-6);
}

TEST_CASE("conditional model with zeroed context weights equals the unconditional one",
          "[sbn]") {
  vtest::Toy base = vtest::random_toy(700, {.max_layers = 2, .max_units = 2, .max_obs = 4});
  SbnModel cond = make_model(base.latent_sizes, static_cast<int>(base.x.size()), 3);
  for (std::size_t i = 0; i < cond.prior.size(); ++i) {
    cond.prior[i].W = base.model.prior[i].W;
    cond.prior[i].b = base.model.prior[i].b;
    cond.prior[i].Wc.setZero();
  }
  cond.obs.W = base.model.obs.W;
  cond.obs.b = base.model.obs.b;
  cond.obs.Wc.setZero();
  BitVec ctx{1, 0, 1};

  const auto stacks = all_stacks(base.latent_sizes);
  for (const auto& h : stacks) {
    CHECK(log_joint(cond, base.x, h, &ctx) == log_joint(base.model, base.x, h));
  }
  Rng a(15), b(15);
  PriorSample su = sample_prior(base.model, a);
  PriorSample sc = sample_prior(cond, b, &ctx);
  CHECK(su.h.h == sc.h.h);
  CHECK(su.obs_means == sc.obs_means);
}

TEST_CASE("observation bias initialization uses clamped logits", "[sbn]") {
  SbnModel m = make_model({1}, 3);
  Vec means(3);
  means << 0.0, 0.5, 1.0;
  set_obs_bias_from_means(m, means);
  CHECK(m.obs.b[0] == Catch::Approx(std::log(0.001 / 0.999)));
  CHECK(m.obs.b[1] == Catch::Approx(0.0).margin(1e-12));
  CHECK(m.obs.b[2] == Catch::Approx(std::log(0.999 / 0.001)));
}
