// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "test_support.hpp"
#include "vimco/estimators.hpp"

using namespace vimco;
using vtest::rel_gap;

namespace {

struct ScoredCase {
  SampleSet s;
  std::vector<NetGrad> dlogq;
  std::vector<NetGrad> dlogf_theta;  // learned mode: -dlogq
  std::vector<NetGrad> dlogf_psi;
};

ScoredCase scored_case(std::uint64_t seed, int K) {
  vtest::Toy t = vtest::random_toy(seed);
  ProposalEval q(t.proposal);
  Rng rng(seed * 31 + 1);
  ScoredCase c;
  c.s = score_samples(t.model, q, t.x, K, rng);
  for (int j = 0; j < K; ++j) {
    const LatentStack& h = c.s.stacks[static_cast<std::size_t>(j)];
    c.dlogq.push_back(grad_log_q(t.proposal, t.x, h));
    NetGrad neg = c.dlogq.back();
    neg.scale(-1.0);
    c.dlogf_theta.push_back(std::move(neg));
    c.dlogf_psi.push_back(grad_log_joint(t.model, t.x, h));
  }
  return c;
}

}  // namespace

TEST_CASE("model_grad degenerate forms", "[estimators]") {
  ScoredCase c1 = scored_case(11, 1);
  const NetGrad g1 = model_grad(c1.s, c1.dlogf_psi);
  CHECK(rel_gap(flatten(g1), flatten(c1.dlogf_psi[0])) < 1e-14);

  ScoredCase c = scored_case(12, 4);
  c.s.l = Vec::Constant(4, -1.5);  // force equal scores
  const NetGrad g = model_grad(c.s, c.dlogf_psi);
  NetGrad avg = c.dlogf_psi[0];
  for (int j = 1; j < 4; ++j) avg.add_scaled(c.dlogf_psi[static_cast<std::size_t>(j)], 1.0);
  avg.scale(0.25);
  CHECK(rel_gap(flatten(g), flatten(avg)) < 1e-13);
}

TEST_CASE("model estimate stays inside the convex hull of sample gradients", "[estimators]") {
  Rng rng(13);
  for (int trial = 0; trial < 60; ++trial) {
    const int K = 2 + static_cast<int>(rng.next_u64() % 8);
    const int dim = 3 + static_cast<int>(rng.next_u64() % 6);
    Vec l(K);
    std::vector<Vec> grads;
    double max_norm = 0.0;
    for (int j = 0; j < K; ++j) {
      l[j] = 10.0 * (rng.uniform() - 0.5);
      Vec g(dim);
      for (int i = 0; i < dim; ++i) g[i] = rng.normal();
      max_norm = std::max(max_norm, g.norm());
      grads.push_back(std::move(g));
    }
    const Vec w = softmax_from_logs(l);
    const Vec est = model_estimate_flat(w, grads);
    CHECK(est.norm() <= max_norm * (1.0 + 1e-9));
  }
}

TEST_CASE("naive estimator reductions", "[estimators]") {
  // all scores zero: the global signal log((1/K) sum 1) = 0 kills the first term
  ScoredCase c = scored_case(21, 3);
  c.s.l = Vec::Zero(3);
  const NetGrad g = naive_grad(c.s, c.dlogq, c.dlogf_theta);
  const NetGrad second = detail::weighted_sum(c.dlogf_theta, importance_weights(c.s));
  CHECK(rel_gap(flatten(g), flatten(second)) < 1e-13);

  // K = 1 learned mode equals the single-sample score-function estimate
  ScoredCase c1 = scored_case(22, 1);
  const NetGrad g1 = naive_grad(c1.s, c1.dlogq, c1.dlogf_theta);
  NetGrad expected = c1.dlogq[0];
  expected.scale(c1.s.l[0] - 1.0);
  CHECK(rel_gap(flatten(g1), flatten(expected)) < 1e-12);
}

TEST_CASE("nvil with zero baselines is the naive estimator", "[estimators]") {
  ScoredCase c = scored_case(23, 4);
  const NetGrad a = naive_grad(c.s, c.dlogq, c.dlogf_theta);
  const NetGrad b = nvil_grad(c.s, c.dlogq, c.dlogf_theta, BaselineVals{0.0, 0.0});
  CHECK(rel_gap(flatten(a), flatten(b)) < 1e-14);
}

TEST_CASE("vimco first term vanishes for equal scores", "[estimators]") {
  ScoredCase c = scored_case(24, 5);
  c.s.l = Vec::Constant(5, 0.75);
  const NetGrad g = vimco_grad(c.s, c.dlogq, c.dlogf_theta);
  const NetGrad second = detail::weighted_sum(c.dlogf_theta, importance_weights(c.s));
  CHECK((flatten(g) - flatten(second)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("vimco two-sample coefficients match hand evaluation", "[estimators]") {
  // isolate the first term with unit gradients on a two-parameter layer
  SampleSet s;
  s.l.resize(2);
  s.l << 0.0, std::log(3.0);
  std::vector<NetGrad> dlogq(2);
  for (int j = 0; j < 2; ++j) {
    dlogq[static_cast<std::size_t>(j)].layers.resize(1);
    dlogq[static_cast<std::size_t>(j)].layers[0].b = Vec::Zero(2);
    dlogq[static_cast<std::size_t>(j)].layers[0].b[j] = 1.0;
  }
  const NetGrad g = vimco_grad(s, dlogq, {});
  CHECK(g.layers[0].b[0] == Catch::Approx(std::log(2.0) - std::log(3.0)).epsilon(1e-13));
  CHECK(g.layers[0].b[1] == Catch::Approx(std::log(2.0)).epsilon(1e-13));

  CHECK_THROWS_AS(theta_coeffs(EstimatorKind::Vimco, Vec::Constant(1, 0.0)),
                  std::invalid_argument);
}

TEST_CASE("fused path equals the literal two-term path", "[estimators]") {
  for (std::uint64_t seed : {31u, 32u, 33u}) {
    ScoredCase c = scored_case(seed, 5);
    const BaselineVals bl{0.4, -0.2};
    for (EstimatorKind kind :
         {EstimatorKind::Naive, EstimatorKind::Nvil, EstimatorKind::Vimco}) {
      const ThetaCoeffs tc = theta_coeffs(kind, c.s, MeanKind::Geometric, &bl);
      const NetGrad literal = theta_grad(tc, c.dlogq, c.dlogf_theta);
      const NetGrad fused = fused_theta_grad(tc, c.dlogq);
      CHECK(rel_gap(flatten(literal), flatten(fused)) < 1e-12);
    }
  }
}

TEST_CASE("wake update is the responsibility-weighted score gradient", "[estimators]") {
  ScoredCase c = scored_case(41, 1);
  const NetGrad g1 = rws_wake_grad(c.s, c.dlogq);
  CHECK((flatten(g1) - flatten(c.dlogq[0])).cwiseAbs().maxCoeff() == 0.0);

  ScoredCase c4 = scored_case(42, 4);
  c4.s.l = Vec::Constant(4, 2.0);
  const NetGrad g = rws_wake_grad(c4.s, c4.dlogq);
  NetGrad avg = c4.dlogq[0];
  for (int j = 1; j < 4; ++j) avg.add_scaled(c4.dlogq[static_cast<std::size_t>(j)], 1.0);
  avg.scale(0.25);
  CHECK(rel_gap(flatten(g), flatten(avg)) < 1e-13);

  // structural identity with the responsibility-weighted combination
  ScoredCase cr = scored_case(43, 6);
  const Vec a = flatten(rws_wake_grad(cr.s, cr.dlogq));
  const Vec b = flatten(detail::weighted_sum(cr.dlogq, importance_weights(cr.s)));
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sleep update is seeded and has t - 1/2 bias components at zero", "[estimators]") {
  vtest::Toy t = vtest::random_toy(51);
  ProposalEval q(t.proposal);
  Rng a(9), b(9);
  const NetGrad ga = rws_sleep_grad(t.model, q, a);
  const NetGrad gb = rws_sleep_grad(t.model, q, b);
  CHECK((flatten(ga) - flatten(gb)).cwiseAbs().maxCoeff() == 0.0);

  SbnProposal zero = make_proposal_from_observation(t.latent_sizes, static_cast<int>(t.x.size()));
  ProposalEval qz(zero);
  Rng c(9);
  const NetGrad gz = rws_sleep_grad(t.model, qz, c);
  for (const auto& layer : gz.layers)
    for (Eigen::Index i = 0; i < layer.b.size(); ++i)
      CHECK((std::abs(layer.b[i] - 0.5) < 1e-14 || std::abs(layer.b[i] + 0.5) < 1e-14));
}

TEST_CASE("repeated exact sleep steps shrink the posterior KL", "[estimators]") {
  // Two-bit toy: one latent unit, one observed pixel. The expected sleep
  // update is enumerable, and following it should pull Q(h|x) toward the
  // posterior averaged over the model's own observation distribution.
  SbnModel m = make_model({1}, 1);
  m.prior[0].b[0] = 0.7;
  m.obs.W(0, 0) = 2.2;
  m.obs.b[0] = -0.9;

  SbnProposal prop = make_proposal_from_observation({1}, 1);
  prop.layers[0].b[0] = -1.3;
  prop.layers[0].Wx(0, 0) = 0.4;

  auto joint = [&](int xb, int hb) {
    LatentStack h;
    h.h = {BitVec{static_cast<std::uint8_t>(hb)}};
    BitVec x{static_cast<std::uint8_t>(xb)};
    return std::exp(log_joint(m, x, h));
  };

  auto avg_kl = [&]() {
    ProposalEval q(prop);
    double kl = 0.0;
    for (int xb : {0, 1}) {
      const double px = joint(xb, 0) + joint(xb, 1);
      BitVec x{static_cast<std::uint8_t>(xb)};
      for (int hb : {0, 1}) {
        const double post = joint(xb, hb) / px;
        LatentStack h;
        h.h = {BitVec{static_cast<std::uint8_t>(hb)}};
        kl += px * post * (std::log(post) - q.log_prob(x, h));
      }
    }
    return kl;
  };

  double prev = avg_kl();
  CHECK(prev > 1e-3);
  for (int step = 0; step < 200; ++step) {
    ProposalEval q(prop);
    NetGrad g = zero_grad(prop);
    for (int xb : {0, 1})
      for (int hb : {0, 1}) {
        LatentStack h;
        h.h = {BitVec{static_cast<std::uint8_t>(hb)}};
        BitVec x{static_cast<std::uint8_t>(xb)};
        q.accumulate_grad(x, h, nullptr, joint(xb, hb), g);
      }
    prop.layers[0].b[0] += 0.5 * g.layers[0].b[0];
    prop.layers[0].Wx(0, 0) += 0.5 * g.layers[0].Wx(0, 0);
    const double now = avg_kl();
    CHECK(now <= prev + 1e-12);
    prev = now;
  }
  CHECK(prev < 0.05);
}

TEST_CASE("sleep coefficients are rejected from sample sets", "[estimators]") {
  CHECK_THROWS_AS(theta_coeffs(EstimatorKind::RwsSleep, Vec::Constant(2, 0.0)),
                  std::invalid_argument);
}
