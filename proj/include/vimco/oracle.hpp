// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vimco/estimators.hpp"
#include "vimco/objective.hpp"
#include "vimco/sbn.hpp"

namespace vimco {

struct OracleBudget {
  std::size_t max_configs = std::size_t(1) << 20;
  std::size_t max_tuples = 1000000;
};

struct OracleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::vector<BitVec> enumerate_bitvecs(int n_bits) {
  std::vector<BitVec> out;
  out.reserve(std::size_t(1) << n_bits);
  for (std::uint64_t code = 0; code < (std::uint64_t(1) << n_bits); ++code) {
    BitVec b(static_cast<std::size_t>(n_bits));
    for (int i = 0; i < n_bits; ++i) b[static_cast<std::size_t>(i)] = (code >> i) & 1u;
    out.push_back(std::move(b));
  }
  return out;
}

/// All latent configurations of a model, in a fixed enumeration order.
inline std::vector<LatentStack> enumerate_stacks(const SbnModel& m, const OracleBudget& budget) {
  int total_bits = 0;
  for (const auto& L : m.prior) total_bits += L.units();
  if (total_bits >= 63 || (std::size_t(1) << total_bits) > budget.max_configs)
    throw OracleError("latent configuration count exceeds the oracle budget");
  std::vector<std::vector<BitVec>> per_layer;
  for (const auto& L : m.prior) per_layer.push_back(enumerate_bitvecs(L.units()));
  std::vector<LatentStack> out;
  out.reserve(std::size_t(1) << total_bits);
  std::vector<std::size_t> at(per_layer.size(), 0);
  while (true) {
    LatentStack st;
    st.h.reserve(per_layer.size());
    for (std::size_t i = 0; i < per_layer.size(); ++i) st.h.push_back(per_layer[i][at[i]]);
    out.push_back(std::move(st));
    std::size_t k = 0;
    while (k < at.size()) {
      if (++at[k] < per_layer[k].size()) break;
      at[k] = 0;
      ++k;
    }
    if (k == at.size()) break;
  }
  return out;
}

/// Per-configuration cache for one observation: sampling log-probabilities,
/// log scores, and flattened gradients in the theta and psi views.
class ExhaustiveTable {
 public:
  ExhaustiveTable(const SbnModel& model, const ProposalEval* q, ScoringMode mode, const BitVec& x,
                  const BitVec* ctx, const OracleBudget& budget = {})
      : mode_(mode) {
    configs_ = enumerate_stacks(model, budget);
    const int n = static_cast<int>(configs_.size());
    logq_.resize(n);
    logf_.resize(n);
    dlogq_theta_.reserve(static_cast<std::size_t>(n));
    dlogf_psi_.reserve(static_cast<std::size_t>(n));
    if (mode == ScoringMode::LearnedProposal) {
      if (q == nullptr) throw std::invalid_argument("learned-proposal table needs a proposal");
      dlogf_theta_.reserve(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        const LatentStack& h = configs_[static_cast<std::size_t>(i)];
        logq_[i] = q->log_prob(x, h, ctx);
        logf_[i] = log_joint(model, x, h, ctx) - logq_[i];
        NetGrad gq = zero_grad(q->proposal());
        q->accumulate_grad(x, h, ctx, 1.0, gq);
        dlogq_theta_.push_back(flatten(gq));
        dlogf_theta_.push_back(-dlogq_theta_.back());
        dlogf_psi_.push_back(flatten(grad_log_joint(model, x, h, ctx)));
      }
    } else {
      for (int i = 0; i < n; ++i) {
        const LatentStack& h = configs_[static_cast<std::size_t>(i)];
        logq_[i] = log_prior(model, h, ctx);
        logf_[i] = log_obs(model, x, h, ctx);
        NetGrad gq = zero_grad(model);
        accumulate_grad_log_prior(model, h, ctx, 1.0, gq);
        dlogq_theta_.push_back(flatten(gq));
        NetGrad gf = zero_grad(model);
        accumulate_grad_log_obs(model, x, h, ctx, 1.0, gf);
        dlogf_psi_.push_back(flatten(gf));
      }
    }
  }

  int n() const { return static_cast<int>(configs_.size()); }
  ScoringMode mode() const { return mode_; }
  const std::vector<LatentStack>& configs() const { return configs_; }
  const Vec& logq() const { return logq_; }
  const Vec& logf() const { return logf_; }
  const std::vector<Vec>& dlogq_theta() const { return dlogq_theta_; }
  /// Empty in prior-proposal mode, where log f carries no theta dependence.
  const std::vector<Vec>& dlogf_theta() const { return dlogf_theta_; }
  const std::vector<Vec>& dlogf_psi() const { return dlogf_psi_; }
  int theta_dim() const { return static_cast<int>(dlogq_theta_[0].size()); }
  int psi_dim() const { return static_cast<int>(dlogf_psi_[0].size()); }

  /// Posterior responsibilities P(h|x[,c]) over the configurations.
  Vec posterior() const { return softmax_from_logs(logq_ + logf_); }

 private:
  ScoringMode mode_;
  std::vector<LatentStack> configs_;
  Vec logq_, logf_;
  std::vector<Vec> dlogq_theta_, dlogf_theta_, dlogf_psi_;
};

inline void check_tuple_budget(int n_configs, int K, const OracleBudget& budget) {
  const double count = std::pow(static_cast<double>(n_configs), static_cast<double>(K));
  if (!(count <= static_cast<double>(budget.max_tuples)))
    throw OracleError("tuple count exceeds the oracle budget");
}

/// Visits every K-tuple of configuration indices in odometer order.
template <class F>
inline void for_each_tuple(int n_configs, int K, F&& f) {
  std::vector<int> idx(static_cast<std::size_t>(K), 0);
  while (true) {
    f(idx);
    int k = 0;
    while (k < K) {
      if (++idx[static_cast<std::size_t>(k)] < n_configs) break;
      idx[static_cast<std::size_t>(k)] = 0;
      ++k;
    }
    if (k == K) break;
  }
}

/// Exact marginal log-likelihood by summation over all configurations.
inline double exact_log_likelihood(const SbnModel& model, const BitVec& x,
                                   const BitVec* ctx = nullptr, const OracleBudget& budget = {}) {
  const auto stacks = enumerate_stacks(model, budget);
  Vec terms(static_cast<Eigen::Index>(stacks.size()));
  for (std::size_t i = 0; i < stacks.size(); ++i)
    terms[static_cast<Eigen::Index>(i)] = log_joint(model, x, stacks[i], ctx);
  return log_sum_exp(terms);
}

/// Exact value of the K-sample objective: the expectation of the stochastic
/// bound over all K-tuples of proposal draws.
inline double exact_bound(const ExhaustiveTable& t, int K, const OracleBudget& budget = {}) {
  if (K < 1) throw std::invalid_argument("exact_bound: K must be >= 1");
  check_tuple_budget(t.n(), K, budget);
  const double logK = std::log(static_cast<double>(K));
  Vec l(K);
  double acc = 0.0;
  for_each_tuple(t.n(), K, [&](const std::vector<int>& idx) {
    double logp = 0.0;
    for (int j = 0; j < K; ++j) {
      logp += t.logq()[idx[static_cast<std::size_t>(j)]];
      l[j] = t.logf()[idx[static_cast<std::size_t>(j)]];
    }
    acc += std::exp(logp) * (log_sum_exp(l) - logK);
  });
  return acc;
}

struct ThetaPsiGrad {
  Vec theta;
  Vec psi;
};

/// Tuple-weighted integrand of the exact gradient: score-function term plus
/// responsibility-weighted score terms, accumulated over every tuple.
inline ThetaPsiGrad exact_bound_grad_analytic(const ExhaustiveTable& t, int K,
                                              const OracleBudget& budget = {}) {
  if (K < 1) throw std::invalid_argument("exact gradient: K must be >= 1");
  check_tuple_budget(t.n(), K, budget);
  const double logK = std::log(static_cast<double>(K));
  ThetaPsiGrad g;
  g.theta = Vec::Zero(t.theta_dim());
  g.psi = Vec::Zero(t.psi_dim());
  Vec l(K);
  for_each_tuple(t.n(), K, [&](const std::vector<int>& idx) {
    double logp = 0.0;
    for (int j = 0; j < K; ++j) {
      logp += t.logq()[idx[static_cast<std::size_t>(j)]];
      l[j] = t.logf()[idx[static_cast<std::size_t>(j)]];
    }
    const double p = std::exp(logp);
    const double lhat = log_sum_exp(l) - logK;
    const Vec w = softmax_from_logs(l);
    for (int j = 0; j < K; ++j) {
      const int cj = idx[static_cast<std::size_t>(j)];
      g.theta += (p * lhat) * t.dlogq_theta()[static_cast<std::size_t>(cj)];
      if (!t.dlogf_theta().empty())
        g.theta += (p * w[j]) * t.dlogf_theta()[static_cast<std::size_t>(cj)];
      g.psi += (p * w[j]) * t.dlogf_psi()[static_cast<std::size_t>(cj)];
    }
  });
  return g;
}

struct GradCrossCheck {
  ThetaPsiGrad analytic;
  Vec fd_theta;  // finite differences over the theta parameters
  Vec fd_psi;    // finite differences over the psi parameters
  double theta_rel_gap;
  double psi_rel_gap;
};

namespace detail {
inline double rel_vec_gap(const Vec& a, const Vec& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-12);
}
}  // namespace detail

/// Computes the exact gradient two independent ways: the analytic tuple
/// integrand and central finite differences of exact_bound. In prior-proposal
/// mode the two parameter views overlap inside the model, so the finite
/// difference is taken once over the model parameters and compared against
/// the sum of the two analytic parts.
inline GradCrossCheck exact_bound_grad_both(SbnModel& model, SbnProposal* proposal,
                                            const Centering* center, ScoringMode mode,
                                            const BitVec& x, const BitVec* ctx, int K,
                                            const OracleBudget& budget = {},
                                            double fd_step = 1e-5) {
  if (proposal == nullptr && mode == ScoringMode::LearnedProposal)
    throw std::invalid_argument("learned-proposal gradient needs a proposal");
  auto make_table = [&]() {
    if (mode == ScoringMode::LearnedProposal) {
      ProposalEval q(*proposal, center);
      return ExhaustiveTable(model, &q, mode, x, ctx, budget);
    }
    return ExhaustiveTable(model, nullptr, mode, x, ctx, budget);
  };
  GradCrossCheck out;
  out.analytic = exact_bound_grad_analytic(make_table(), K, budget);
  auto bound_now = [&]() { return exact_bound(make_table(), K, budget); };
  auto fd_over = [&](std::vector<TensorRef> refs) {
    Vec g(num_params(refs));
    std::ptrdiff_t at = 0;
    for (auto& ref : refs) {
      for (std::ptrdiff_t i = 0; i < ref.n; ++i) {
        const double saved = ref.data[i];
        ref.data[i] = saved + fd_step;
        const double fp = bound_now();
        ref.data[i] = saved - fd_step;
        const double fm = bound_now();
        ref.data[i] = saved;
        g[at++] = (fp - fm) / (2.0 * fd_step);
      }
    }
    return g;
  };

  if (mode == ScoringMode::LearnedProposal) {
    out.fd_theta = fd_over(tensor_refs(*proposal));
    out.fd_psi = fd_over(tensor_refs(model));
    out.theta_rel_gap = detail::rel_vec_gap(out.analytic.theta, out.fd_theta);
    out.psi_rel_gap = detail::rel_vec_gap(out.analytic.psi, out.fd_psi);
  } else {
    // theta and psi both live in the model; the finite difference sees their sum
    out.fd_psi = fd_over(tensor_refs(model));
    out.fd_theta = out.fd_psi;
    const Vec total = out.analytic.theta + out.analytic.psi;
    out.theta_rel_gap = detail::rel_vec_gap(total, out.fd_psi);
    out.psi_rel_gap = out.theta_rel_gap;
  }
  return out;
}

/// Cross-checked exact gradient; a disagreement between the two routes is an
/// implementation bug and throws.
inline ThetaPsiGrad exact_bound_grad(SbnModel& model, SbnProposal* proposal,
                                     const Centering* center, ScoringMode mode, const BitVec& x,
                                     const BitVec* ctx, int K, const OracleBudget& budget = {},
                                     double fd_step = 1e-5, double fd_rel_tol = 1e-5) {
  GradCrossCheck both = exact_bound_grad_both(model, proposal, center, mode, x, ctx, K, budget,
                                              fd_step);
  if (!(both.theta_rel_gap <= fd_rel_tol) || !(both.psi_rel_gap <= fd_rel_tol))
    throw OracleError("analytic and finite-difference gradients disagree");
  return both.analytic;
}

struct EstimatorMoments {
  Vec mean;
  Vec var;  // per coordinate
  double var_sum() const { return var.sum(); }
};

/// Exact first and second moments of a theta estimator over the distribution
/// of K-tuples. The estimator is evaluated through the same coefficient path
/// the training code uses.
inline EstimatorMoments estimator_moments(const ExhaustiveTable& t, EstimatorKind kind, int K,
                                          MeanKind mean_kind = MeanKind::Geometric,
                                          const BaselineVals* baselines = nullptr,
                                          const OracleBudget& budget = {}) {
  if (kind == EstimatorKind::RwsSleep)
    throw std::invalid_argument("sleep moments are over model samples, not tuples");
  check_tuple_budget(t.n(), K, budget);
  EstimatorMoments out;
  out.mean = Vec::Zero(t.theta_dim());
  out.var = Vec::Zero(t.theta_dim());
  Vec l(K);
  Vec g(t.theta_dim());
  for_each_tuple(t.n(), K, [&](const std::vector<int>& idx) {
    double logp = 0.0;
    for (int j = 0; j < K; ++j) {
      logp += t.logq()[idx[static_cast<std::size_t>(j)]];
      l[j] = t.logf()[idx[static_cast<std::size_t>(j)]];
    }
    const double p = std::exp(logp);
    const ThetaCoeffs c = theta_coeffs(kind, l, mean_kind, baselines);
    g.setZero();
    for (int j = 0; j < K; ++j) {
      const int cj = idx[static_cast<std::size_t>(j)];
      g += c.alpha[j] * t.dlogq_theta()[static_cast<std::size_t>(cj)];
      if (!t.dlogf_theta().empty()) g += c.beta[j] * t.dlogf_theta()[static_cast<std::size_t>(cj)];
    }
    out.mean += p * g;
    out.var += p * g.cwiseProduct(g);
  });
  out.var -= out.mean.cwiseProduct(out.mean);
  return out;
}

/// Exact moments of the psi (model-parameter) estimator over K-tuples.
inline EstimatorMoments model_estimator_moments(const ExhaustiveTable& t, int K,
                                                const OracleBudget& budget = {}) {
  check_tuple_budget(t.n(), K, budget);
  EstimatorMoments out;
  out.mean = Vec::Zero(t.psi_dim());
  out.var = Vec::Zero(t.psi_dim());
  Vec l(K);
  Vec g(t.psi_dim());
  for_each_tuple(t.n(), K, [&](const std::vector<int>& idx) {
    double logp = 0.0;
    for (int j = 0; j < K; ++j) {
      logp += t.logq()[idx[static_cast<std::size_t>(j)]];
      l[j] = t.logf()[idx[static_cast<std::size_t>(j)]];
    }
    const double p = std::exp(logp);
    const Vec w = softmax_from_logs(l);
    g.setZero();
    for (int j = 0; j < K; ++j)
      g += w[j] * t.dlogf_psi()[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])];
    out.mean += p * g;
    out.var += p * g.cwiseProduct(g);
  });
  out.var -= out.mean.cwiseProduct(out.mean);
  return out;
}

/// The K -> infinity target of the wake update: posterior-weighted score
/// gradients of the proposal.
inline Vec exact_wake_target(const ExhaustiveTable& t) {
  const Vec post = t.posterior();
  Vec g = Vec::Zero(t.theta_dim());
  for (int i = 0; i < t.n(); ++i) g += post[i] * t.dlogq_theta()[static_cast<std::size_t>(i)];
  return g;
}

/// Exact expectation and per-coordinate variance of the sleep update over
/// the model's own (x, h) distribution.
inline EstimatorMoments sleep_moments(const SbnModel& model, const ProposalEval& q,
                                      const BitVec* ctx = nullptr,
                                      const OracleBudget& budget = {}) {
  const auto stacks = enumerate_stacks(model, budget);
  const int obs_dim = model.obs_dim();
  if (obs_dim >= 63 || (std::size_t(1) << obs_dim) > budget.max_configs)
    throw OracleError("observation enumeration exceeds the oracle budget");
  EstimatorMoments out;
  bool first = true;
  for (const auto& x : enumerate_bitvecs(obs_dim)) {
    for (const auto& h : stacks) {
      const double p = std::exp(log_joint(model, x, h, ctx));
      NetGrad g = zero_grad(q.proposal());
      q.accumulate_grad(x, h, ctx, 1.0, g);
      const Vec flat = flatten(g);
      if (first) {
        out.mean = Vec::Zero(flat.size());
        out.var = Vec::Zero(flat.size());
        first = false;
      }
      out.mean += p * flat;
      out.var += p * flat.cwiseProduct(flat);
    }
  }
  out.var -= out.mean.cwiseProduct(out.mean);
  return out;
}

/// Builds the exact posterior as a reverse chain proposal. Valid for models
/// whose latent layers all have a single unit: the posterior is then Markov
/// along the reversed chain and each conditional is a Bernoulli with a logit
/// affine in x, so one proposal is exact for every observation.
inline SbnProposal reverse_chain_posterior_proposal(const SbnModel& model,
                                                    const BitVec* ctx = nullptr,
                                                    const OracleBudget& budget = {}) {
  check_context(model, ctx);
  const int L = model.n_latent_layers();
  std::vector<int> sizes;
  for (int i = 0; i < L; ++i) {
    if (model.latent_size(i) != 1)
      throw std::invalid_argument("posterior chain construction needs single-unit layers");
    sizes.push_back(1);
  }
  const int obs_dim = model.obs_dim();
  const auto stacks = enumerate_stacks(model, budget);

  // joint prior over the 2^L stacks (conditioned on ctx when present)
  Vec log_prior_probs(static_cast<Eigen::Index>(stacks.size()));
  for (std::size_t i = 0; i < stacks.size(); ++i)
    log_prior_probs[static_cast<Eigen::Index>(i)] = log_prior(model, stacks[i], ctx);
  const Vec prior_probs = log_prior_probs.array().exp();

  auto bit_of = [&](std::size_t stack_idx, int layer) {
    return stacks[stack_idx].h[static_cast<std::size_t>(layer)][0] != 0;
  };
  auto marginal2 = [&](int layer_a, bool va, int layer_b, bool vb) {
    double s = 0.0;
    for (std::size_t i = 0; i < stacks.size(); ++i)
      if (bit_of(i, layer_a) == va && bit_of(i, layer_b) == vb) s += prior_probs[static_cast<Eigen::Index>(i)];
    return s;
  };
  auto marginal1 = [&](int layer, bool v) {
    double s = 0.0;
    for (std::size_t i = 0; i < stacks.size(); ++i)
      if (bit_of(i, layer) == v) s += prior_probs[static_cast<Eigen::Index>(i)];
    return s;
  };

  SbnProposal p = make_proposal_from_observation(sizes, obs_dim);
  if (model.conditional()) {
    // context effects are baked into the biases for the given fixed context
    p.context_dim = model.context_dim;
    for (auto& layer : p.layers) layer.Wc = Mat::Zero(layer.units(), model.context_dim);
  }

  // bottom layer: logit P(h_bottom = 1 | x) = C + sum_d x_d (d1 - d0) + sum_d d0
  {
    const int bottom = L - 1;
    LatentStack h1, h0;
    h1.h.resize(static_cast<std::size_t>(L));
    h0.h.resize(static_cast<std::size_t>(L));
    for (int i = 0; i < L; ++i) {
      h1.h[static_cast<std::size_t>(i)] = BitVec{static_cast<std::uint8_t>(i == bottom ? 1 : 0)};
      h0.h[static_cast<std::size_t>(i)] = BitVec{0};
    }
    const Vec a1 = obs_layer_logits(model, h1, ctx);
    const Vec a0 = obs_layer_logits(model, h0, ctx);
    double base = std::log(marginal1(bottom, true)) - std::log(marginal1(bottom, false));
    Layer& layer = p.layers[0];
    for (int d = 0; d < obs_dim; ++d) {
      const double d1 = log_sigmoid(a1[d]) - log_sigmoid(a0[d]);
      const double d0 = log_sigmoid(-a1[d]) - log_sigmoid(-a0[d]);
      layer.Wx(0, d) = d1 - d0;
      base += d0;
    }
    layer.b[0] = base;
  }

  // upper layers: logit P(h_s = 1 | h_{s+1}); independent of x given the parent
  for (int k = 1; k < L; ++k) {
    const int s = L - 1 - k;       // emitted layer
    const int parent = s + 1;      // previously emitted layer
    auto cond_logit = [&](bool parent_value) {
      const double p1 = marginal2(s, true, parent, parent_value);
      const double p0 = marginal2(s, false, parent, parent_value);
      return std::log(p1) - std::log(p0);
    };
    const double logit0 = cond_logit(false);
    const double logit1 = cond_logit(true);
    Layer& layer = p.layers[static_cast<std::size_t>(k)];
    layer.b[0] = logit0;
    layer.W(0, 0) = logit1 - logit0;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Built-in verification suite (backs the oracle-check command).
// ---------------------------------------------------------------------------

struct OracleCheckRow {
  std::string name;
  double expected;
  double actual;
  double abs_err;
  double rel_err;
  bool pass;
};

struct OracleCheckConfig {
  std::uint64_t seed = 1;
  int instances = 6;
  OracleBudget budget;
};

namespace detail {

inline OracleCheckRow eq_row(const std::string& name, double expected, double actual,
                             double rel_tol, double abs_tol = 0.0) {
  OracleCheckRow r;
  r.name = name;
  r.expected = expected;
  r.actual = actual;
  r.abs_err = std::abs(expected - actual);
  r.rel_err = r.abs_err / std::max(std::abs(expected), 1e-12);
  r.pass = r.abs_err <= abs_tol || r.rel_err <= rel_tol;
  return r;
}

inline OracleCheckRow ge_row(const std::string& name, double value, double floor) {
  OracleCheckRow r;
  r.name = name;
  r.expected = floor;
  r.actual = value;
  r.abs_err = std::max(0.0, floor - value);
  r.rel_err = r.abs_err;
  r.pass = value >= floor;
  return r;
}

inline OracleCheckRow vec_row(const std::string& name, const Vec& actual, const Vec& expected,
                              double rel_tol) {
  OracleCheckRow r;
  r.name = name;
  r.expected = expected.norm();
  r.actual = actual.norm();
  r.abs_err = (actual - expected).norm();
  r.rel_err = r.abs_err / std::max(expected.norm(), 1e-12);
  r.pass = r.rel_err <= rel_tol;
  return r;
}

struct OracleToy {
  SbnModel model;
  SbnProposal proposal;
  BitVec x;
  std::optional<BitVec> ctx;
  ScoringMode mode = ScoringMode::LearnedProposal;
  std::vector<int> sizes;

  const BitVec* ctx_ptr() const { return ctx.has_value() ? &*ctx : nullptr; }
};

inline OracleToy random_oracle_toy(std::uint64_t seed, bool conditional, bool prior_mode) {
  Rng rng(seed);
  OracleToy t;
  const int n_layers = 1 + static_cast<int>(rng.next_u64() % 2);
  for (int i = 0; i < n_layers; ++i)
    t.sizes.push_back(1 + static_cast<int>(rng.next_u64() % 2));
  const int obs_dim = 2 + static_cast<int>(rng.next_u64() % 3);
  const int ctx_dim = conditional ? 2 : 0;
  t.model = make_model(t.sizes, obs_dim, ctx_dim);
  auto fill = [&](Mat& M) {
    for (Eigen::Index c = 0; c < M.cols(); ++c)
      for (Eigen::Index r = 0; r < M.rows(); ++r) M(r, c) = 1.2 * rng.normal();
  };
  for (auto& L : t.model.prior) {
    fill(L.W);
    fill(L.Wc);
    for (Eigen::Index i = 0; i < L.b.size(); ++i) L.b[i] = rng.normal();
  }
  fill(t.model.obs.W);
  fill(t.model.obs.Wc);
  for (Eigen::Index i = 0; i < t.model.obs.b.size(); ++i) t.model.obs.b[i] = rng.normal();

  if (prior_mode) {
    t.mode = ScoringMode::PriorProposal;
  } else {
    t.proposal = conditional ? make_prior_shaped_proposal(t.sizes, obs_dim, ctx_dim)
                             : make_proposal_from_observation(t.sizes, obs_dim);
    for (auto& L : t.proposal.layers) {
      fill(L.W);
      fill(L.Wc);
      fill(L.Wx);
      for (Eigen::Index i = 0; i < L.b.size(); ++i) L.b[i] = rng.normal();
    }
  }
  t.x.resize(static_cast<std::size_t>(obs_dim));
  for (auto& bit : t.x) bit = rng.bernoulli(0.5) ? 1 : 0;
  if (conditional) {
    BitVec c(static_cast<std::size_t>(ctx_dim));
    for (auto& bit : c) bit = rng.bernoulli(0.5) ? 1 : 0;
    t.ctx = c;
  }
  return t;
}

}  // namespace detail

/// Runs the built-in exact-enumeration checks and reports one row per check.
inline std::vector<OracleCheckRow> run_oracle_checks(const OracleCheckConfig& cfg = {}) {
  using detail::eq_row;
  using detail::ge_row;
  using detail::vec_row;
  std::vector<OracleCheckRow> rows;

  for (int inst = 0; inst < cfg.instances; ++inst) {
    const bool conditional = (inst % 3 == 2);
    const bool prior_mode = (inst % 3 == 1);
    detail::OracleToy t =
        detail::random_oracle_toy(cfg.seed * 1000 + static_cast<std::uint64_t>(inst),
                                  conditional, prior_mode);
    const std::string tag = "inst" + std::to_string(inst);
    ProposalEval q(t.proposal);
    ExhaustiveTable table(t.model, t.mode == ScoringMode::LearnedProposal ? &q : nullptr, t.mode,
                          t.x, t.ctx_ptr(), cfg.budget);

    const double log_px = exact_log_likelihood(t.model, t.x, t.ctx_ptr(), cfg.budget);

    // tightness ladder and Jensen slack
    double prev = 0.0;
    for (int K = 1; K <= 4; ++K) {
      const double LK = exact_bound(table, K, cfg.budget);
      if (K > 1) rows.push_back(ge_row(tag + ".monotone.K" + std::to_string(K), LK - prev, -1e-9));
      rows.push_back(ge_row(tag + ".jensen.K" + std::to_string(K), log_px - LK, -1e-9));
      prev = LK;
    }

    // K = 1 reduces to the classical single-sample bound
    double elbo = 0.0;
    for (int i = 0; i < table.n(); ++i) elbo += std::exp(table.logq()[i]) * table.logf()[i];
    rows.push_back(eq_row(tag + ".elbo.K1", elbo, exact_bound(table, 1, cfg.budget), 1e-10, 1e-12));

    // analytic tuple integrand vs finite differences of the exact bound
    for (int K : {2, 3}) {
      GradCrossCheck both = exact_bound_grad_both(
          t.model, t.mode == ScoringMode::LearnedProposal ? &t.proposal : nullptr, nullptr,
          t.mode, t.x, t.ctx_ptr(), K, cfg.budget);
      rows.push_back(ge_row(tag + ".fdcross.theta.K" + std::to_string(K),
                            1e-5 - both.theta_rel_gap, 0.0));
      rows.push_back(ge_row(tag + ".fdcross.psi.K" + std::to_string(K),
                            1e-5 - both.psi_rel_gap, 0.0));

      // unbiasedness of the theta estimators and the psi estimator
      const BaselineVals bl{0.31, -0.17};
      const EstimatorMoments naive = estimator_moments(table, EstimatorKind::Naive, K,
                                                       MeanKind::Geometric, nullptr, cfg.budget);
      const EstimatorMoments nvil = estimator_moments(table, EstimatorKind::Nvil, K,
                                                      MeanKind::Geometric, &bl, cfg.budget);
      const EstimatorMoments vimco = estimator_moments(table, EstimatorKind::Vimco, K,
                                                       MeanKind::Geometric, nullptr, cfg.budget);
      const EstimatorMoments psi = model_estimator_moments(table, K, cfg.budget);
      rows.push_back(vec_row(tag + ".unbiased.naive.K" + std::to_string(K), naive.mean,
                             both.analytic.theta, 1e-6));
      rows.push_back(vec_row(tag + ".unbiased.nvil.K" + std::to_string(K), nvil.mean,
                             both.analytic.theta, 1e-6));
      rows.push_back(vec_row(tag + ".unbiased.vimco.K" + std::to_string(K), vimco.mean,
                             both.analytic.theta, 1e-6));
      rows.push_back(vec_row(tag + ".unbiased.model.K" + std::to_string(K), psi.mean,
                             both.analytic.psi, 1e-6));
      rows.push_back(vec_row(tag + ".vimco-naive-mean.K" + std::to_string(K), vimco.mean,
                             naive.mean, 1e-9));
    }
  }

  // zero-variance behavior with the posterior as the proposal
  {
    Rng rng(cfg.seed + 99);
    SbnModel m = make_model({1, 1}, 4);
    for (auto& L : m.prior) {
      for (Eigen::Index c = 0; c < L.W.cols(); ++c)
        for (Eigen::Index r = 0; r < L.W.rows(); ++r) L.W(r, c) = 1.5 * rng.normal();
      for (Eigen::Index i = 0; i < L.b.size(); ++i) L.b[i] = rng.normal();
    }
    for (Eigen::Index c = 0; c < m.obs.W.cols(); ++c)
      for (Eigen::Index r = 0; r < m.obs.W.rows(); ++r) m.obs.W(r, c) = 1.5 * rng.normal();
    for (Eigen::Index i = 0; i < m.obs.b.size(); ++i) m.obs.b[i] = rng.normal();
    BitVec x{1, 0, 1, 1};
    SbnProposal post = reverse_chain_posterior_proposal(m, nullptr, cfg.budget);
    ProposalEval q(post);
    ExhaustiveTable table(m, &q, ScoringMode::LearnedProposal, x, nullptr, cfg.budget);
    const double log_px = exact_log_likelihood(m, x, nullptr, cfg.budget);
    for (int K = 1; K <= 3; ++K)
      rows.push_back(eq_row("posterior.bound.K" + std::to_string(K), log_px,
                            exact_bound(table, K, cfg.budget), 1e-9, 1e-9));
  }

  // the wake update is biased for the bound gradient at small K
  {
    detail::OracleToy t = detail::random_oracle_toy(cfg.seed * 7919 + 5, false, false);
    ProposalEval q(t.proposal);
    ExhaustiveTable table(t.model, &q, ScoringMode::LearnedProposal, t.x, t.ctx_ptr(),
                          cfg.budget);
    const ThetaPsiGrad exact = exact_bound_grad_analytic(table, 2, cfg.budget);
    const EstimatorMoments wake = estimator_moments(table, EstimatorKind::RwsWake, 2,
                                                    MeanKind::Geometric, nullptr, cfg.budget);
    const double gap = (wake.mean - exact.theta).norm() / std::max(exact.theta.norm(), 1e-12);
    rows.push_back(ge_row("wake.bias.K2", gap, 1e-3));
  }

  return rows;
}

}  // namespace vimco
