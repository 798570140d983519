// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <vector>

#include "vimco/math.hpp"
#include "vimco/sbn.hpp"

namespace vimco {

enum class ScoringMode {
  LearnedProposal,  // log f = log P(x,h|c) - log Q(h|x,c)
  PriorProposal     // samples drawn from P(h|c); log f = log P(x|h,c)
};

enum class MeanKind { Geometric, Arithmetic, Learned };

/// K scored latent stacks for one observation.
struct SampleSet {
  std::vector<LatentStack> stacks;
  Vec l;  // log f(x, h^i)
  BitVec x;
  std::optional<BitVec> ctx;
  ScoringMode mode = ScoringMode::LearnedProposal;

  int K() const { return static_cast<int>(l.size()); }
};

/// Multi-sample stochastic lower bound: log_sum_exp(l) - log K.
inline double bound(const SampleSet& s) {
  return log_sum_exp(s.l) - std::log(static_cast<double>(s.K()));
}

/// Normalized responsibilities of the K samples.
inline Vec importance_weights(const SampleSet& s) { return softmax_from_logs(s.l); }

namespace detail {

// Mean of the held-out log scores, anchored on one of them so that an
// all-equal set reproduces the common value bit-exactly.
inline double held_out_log_mean(const Vec& l, int j, MeanKind kind, double predicted_log_f) {
  const int K = static_cast<int>(l.size());
  switch (kind) {
    case MeanKind::Geometric: {
      const int anchor = (j == 0) ? 1 : 0;
      const double a = l[anchor];
      double acc = 0.0;
      for (int i = 0; i < K; ++i)
        if (i != j) acc += l[i] - a;
      return a + acc / static_cast<double>(K - 1);
    }
    case MeanKind::Arithmetic: {
      double m = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < K; ++i)
        if (i != j) m = std::max(m, l[i]);
      double s = 0.0;
      for (int i = 0; i < K; ++i)
        if (i != j) s += std::exp(l[i] - m);
      return m + std::log(s / static_cast<double>(K - 1));
    }
    case MeanKind::Learned:
      return predicted_log_f;
  }
  throw std::logic_error("unknown mean kind");
}

}  // namespace detail

/// Per-sample learning signals: bound(l) minus the bound with l[j] replaced
/// by an estimate built from the other K-1 scores (or from a learned
/// predictor). Everything stays in the log domain.
inline Vec local_signals(const Vec& l, MeanKind kind = MeanKind::Geometric,
                         std::optional<double> predicted_log_f = std::nullopt) {
  const int K = static_cast<int>(l.size());
  if (K < 2) throw std::invalid_argument("local signals need K >= 2");
  if (kind == MeanKind::Learned && !predicted_log_f.has_value())
    throw std::invalid_argument("learned mean kind needs a predicted log f value");
  const double lhat = log_sum_exp(l) - std::log(static_cast<double>(K));
  Vec out(K);
  Vec scratch = l;
  for (int j = 0; j < K; ++j) {
    const double keep = scratch[j];
    scratch[j] = detail::held_out_log_mean(l, j, kind, predicted_log_f.value_or(0.0));
    out[j] = lhat - (log_sum_exp(scratch) - std::log(static_cast<double>(K)));
    scratch[j] = keep;
  }
  return out;
}

inline Vec local_signals(const SampleSet& s, MeanKind kind = MeanKind::Geometric,
                         std::optional<double> predicted_log_f = std::nullopt) {
  return local_signals(s.l, kind, predicted_log_f);
}

struct BoundReport {
  double lhat;
  Vec w;
  Vec local;  // empty for K == 1
  MeanKind mean_kind;
};

inline BoundReport make_report(const SampleSet& s, MeanKind kind = MeanKind::Geometric,
                               std::optional<double> predicted_log_f = std::nullopt) {
  BoundReport r;
  r.lhat = bound(s);
  r.w = importance_weights(s);
  r.local = (s.K() >= 2) ? local_signals(s, kind, predicted_log_f) : Vec();
  r.mean_kind = kind;
  return r;
}

/// Draws K stacks from the learned proposal and scores them.
inline SampleSet score_samples(const SbnModel& model, const ProposalEval& q, const BitVec& x,
                               int K, Rng& rng, const BitVec* ctx = nullptr) {
  if (K < 1) throw std::invalid_argument("score_samples: K must be >= 1");
  SampleSet s;
  s.mode = ScoringMode::LearnedProposal;
  s.x = x;
  if (ctx != nullptr) s.ctx = *ctx;
  s.stacks.reserve(static_cast<std::size_t>(K));
  s.l.resize(K);
  for (int i = 0; i < K; ++i) {
    auto draw = q.sample(x, rng, ctx);
    s.l[i] = log_joint(model, x, draw.h, ctx) - draw.log_q;
    s.stacks.push_back(std::move(draw.h));
  }
  check_finite(s.l, "sample log scores");
  return s;
}

/// Draws K stacks from the model prior and scores the conditional likelihood.
inline SampleSet score_samples_prior(const SbnModel& model, const BitVec& x, int K, Rng& rng,
                                     const BitVec* ctx = nullptr) {
  if (K < 1) throw std::invalid_argument("score_samples: K must be >= 1");
  SampleSet s;
  s.mode = ScoringMode::PriorProposal;
  s.x = x;
  if (ctx != nullptr) s.ctx = *ctx;
  s.stacks.reserve(static_cast<std::size_t>(K));
  s.l.resize(K);
  for (int i = 0; i < K; ++i) {
    PriorSample draw = sample_prior(model, rng, ctx);
    s.l[i] = log_obs(model, x, draw.h, ctx);
    s.stacks.push_back(std::move(draw.h));
  }
  check_finite(s.l, "sample log scores");
  return s;
}

/// Mode-dispatching form; `q` may be null in prior-proposal mode.
inline SampleSet score_samples(const SbnModel& model, const ProposalEval* q, const BitVec& x,
                               int K, Rng& rng, ScoringMode mode, const BitVec* ctx = nullptr) {
  if (mode == ScoringMode::PriorProposal) return score_samples_prior(model, x, K, rng, ctx);
  if (q == nullptr) throw std::invalid_argument("learned-proposal scoring needs a proposal");
  return score_samples(model, *q, x, K, rng, ctx);
}

}  // namespace vimco
