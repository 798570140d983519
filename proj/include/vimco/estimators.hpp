// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>

#include "vimco/objective.hpp"
#include "vimco/sbn.hpp"

namespace vimco {

enum class EstimatorKind { Naive, Nvil, Vimco, RwsWake, RwsSleep };

inline const char* to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::Naive: return "naive";
    case EstimatorKind::Nvil: return "nvil";
    case EstimatorKind::Vimco: return "vimco";
    case EstimatorKind::RwsWake: return "rws-wake";
    case EstimatorKind::RwsSleep: return "rws-sleep";
  }
  return "?";
}

inline EstimatorKind estimator_from_string(const std::string& s) {
  if (s == "naive") return EstimatorKind::Naive;
  if (s == "nvil") return EstimatorKind::Nvil;
  if (s == "vimco") return EstimatorKind::Vimco;
  if (s == "rws" || s == "rws-wake") return EstimatorKind::RwsWake;
  if (s == "rws-sleep") return EstimatorKind::RwsSleep;
  throw std::invalid_argument("unknown estimator: " + s);
}

/// Fixed baselines subtracted from the global learning signal.
struct BaselineVals {
  double b = 0.0;
  double bx = 0.0;
};

/// Per-sample coefficients of a score-function estimate:
///   theta-estimate = sum_j alpha[j] dlogQ_j + sum_j beta[j] dlogf_theta_j.
/// In learned-proposal mode dlogf_theta = -dlogQ, so the fused coefficient
/// on dlogQ_j is alpha[j] - beta[j]; in prior-proposal mode dlogf has no
/// theta dependence and beta drops out.
struct ThetaCoeffs {
  Vec alpha;
  Vec beta;
};

inline ThetaCoeffs theta_coeffs(EstimatorKind kind, const Vec& l,
                                MeanKind mean_kind = MeanKind::Geometric,
                                const BaselineVals* baselines = nullptr,
                                std::optional<double> predicted_log_f = std::nullopt) {
  const int K = static_cast<int>(l.size());
  if (K < 1) throw std::invalid_argument("estimator needs K >= 1");
  ThetaCoeffs c;
  const Vec w = softmax_from_logs(l);
  switch (kind) {
    case EstimatorKind::Naive: {
      const double lhat = log_sum_exp(l) - std::log(static_cast<double>(K));
      c.alpha = Vec::Constant(K, lhat);
      c.beta = w;
      break;
    }
    case EstimatorKind::Nvil: {
      if (baselines == nullptr) throw std::invalid_argument("nvil estimator needs baselines");
      const double lhat = log_sum_exp(l) - std::log(static_cast<double>(K));
      c.alpha = Vec::Constant(K, lhat - baselines->b - baselines->bx);
      c.beta = w;
      break;
    }
    case EstimatorKind::Vimco: {
      if (K < 2) throw std::invalid_argument("vimco estimator needs K >= 2");
      c.alpha = local_signals(l, mean_kind, predicted_log_f);
      c.beta = w;
      break;
    }
    case EstimatorKind::RwsWake: {
      c.alpha = w;
      c.beta = Vec::Zero(K);
      break;
    }
    case EstimatorKind::RwsSleep:
      throw std::invalid_argument("sleep updates are not computed from a sample set");
  }
  return c;
}

inline ThetaCoeffs theta_coeffs(EstimatorKind kind, const SampleSet& s,
                                MeanKind mean_kind = MeanKind::Geometric,
                                const BaselineVals* baselines = nullptr,
                                std::optional<double> predicted_log_f = std::nullopt) {
  return theta_coeffs(kind, s.l, mean_kind, baselines, predicted_log_f);
}

// ---------------------------------------------------------------------------
// Flat vector space (used by the enumeration oracle).
// ---------------------------------------------------------------------------

/// Literal two-term assembly. Pass an empty dlogf_theta span when log f does
/// not depend on theta (prior-proposal mode).
inline Vec theta_estimate_flat(const ThetaCoeffs& c, std::span<const Vec> dlogq,
                               std::span<const Vec> dlogf_theta) {
  const int K = static_cast<int>(c.alpha.size());
  if (static_cast<int>(dlogq.size()) != K)
    throw std::invalid_argument("per-sample gradient count mismatch");
  if (!dlogf_theta.empty() && static_cast<int>(dlogf_theta.size()) != K)
    throw std::invalid_argument("per-sample gradient count mismatch");
  Vec g = Vec::Zero(dlogq[0].size());
  for (int j = 0; j < K; ++j) g += c.alpha[j] * dlogq[static_cast<std::size_t>(j)];
  if (!dlogf_theta.empty())
    for (int j = 0; j < K; ++j) g += c.beta[j] * dlogf_theta[static_cast<std::size_t>(j)];
  return g;
}

/// sum_j w[j] * dlogf_psi[j]; the convex combination that estimates the
/// model-parameter gradient.
inline Vec model_estimate_flat(const Vec& w, std::span<const Vec> dlogf_psi) {
  if (static_cast<int>(dlogf_psi.size()) != w.size())
    throw std::invalid_argument("per-sample gradient count mismatch");
  Vec g = Vec::Zero(dlogf_psi[0].size());
  for (Eigen::Index j = 0; j < w.size(); ++j) g += w[j] * dlogf_psi[static_cast<std::size_t>(j)];
  return g;
}

// ---------------------------------------------------------------------------
// Network-shaped estimates assembled from per-sample gradients.
// ---------------------------------------------------------------------------

namespace detail {
inline NetGrad weighted_sum(std::span<const NetGrad> grads, const Vec& coeffs) {
  if (static_cast<int>(grads.size()) != coeffs.size())
    throw std::invalid_argument("per-sample gradient count mismatch");
  NetGrad out = grads[0];
  out.scale(coeffs[0]);
  for (Eigen::Index j = 1; j < coeffs.size(); ++j)
    out.add_scaled(grads[static_cast<std::size_t>(j)], coeffs[j]);
  return out;
}
}  // namespace detail

/// Model-parameter estimate: sum_j w_j dlogf_psi[j].
inline NetGrad model_grad(const SampleSet& s, std::span<const NetGrad> dlogf_psi) {
  return detail::weighted_sum(dlogf_psi, importance_weights(s));
}

/// Literal two-term theta estimate for any coefficient set; dlogf_theta may
/// be empty in prior-proposal mode.
inline NetGrad theta_grad(const ThetaCoeffs& c, std::span<const NetGrad> dlogq,
                          std::span<const NetGrad> dlogf_theta) {
  NetGrad out = detail::weighted_sum(dlogq, c.alpha);
  if (!dlogf_theta.empty()) out.add_scaled(detail::weighted_sum(dlogf_theta, c.beta), 1.0);
  return out;
}

/// Fused fast path for learned-proposal mode, where dlogf_theta = -dlogq:
/// a single pass with coefficients alpha - beta.
inline NetGrad fused_theta_grad(const ThetaCoeffs& c, std::span<const NetGrad> dlogq) {
  return detail::weighted_sum(dlogq, c.alpha - c.beta);
}

inline NetGrad naive_grad(const SampleSet& s, std::span<const NetGrad> dlogq,
                          std::span<const NetGrad> dlogf_theta) {
  return theta_grad(theta_coeffs(EstimatorKind::Naive, s), dlogq, dlogf_theta);
}

inline NetGrad nvil_grad(const SampleSet& s, std::span<const NetGrad> dlogq,
                         std::span<const NetGrad> dlogf_theta, const BaselineVals& baselines) {
  return theta_grad(theta_coeffs(EstimatorKind::Nvil, s, MeanKind::Geometric, &baselines), dlogq,
                    dlogf_theta);
}

inline NetGrad vimco_grad(const SampleSet& s, std::span<const NetGrad> dlogq,
                          std::span<const NetGrad> dlogf_theta,
                          MeanKind mean_kind = MeanKind::Geometric,
                          std::optional<double> predicted_log_f = std::nullopt) {
  return theta_grad(theta_coeffs(EstimatorKind::Vimco, s, mean_kind, nullptr, predicted_log_f),
                    dlogq, dlogf_theta);
}

inline NetGrad rws_wake_grad(const SampleSet& s, std::span<const NetGrad> dlogq) {
  return detail::weighted_sum(dlogq, importance_weights(s));
}

/// Sleep update: draw (x, h) from the generative model and push the proposal
/// toward reproducing h from x.
inline NetGrad rws_sleep_grad(const SbnModel& model, const ProposalEval& q, Rng& rng,
                              const BitVec* ctx = nullptr) {
  PriorSample dream = sample_prior(model, rng, ctx);
  BitVec x(static_cast<std::size_t>(dream.obs_means.size()));
  for (Eigen::Index i = 0; i < dream.obs_means.size(); ++i)
    x[static_cast<std::size_t>(i)] = rng.bernoulli(dream.obs_means[i]) ? 1 : 0;
  NetGrad g = zero_grad(q.proposal());
  q.accumulate_grad(x, dream.h, ctx, 1.0, g);
  return g;
}

}  // namespace vimco
