// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vimco/adam.hpp"
#include "vimco/baselines.hpp"
#include "vimco/checkpoint.hpp"
#include "vimco/data.hpp"
#include "vimco/estimators.hpp"
#include "vimco/objective.hpp"
#include "vimco/sbn.hpp"

namespace vimco {

enum class TrainMode { Generative, SopPrior, SopLearned };

inline const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::Generative: return "generative";
    case TrainMode::SopPrior: return "sop-prior";
    case TrainMode::SopLearned: return "sop-learned";
  }
  return "?";
}

inline TrainMode train_mode_from_string(const std::string& s) {
  if (s == "generative") return TrainMode::Generative;
  if (s == "sop-prior") return TrainMode::SopPrior;
  if (s == "sop-learned") return TrainMode::SopLearned;
  throw std::invalid_argument("unknown mode: " + s);
}

inline const char* to_string(MeanKind m) {
  switch (m) {
    case MeanKind::Geometric: return "geometric";
    case MeanKind::Arithmetic: return "arithmetic";
    case MeanKind::Learned: return "learned";
  }
  return "?";
}

inline MeanKind mean_kind_from_string(const std::string& s) {
  if (s == "geometric") return MeanKind::Geometric;
  if (s == "arithmetic") return MeanKind::Arithmetic;
  if (s == "learned") return MeanKind::Learned;
  throw std::invalid_argument("unknown mean kind: " + s);
}

struct TrainConfig {
  EstimatorKind estimator = EstimatorKind::Vimco;
  int k = 5;
  double lr = 1e-3;
  int minibatch = 24;
  int epochs = 10;
  std::uint32_t seed = 1;
  MeanKind mean_kind = MeanKind::Geometric;
  TrainMode mode = TrainMode::Generative;
  std::vector<int> latent_sizes = {200};
  std::vector<double> sweep;  // learning rates; empty means a single run at lr
  int eval_every = 0;         // steps between validation scores; 0 = end of each epoch
  int eval_draws = 1;         // extra sample-set draws per case when scoring
  int log_every = 50;         // step cadence for training metrics rows
  bool init_obs_bias = true;
  bool normalize_signal = true;
  bool rws_sleep = false;  // add sleep updates alongside the wake update
  double baseline_lr = 0.0;  // 0 = follow lr

  ScoringMode scoring() const {
    return mode == TrainMode::SopPrior ? ScoringMode::PriorProposal
                                       : ScoringMode::LearnedProposal;
  }

  void validate() const {
    if (minibatch < 1) throw std::invalid_argument("minibatch size must be >= 1");
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    if (estimator == EstimatorKind::Vimco && k < 2)
      throw std::invalid_argument("the vimco estimator needs k >= 2");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (latent_sizes.empty()) throw std::invalid_argument("at least one latent layer is required");
    if (estimator == EstimatorKind::RwsSleep && mode == TrainMode::SopPrior)
      throw std::invalid_argument("sleep updates need a learned proposal");
    if (rws_sleep && mode == TrainMode::SopPrior)
      throw std::invalid_argument("sleep updates need a learned proposal");
  }
};

/// EMA-smoothed root-mean-square of the per-update learning signal.
struct SignalMonitor {
  double decay = 0.99;
  double ema = 0.0;
  bool primed = false;

  void add(double batch_rms) {
    ema = primed ? decay * ema + (1.0 - decay) * batch_rms : batch_rms;
    primed = true;
  }
  double value() const { return ema; }
};

struct MetricRow {
  long step;
  int epoch;
  std::string split;
  std::string metric;
  double value;
};

struct MetricsLog {
  std::string estimator;
  int k = 0;
  double lr = 0.0;
  std::uint32_t seed = 0;
  std::vector<MetricRow> rows;

  void add(long step, int epoch, const std::string& split, const std::string& metric,
           double value) {
    rows.push_back({step, epoch, split, metric, value});
  }

  double max_value(const std::string& split, const std::string& metric) const {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& r : rows)
      if (r.split == split && r.metric == metric) best = std::max(best, r.value);
    return best;
  }

  void write_csv(std::ostream& out) const {
    out << "step,epoch,split,metric,value,k,estimator,lr,seed\n";
    char buf[64];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%.12g", r.value);
      out << r.step << ',' << r.epoch << ',' << r.split << ',' << r.metric << ',' << buf << ','
          << k << ',' << estimator << ',';
      std::snprintf(buf, sizeof(buf), "%.12g", lr);
      out << buf << ',' << seed << '\n';
    }
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    write_csv(out);
  }
};

// ---------------------------------------------------------------------------
// Split evaluation.
// ---------------------------------------------------------------------------

/// Mean multi-sample bound over a split; S independent sample-set draws per
/// case. Deterministic given the rng.
inline double eval_bound(const SbnModel& model, const ProposalEval* q, ScoringMode mode,
                         std::span<const BitVec> xs, std::span<const BitVec> ctxs, int K, int S,
                         Rng rng) {
  if (S < 1) throw std::invalid_argument("eval needs S >= 1");
  if (!ctxs.empty() && ctxs.size() != xs.size())
    throw std::invalid_argument("context/observation count mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const BitVec* ctx = ctxs.empty() ? nullptr : &ctxs[i];
    for (int s = 0; s < S; ++s) {
      Rng sub = rng.split(static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(s));
      acc += bound(score_samples(model, q, xs[i], K, sub, mode, ctx));
    }
  }
  return acc / (static_cast<double>(xs.size()) * S);
}

/// Mean negative log-likelihood estimate from S-sample importance-weighted
/// scores; an upper bound on the true NLL in expectation.
inline double eval_nll(const SbnModel& model, const ProposalEval* q, ScoringMode mode,
                       std::span<const BitVec> xs, std::span<const BitVec> ctxs, int S, Rng rng) {
  if (S < 1) throw std::invalid_argument("eval needs S >= 1");
  if (!ctxs.empty() && ctxs.size() != xs.size())
    throw std::invalid_argument("context/observation count mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const BitVec* ctx = ctxs.empty() ? nullptr : &ctxs[i];
    Rng sub = rng.split(static_cast<std::uint64_t>(i));
    acc += -bound(score_samples(model, q, xs[i], S, sub, mode, ctx));
  }
  return acc / static_cast<double>(xs.size());
}

// ---------------------------------------------------------------------------
// Checkpoint binding.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_layer(TensorArchive& arc, const std::string& prefix, const Layer& L) {
  if (L.W.size() > 0) arc.put_mat(prefix + ".W", L.W);
  if (L.Wc.size() > 0) arc.put_mat(prefix + ".Wc", L.Wc);
  if (L.Wx.size() > 0) arc.put_mat(prefix + ".Wx", L.Wx);
  arc.put_vec(prefix + ".b", L.b);
}

inline void get_layer(const TensorArchive& arc, const std::string& prefix, Layer& L) {
  if (L.W.size() > 0) L.W = arc.mat(prefix + ".W");
  if (L.Wc.size() > 0) L.Wc = arc.mat(prefix + ".Wc");
  if (L.Wx.size() > 0) L.Wx = arc.mat(prefix + ".Wx");
  L.b = arc.vec(prefix + ".b");
}

inline void put_adam(TensorArchive& arc, const std::string& prefix, const AdamState& s) {
  arc.put_scalar(prefix + ".t", static_cast<double>(s.t));
  for (std::size_t i = 0; i < s.m.size(); ++i) {
    arc.put_vec(prefix + ".m" + std::to_string(i), s.m[i]);
    arc.put_vec(prefix + ".v" + std::to_string(i), s.v[i]);
  }
}

inline void get_adam(const TensorArchive& arc, const std::string& prefix, AdamState& s) {
  s.t = static_cast<long long>(arc.scalar(prefix + ".t"));
  for (std::size_t i = 0; i < s.m.size(); ++i) {
    s.m[i] = arc.vec(prefix + ".m" + std::to_string(i));
    s.v[i] = arc.vec(prefix + ".v" + std::to_string(i));
  }
}

}  // namespace detail

/// Everything needed to evaluate or extend a trained model.
struct CheckpointContents {
  TrainMode mode = TrainMode::Generative;
  EstimatorKind estimator = EstimatorKind::Vimco;
  MeanKind mean_kind = MeanKind::Geometric;
  int k = 0;
  std::uint32_t seed = 0;
  long step = 0;
  double best_val_bound = 0.0;
  int rows = 0, cols = 0;
  std::vector<int> latent_sizes;
  SbnModel model;
  std::optional<SbnProposal> proposal;
  Centering centering;
};

inline CheckpointContents load_checkpoint(const std::string& path) {
  const TensorArchive arc = TensorArchive::load(path);
  CheckpointContents c;
  c.mode = static_cast<TrainMode>(static_cast<int>(arc.scalar("meta.mode")));
  c.estimator = static_cast<EstimatorKind>(static_cast<int>(arc.scalar("meta.estimator")));
  c.mean_kind = static_cast<MeanKind>(static_cast<int>(arc.scalar("meta.mean_kind")));
  c.k = static_cast<int>(arc.scalar("meta.k"));
  c.seed = static_cast<std::uint32_t>(arc.scalar("meta.seed"));
  c.step = static_cast<long>(arc.scalar("meta.step"));
  c.best_val_bound = arc.scalar("meta.best_val_bound");
  c.rows = static_cast<int>(arc.scalar("meta.rows"));
  c.cols = static_cast<int>(arc.scalar("meta.cols"));
  const Vec sizes = arc.vec("meta.latent_sizes");
  for (Eigen::Index i = 0; i < sizes.size(); ++i)
    c.latent_sizes.push_back(static_cast<int>(sizes[i]));
  const int obs_dim = static_cast<int>(arc.scalar("meta.obs_dim"));
  const int ctx_dim = static_cast<int>(arc.scalar("meta.context_dim"));

  c.model = make_model(c.latent_sizes, obs_dim, ctx_dim);
  for (int i = 0; i < c.model.n_latent_layers(); ++i)
    detail::get_layer(arc, "model.prior" + std::to_string(i),
                      c.model.prior[static_cast<std::size_t>(i)]);
  detail::get_layer(arc, "model.obs", c.model.obs);

  if (arc.has("meta.has_proposal") && arc.scalar("meta.has_proposal") != 0.0) {
    SbnProposal p = (c.mode == TrainMode::Generative)
                        ? make_proposal_from_observation(c.latent_sizes, obs_dim)
                        : make_prior_shaped_proposal(c.latent_sizes, obs_dim, ctx_dim);
    for (int i = 0; i < p.n_layers(); ++i)
      detail::get_layer(arc, "proposal.l" + std::to_string(i),
                        p.layers[static_cast<std::size_t>(i)]);
    c.proposal = std::move(p);
  }
  if (arc.has("data.obs_center")) c.centering.obs_mean = arc.vec("data.obs_center");
  if (arc.has("data.ctx_center")) c.centering.ctx_mean = arc.vec("data.ctx_center");
  return c;
}

// ---------------------------------------------------------------------------
// Trainer.
// ---------------------------------------------------------------------------

class Trainer {
 public:
  Trainer(TrainConfig cfg, const Dataset& data) : cfg_(cfg), root_(cfg.seed) {
    cfg_.validate();
    build_views(data);
    build_networks();
  }

  const TrainConfig& config() const { return cfg_; }
  const SbnModel& model() const { return model_; }
  SbnModel& model() { return model_; }
  const SbnProposal* proposal() const { return proposal_.has_value() ? &*proposal_ : nullptr; }
  const Centering& centering() const { return centering_; }
  const SignalMonitor& monitor() const { return monitor_; }
  long step() const { return step_; }

  struct RunResult {
    double best_val_bound = -std::numeric_limits<double>::infinity();
    long best_step = -1;
    TensorArchive best_checkpoint;
  };

  /// Full training protocol: seeded shuffles, minibatch estimator averages,
  /// Adam ascent, periodic validation scoring, best-checkpoint retention.
  RunResult run(MetricsLog& log, const std::string& run_dir = "") {
    log.estimator = to_string(cfg_.estimator);
    log.k = cfg_.k;
    log.lr = cfg_.lr;
    log.seed = cfg_.seed;
    RunResult result;
    if (!run_dir.empty())
      std::filesystem::create_directories(std::filesystem::path(run_dir) / "checkpoints");

    int eval_counter = 0;
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      std::vector<int> order(static_cast<std::size_t>(n_train_));
      std::iota(order.begin(), order.end(), 0);
      shuffle(order, root_.split(kShuffleStream, static_cast<std::uint64_t>(epoch)));

      double epoch_bound = 0.0;
      long epoch_cases = 0;
      const int n_batches = (n_train_ + cfg_.minibatch - 1) / cfg_.minibatch;
      for (int b = 0; b < n_batches; ++b) {
        const int lo = b * cfg_.minibatch;
        const int hi = std::min(n_train_, lo + cfg_.minibatch);
        const double batch_bound =
            train_step(epoch, b, std::span<const int>(order.data() + lo,
                                                      static_cast<std::size_t>(hi - lo)));
        epoch_bound += batch_bound * (hi - lo);
        epoch_cases += hi - lo;
        if (cfg_.log_every > 0 && step_ % cfg_.log_every == 0) {
          log.add(step_, epoch, "train", "bound_step", batch_bound);
          log.add(step_, epoch, "train", "signal_rms", monitor_.value());
        }
        if (cfg_.eval_every > 0 && step_ % cfg_.eval_every == 0)
          run_eval(log, result, epoch, eval_counter, run_dir);
      }
      log.add(step_, epoch, "train", "bound", epoch_bound / static_cast<double>(epoch_cases));
      if (cfg_.eval_every <= 0) run_eval(log, result, epoch, eval_counter, run_dir);
    }
    if (!run_dir.empty()) {
      checkpoint_archive(result.best_val_bound)
          .save((std::filesystem::path(run_dir) / "checkpoints" / "final.ckpt").string());
      log.write_csv((std::filesystem::path(run_dir) / "metrics.csv").string());
    }
    return result;
  }

  /// Validation bound with the training K, deterministic per eval index.
  double validation_bound(int eval_index) const {
    ProposalEval q = proposal_eval();
    return eval_bound(model_, proposal_.has_value() ? &q : nullptr, cfg_.scoring(),
                      split_obs("valid"), split_ctx("valid"), cfg_.k, cfg_.eval_draws,
                      root_.split(kEvalStream, static_cast<std::uint64_t>(eval_index)));
  }

  double split_nll(const std::string& split, int S, std::uint64_t eval_key = 0) const {
    ProposalEval q = proposal_eval();
    return eval_nll(model_, proposal_.has_value() ? &q : nullptr, cfg_.scoring(),
                    split_obs(split), split_ctx(split), S, root_.split(kEvalStream, 77, eval_key));
  }

  ProposalEval proposal_eval() const {
    if (!proposal_.has_value()) return ProposalEval(dummy_proposal_, nullptr);
    return ProposalEval(*proposal_, &centering_);
  }

  TensorArchive checkpoint_archive(double best_val_bound) const {
    TensorArchive arc;
    arc.put_scalar("meta.version", 1.0);
    arc.put_scalar("meta.mode", static_cast<double>(static_cast<int>(cfg_.mode)));
    arc.put_scalar("meta.estimator", static_cast<double>(static_cast<int>(cfg_.estimator)));
    arc.put_scalar("meta.mean_kind", static_cast<double>(static_cast<int>(cfg_.mean_kind)));
    arc.put_scalar("meta.k", cfg_.k);
    arc.put_scalar("meta.seed", static_cast<double>(cfg_.seed));
    arc.put_scalar("meta.step", static_cast<double>(step_));
    arc.put_scalar("meta.best_val_bound", best_val_bound);
    arc.put_scalar("meta.rows", rows_);
    arc.put_scalar("meta.cols", cols_);
    arc.put_scalar("meta.obs_dim", model_.obs_dim());
    arc.put_scalar("meta.context_dim", model_.context_dim);
    Vec sizes(static_cast<Eigen::Index>(cfg_.latent_sizes.size()));
    for (std::size_t i = 0; i < cfg_.latent_sizes.size(); ++i)
      sizes[static_cast<Eigen::Index>(i)] = cfg_.latent_sizes[i];
    arc.put("meta.latent_sizes", {sizes.size()}, std::vector<double>(sizes.data(), sizes.data() + sizes.size()));
    arc.put_scalar("meta.has_proposal", proposal_.has_value() ? 1.0 : 0.0);

    for (int i = 0; i < model_.n_latent_layers(); ++i)
      detail::put_layer(arc, "model.prior" + std::to_string(i),
                        model_.prior[static_cast<std::size_t>(i)]);
    detail::put_layer(arc, "model.obs", model_.obs);
    if (proposal_.has_value())
      for (int i = 0; i < proposal_->n_layers(); ++i)
        detail::put_layer(arc, "proposal.l" + std::to_string(i),
                          proposal_->layers[static_cast<std::size_t>(i)]);

    if (centering_.obs_mean.size() > 0) arc.put_vec("data.obs_center", centering_.obs_mean);
    if (centering_.ctx_mean.size() > 0) arc.put_vec("data.ctx_center", centering_.ctx_mean);

    arc.put_mat("baseline.W1", baseline_.net.W1);
    arc.put_vec("baseline.b1", baseline_.net.b1);
    arc.put_vec("baseline.w2", baseline_.net.w2);
    arc.put_scalar("baseline.b2", baseline_.net.b2);
    arc.put_scalar("baseline.b", baseline_.b);
    arc.put_scalar("baseline.v", baseline_.v);
    detail::put_adam(arc, "adam.model", adam_model_);
    if (proposal_.has_value()) detail::put_adam(arc, "adam.proposal", adam_proposal_);
    detail::put_adam(arc, "adam.baseline", baseline_.net_adam);
    return arc;
  }

  std::span<const BitVec> split_obs(const std::string& name) const {
    return split_of(obs_, name);
  }
  std::span<const BitVec> split_ctx(const std::string& name) const {
    if (ctx_.empty()) return {};
    return split_of(ctx_, name);
  }

  /// One minibatch update; returns the mean stochastic bound of the batch.
  double train_step(int epoch, int batch_index, std::span<const int> case_ids) {
    const int B = static_cast<int>(case_ids.size());
    const int K = cfg_.k;
    ProposalEval q = proposal_eval();

    // phase 1: draw and score all sample sets
    std::vector<SampleSet> sets;
    sets.reserve(static_cast<std::size_t>(B));
    Vec lhat(B);
    for (int c = 0; c < B; ++c) {
      const int id = case_ids[static_cast<std::size_t>(c)];
      Rng case_rng = root_.split(kCaseStream).split(static_cast<std::uint64_t>(epoch),
                                                    static_cast<std::uint64_t>(batch_index),
                                                    static_cast<std::uint64_t>(c));
      sets.push_back(score_samples(model_, proposal_.has_value() ? &q : nullptr,
                                   obs_[static_cast<std::size_t>(id)], K, case_rng,
                                   cfg_.scoring(), ctx_ptr(id)));
      lhat[c] = bound(sets.back());
    }

    // per-case signal coefficients
    std::vector<Vec> alphas(static_cast<std::size_t>(B));
    double rms_acc = 0.0;
    long rms_n = 0;
    if (cfg_.estimator == EstimatorKind::Nvil) {
      std::vector<Vec> xc(static_cast<std::size_t>(B));
      for (int c = 0; c < B; ++c)
        xc[static_cast<std::size_t>(c)] =
            centered_obs(case_ids[static_cast<std::size_t>(c)]);
      const auto signals = baseline_.update(xc, lhat, baseline_lr());
      for (int c = 0; c < B; ++c) {
        const double sig =
            cfg_.normalize_signal ? signals.normalized[c] : signals.centered[c];
        alphas[static_cast<std::size_t>(c)] = Vec::Constant(K, sig);
        rms_acc += signals.centered[c] * signals.centered[c];
        ++rms_n;
      }
    } else {
      for (int c = 0; c < B; ++c) {
        const SampleSet& s = sets[static_cast<std::size_t>(c)];
        Vec a;
        switch (cfg_.estimator) {
          case EstimatorKind::Naive:
            a = Vec::Constant(K, lhat[c]);
            break;
          case EstimatorKind::Vimco: {
            std::optional<double> pred;
            if (cfg_.mean_kind == MeanKind::Learned)
              pred = lfx_net_->predict(centered_obs(case_ids[static_cast<std::size_t>(c)]));
            a = local_signals(s, cfg_.mean_kind, pred);
            break;
          }
          case EstimatorKind::RwsWake:
            a = importance_weights(s);
            break;
          case EstimatorKind::RwsSleep:
            a = Vec::Zero(K);  // theta comes from dreams below
            break;
          case EstimatorKind::Nvil:
            break;  // handled above
        }
        rms_acc += a.squaredNorm();
        rms_n += a.size();
        alphas[static_cast<std::size_t>(c)] = std::move(a);
      }
    }
    monitor_.add(std::sqrt(rms_acc / static_cast<double>(std::max<long>(rms_n, 1))));

    // phase 2: gradient accumulation (averaged over the minibatch)
    const double inv_b = 1.0 / static_cast<double>(B);
    NetGrad psi = zero_grad(model_);
    NetGrad theta = proposal_.has_value() ? zero_grad(*proposal_) : zero_grad(model_);
    const bool wake_family =
        cfg_.estimator == EstimatorKind::RwsWake || cfg_.estimator == EstimatorKind::RwsSleep;
    for (int c = 0; c < B; ++c) {
      const int id = case_ids[static_cast<std::size_t>(c)];
      const SampleSet& s = sets[static_cast<std::size_t>(c)];
      const Vec w = importance_weights(s);
      const BitVec& x = obs_[static_cast<std::size_t>(id)];
      const BitVec* ctx = ctx_ptr(id);

      // model (psi) estimate: responsibility-weighted score gradients
      for (int j = 0; j < K; ++j) {
        const LatentStack& h = s.stacks[static_cast<std::size_t>(j)];
        if (cfg_.scoring() == ScoringMode::LearnedProposal)
          accumulate_grad_log_joint(model_, x, h, ctx, w[j] * inv_b, psi);
        else
          accumulate_grad_log_obs(model_, x, h, ctx, w[j] * inv_b, psi);
      }

      // proposal (theta) estimate
      if (cfg_.scoring() == ScoringMode::LearnedProposal) {
        Vec coeff = alphas[static_cast<std::size_t>(c)];
        if (!wake_family) coeff -= w;  // log f carries -dlogq in learned mode
        if (cfg_.estimator != EstimatorKind::RwsSleep) {
          coeff *= inv_b;
          std::vector<double> cv(coeff.data(), coeff.data() + coeff.size());
          q.accumulate_grads(x, s.stacks, cv, ctx, theta);
        }
        if (cfg_.estimator == EstimatorKind::RwsSleep ||
            (cfg_.estimator == EstimatorKind::RwsWake && cfg_.rws_sleep)) {
          Rng dream_rng = root_.split(kDreamStream)
                              .split(static_cast<std::uint64_t>(epoch),
                                     static_cast<std::uint64_t>(batch_index),
                                     static_cast<std::uint64_t>(c));
          PriorSample dream = sample_prior(model_, dream_rng, ctx);
          BitVec dx(static_cast<std::size_t>(dream.obs_means.size()));
          for (Eigen::Index i = 0; i < dream.obs_means.size(); ++i)
            dx[static_cast<std::size_t>(i)] = dream_rng.bernoulli(dream.obs_means[i]) ? 1 : 0;
          q.accumulate_grad(dx, dream.h, ctx, inv_b, theta);
        }
      } else {
        // prior-as-proposal: theta lives in the model's prior chain
        const Vec& a = alphas[static_cast<std::size_t>(c)];
        for (int j = 0; j < K; ++j)
          accumulate_grad_log_prior(model_, s.stacks[static_cast<std::size_t>(j)], ctx,
                                    a[j] * inv_b, theta);
      }
    }

    // learned score predictor for the Learned mean kind
    if (cfg_.mean_kind == MeanKind::Learned && lfx_net_.has_value()) {
      BaselineNetGrad g = lfx_net_->zero_grad();
      for (int c = 0; c < B; ++c) {
        const Vec xc = centered_obs(case_ids[static_cast<std::size_t>(c)]);
        const double pred = lfx_net_->predict(xc);
        const SampleSet& s = sets[static_cast<std::size_t>(c)];
        for (int j = 0; j < K; ++j)
          lfx_net_->accumulate_pred_grad(xc, 2.0 * (s.l[j] - pred) / (B * K), g);
      }
      auto prefs = tensor_refs(*lfx_net_);
      auto grefs = tensor_refs(g);
      adam_step(prefs, grefs, lfx_adam_, baseline_lr());
    }

    // ascent
    if (cfg_.scoring() == ScoringMode::LearnedProposal) {
      auto mrefs = tensor_refs(model_);
      auto grefs = tensor_refs(psi);
      adam_step(mrefs, grefs, adam_model_, cfg_.lr);
      auto prefs = tensor_refs(*proposal_);
      auto trefs = tensor_refs(theta);
      adam_step(prefs, trefs, adam_proposal_, cfg_.lr);
    } else {
      psi.add_scaled(theta, 1.0);  // disjoint blocks of the same model
      auto mrefs = tensor_refs(model_);
      auto grefs = tensor_refs(psi);
      adam_step(mrefs, grefs, adam_model_, cfg_.lr);
    }
    ++step_;
    return lhat.mean();
  }

 private:
  static constexpr std::uint64_t kInitStream = 101;
  static constexpr std::uint64_t kShuffleStream = 102;
  static constexpr std::uint64_t kCaseStream = 103;
  static constexpr std::uint64_t kEvalStream = 104;
  static constexpr std::uint64_t kDreamStream = 105;

  void build_views(const Dataset& data) {
    rows_ = data.rows;
    cols_ = data.cols;
    if (cfg_.mode == TrainMode::Generative) {
      obs_ = data.cases;
    } else {
      SopView v = sop_view(data);
      obs_ = std::move(v.observations);
      ctx_ = std::move(v.contexts);
    }
    sizes_ = data.sizes;
    n_train_ = sizes_.train;
    centering_.obs_mean = centering_stats(split_of(obs_, "train"));
    if (!ctx_.empty()) centering_.ctx_mean = centering_stats(split_of(ctx_, "train"));
  }

  void build_networks() {
    const int obs_dim = static_cast<int>(obs_.front().size());
    const int ctx_dim = ctx_.empty() ? 0 : static_cast<int>(ctx_.front().size());
    model_ = make_model(cfg_.latent_sizes, obs_dim, ctx_dim);
    Rng init = root_.split(kInitStream);
    init_gaussian(model_, init);
    if (cfg_.init_obs_bias) set_obs_bias_from_means(model_, centering_.obs_mean);
    if (cfg_.mode == TrainMode::Generative) {
      proposal_ = make_proposal_from_observation(cfg_.latent_sizes, obs_dim);
      init_gaussian(*proposal_, init);
    } else if (cfg_.mode == TrainMode::SopLearned) {
      proposal_ = make_prior_shaped_proposal(cfg_.latent_sizes, obs_dim, ctx_dim);
      init_gaussian(*proposal_, init);
    }
    auto mrefs = tensor_refs(model_);
    adam_model_ = AdamState::like(mrefs);
    if (proposal_.has_value()) {
      auto prefs = tensor_refs(*proposal_);
      adam_proposal_ = AdamState::like(prefs);
    }
    baseline_ = BaselineState::make(obs_dim, init);
    if (cfg_.mean_kind == MeanKind::Learned) {
      lfx_net_ = BaselineNet::make(obs_dim);
      lfx_net_->init_gaussian(init);
      auto refs = tensor_refs(*lfx_net_);
      lfx_adam_ = AdamState::like(refs);
    }
  }

  static void shuffle(std::vector<int>& order, Rng rng) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
      std::swap(order[i - 1], order[j]);
    }
  }

  std::span<const BitVec> split_of(const std::vector<BitVec>& v, const std::string& name) const {
    if (name == "train") return {v.data(), static_cast<std::size_t>(sizes_.train)};
    if (name == "valid") return {v.data() + sizes_.train, static_cast<std::size_t>(sizes_.valid)};
    if (name == "test")
      return {v.data() + sizes_.train + sizes_.valid, static_cast<std::size_t>(sizes_.test)};
    throw std::invalid_argument("unknown split: " + name);
  }

  const BitVec* ctx_ptr(int id) const {
    return ctx_.empty() ? nullptr : &ctx_[static_cast<std::size_t>(id)];
  }

  Vec centered_obs(int id) const {
    const BitVec& x = obs_[static_cast<std::size_t>(id)];
    Vec out(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i)
      out[static_cast<Eigen::Index>(i)] = x[i] - centering_.obs_mean[static_cast<Eigen::Index>(i)];
    return out;
  }

  double baseline_lr() const { return cfg_.baseline_lr > 0.0 ? cfg_.baseline_lr : cfg_.lr; }

  void run_eval(MetricsLog& log, RunResult& result, int epoch, int& eval_counter,
                const std::string& run_dir) {
    const double vb = validation_bound(eval_counter++);
    log.add(step_, epoch, "valid", "bound", vb);
    if (vb > result.best_val_bound) {
      result.best_val_bound = vb;
      result.best_step = step_;
      result.best_checkpoint = checkpoint_archive(vb);
      if (!run_dir.empty())
        result.best_checkpoint.save(
            (std::filesystem::path(run_dir) / "checkpoints" / "best.ckpt").string());
    }
  }

  TrainConfig cfg_;
  Rng root_;
  int rows_ = 0, cols_ = 0;
  std::vector<BitVec> obs_, ctx_;
  SplitSizes sizes_;
  int n_train_ = 0;
  Centering centering_;
  SbnModel model_;
  std::optional<SbnProposal> proposal_;
  SbnProposal dummy_proposal_;
  AdamState adam_model_, adam_proposal_, lfx_adam_;
  BaselineState baseline_;
  std::optional<BaselineNet> lfx_net_;
  SignalMonitor monitor_;
  long step_ = 0;
};

struct TrainResult {
  double best_val_bound;
  long best_step;
};

/// Convenience wrapper: builds a trainer, runs the full protocol, and leaves
/// metrics plus checkpoints in run_dir when given.
inline TrainResult train(const TrainConfig& cfg, const Dataset& data, MetricsLog& log,
                         const std::string& run_dir = "") {
  Trainer trainer(cfg, data);
  const auto r = trainer.run(log, run_dir);
  return {r.best_val_bound, r.best_step};
}

}  // namespace vimco
