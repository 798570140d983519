// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vimco/math.hpp"

namespace vimco {

// Logits are clamped to this range before drawing bits, never when scoring
// log-probabilities or gradients.
inline constexpr double kSamplingLogitClamp = 30.0;

/// One conditional Bernoulli layer. Absent input blocks are 0-column
/// matrices. Logits = b + W * parent + Wc * context + Wx * conditioning
/// observation.
struct Layer {
  Mat W;   // previous layer in sampling order
  Mat Wc;  // context
  Mat Wx;  // conditioning observation (proposals only)
  Vec b;

  int units() const { return static_cast<int>(b.size()); }
};

struct LayerGrad {
  Mat W, Wc, Wx;
  Vec b;
};

/// Gradient (or Adam moment) storage shaped like a network's layer list.
struct NetGrad {
  std::vector<LayerGrad> layers;

  void set_zero() {
    for (auto& g : layers) {
      g.W.setZero();
      g.Wc.setZero();
      g.Wx.setZero();
      g.b.setZero();
    }
  }
  void add_scaled(const NetGrad& other, double a) {
    if (layers.size() != other.layers.size()) throw std::invalid_argument("NetGrad: shape mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].W += a * other.layers[i].W;
      layers[i].Wc += a * other.layers[i].Wc;
      layers[i].Wx += a * other.layers[i].Wx;
      layers[i].b += a * other.layers[i].b;
    }
  }
  void scale(double a) {
    for (auto& g : layers) {
      g.W *= a;
      g.Wc *= a;
      g.Wx *= a;
      g.b *= a;
    }
  }
};

/// One bit-vector per latent layer; index 0 is the deepest layer, the last
/// index is the layer adjacent to the observation.
struct LatentStack {
  std::vector<BitVec> h;
};

/// Mutable view of one parameter tensor, used for flat updates.
struct TensorRef {
  double* data;
  std::ptrdiff_t n;
};

namespace detail {

inline void add_bit_cols(const Mat& M, const BitVec& bits, Vec& out) {
  if (M.cols() != static_cast<Eigen::Index>(bits.size()))
    throw std::invalid_argument("layer input dimension mismatch");
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) out += M.col(static_cast<Eigen::Index>(i));
}

// acc += coeff * da * bits^T, touching only active columns.
inline void add_outer_bits(Mat& acc, const Vec& da, const BitVec& bits, double coeff) {
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) acc.col(static_cast<Eigen::Index>(i)) += coeff * da;
}

inline BitVec draw_bits(const Vec& logits, Rng& rng) {
  BitVec bits(static_cast<std::size_t>(logits.size()));
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double a = std::min(kSamplingLogitClamp, std::max(-kSamplingLogitClamp, logits[i]));
    bits[static_cast<std::size_t>(i)] = rng.bernoulli(sigmoid(a)) ? 1 : 0;
  }
  return bits;
}

inline double bit_log_prob(const BitVec& bits, const Vec& logits) {
  double lp = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    lp += bernoulli_log_prob(bits[static_cast<std::size_t>(i)], logits[i]);
  return lp;
}

// da = t - sigmoid(a)
inline Vec residual(const BitVec& bits, const Vec& logits) {
  Vec da(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    da[i] = static_cast<double>(bits[static_cast<std::size_t>(i)]) - sigmoid(logits[i]);
  return da;
}

inline Vec bits_to_vec(const BitVec& bits) {
  Vec v(static_cast<Eigen::Index>(bits.size()));
  for (std::size_t i = 0; i < bits.size(); ++i) v[static_cast<Eigen::Index>(i)] = bits[i];
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Generative model: a chain of latent layers (deepest first) followed by an
// observation layer. Conditional variants carry Wc blocks on every layer.
// ---------------------------------------------------------------------------

struct SbnModel {
  std::vector<Layer> prior;  // prior[i] emits stack layer i
  Layer obs;                 // emits the observation; parent is the last latent layer
  int context_dim = 0;

  int n_latent_layers() const { return static_cast<int>(prior.size()); }
  int obs_dim() const { return obs.units(); }
  int latent_size(int i) const { return prior[static_cast<std::size_t>(i)].units(); }
  bool conditional() const { return context_dim > 0; }
};

struct PriorSample {
  LatentStack h;
  Vec obs_means;  // Bernoulli means of the observation layer given the drawn stack
};

inline void check_context(const SbnModel& m, const BitVec* ctx) {
  if (m.conditional()) {
    if (ctx == nullptr) throw std::invalid_argument("conditional model requires a context");
    if (static_cast<int>(ctx->size()) != m.context_dim)
      throw std::invalid_argument("context dimension mismatch");
  } else if (ctx != nullptr) {
    throw std::invalid_argument("unconditional model given a context");
  }
}

inline void check_stack(const SbnModel& m, const LatentStack& h) {
  if (static_cast<int>(h.h.size()) != m.n_latent_layers())
    throw std::invalid_argument("latent stack layer count mismatch");
  for (int i = 0; i < m.n_latent_layers(); ++i)
    if (static_cast<int>(h.h[static_cast<std::size_t>(i)].size()) != m.latent_size(i))
      throw std::invalid_argument("latent stack layer size mismatch");
}

inline Vec prior_layer_logits(const SbnModel& m, int i, const LatentStack& h, const BitVec* ctx) {
  const Layer& L = m.prior[static_cast<std::size_t>(i)];
  Vec a = L.b;
  if (i > 0) detail::add_bit_cols(L.W, h.h[static_cast<std::size_t>(i - 1)], a);
  if (L.Wc.cols() > 0) detail::add_bit_cols(L.Wc, *ctx, a);
  return a;
}

inline Vec obs_layer_logits(const SbnModel& m, const LatentStack& h, const BitVec* ctx) {
  Vec a = m.obs.b;
  detail::add_bit_cols(m.obs.W, h.h.back(), a);
  if (m.obs.Wc.cols() > 0) detail::add_bit_cols(m.obs.Wc, *ctx, a);
  return a;
}

/// Ancestral top-down draw of the latent stack plus the observation means.
inline PriorSample sample_prior(const SbnModel& m, Rng& rng, const BitVec* ctx = nullptr) {
  check_context(m, ctx);
  PriorSample out;
  out.h.h.resize(static_cast<std::size_t>(m.n_latent_layers()));
  for (int i = 0; i < m.n_latent_layers(); ++i) {
    const Vec a = prior_layer_logits(m, i, out.h, ctx);
    out.h.h[static_cast<std::size_t>(i)] = detail::draw_bits(a, rng);
  }
  const Vec a = obs_layer_logits(m, out.h, ctx);
  out.obs_means.resize(a.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double c = std::min(kSamplingLogitClamp, std::max(-kSamplingLogitClamp, a[i]));
    out.obs_means[i] = sigmoid(c);
  }
  return out;
}

/// log P(h | context) summed over the latent chain.
inline double log_prior(const SbnModel& m, const LatentStack& h, const BitVec* ctx = nullptr) {
  check_context(m, ctx);
  check_stack(m, h);
  double lp = 0.0;
  for (int i = 0; i < m.n_latent_layers(); ++i)
    lp += detail::bit_log_prob(h.h[static_cast<std::size_t>(i)], prior_layer_logits(m, i, h, ctx));
  return lp;
}

/// log P(x | h, context), the observation layer only.
inline double log_obs(const SbnModel& m, const BitVec& x, const LatentStack& h,
                      const BitVec* ctx = nullptr) {
  check_context(m, ctx);
  check_stack(m, h);
  if (static_cast<int>(x.size()) != m.obs_dim())
    throw std::invalid_argument("observation dimension mismatch");
  return detail::bit_log_prob(x, obs_layer_logits(m, h, ctx));
}

inline double log_joint(const SbnModel& m, const BitVec& x, const LatentStack& h,
                        const BitVec* ctx = nullptr) {
  return log_prior(m, h, ctx) + log_obs(m, x, h, ctx);
}

inline NetGrad zero_grad(const SbnModel& m) {
  NetGrad g;
  g.layers.resize(static_cast<std::size_t>(m.n_latent_layers()) + 1);
  for (int i = 0; i < m.n_latent_layers(); ++i) {
    const Layer& L = m.prior[static_cast<std::size_t>(i)];
    auto& gl = g.layers[static_cast<std::size_t>(i)];
    gl.W = Mat::Zero(L.W.rows(), L.W.cols());
    gl.Wc = Mat::Zero(L.Wc.rows(), L.Wc.cols());
    gl.Wx = Mat::Zero(L.Wx.rows(), L.Wx.cols());
    gl.b = Vec::Zero(L.b.size());
  }
  auto& go = g.layers.back();
  go.W = Mat::Zero(m.obs.W.rows(), m.obs.W.cols());
  go.Wc = Mat::Zero(m.obs.Wc.rows(), m.obs.Wc.cols());
  go.Wx = Mat::Zero(m.obs.Wx.rows(), m.obs.Wx.cols());
  go.b = Vec::Zero(m.obs.b.size());
  return g;
}

/// acc += coeff * d log P(h|ctx) / d(model params); prior-layer blocks only.
inline void accumulate_grad_log_prior(const SbnModel& m, const LatentStack& h, const BitVec* ctx,
                                      double coeff, NetGrad& acc) {
  check_context(m, ctx);
  check_stack(m, h);
  if (acc.layers.size() != static_cast<std::size_t>(m.n_latent_layers()) + 1)
    throw std::invalid_argument("gradient accumulator shape mismatch");
  for (int i = 0; i < m.n_latent_layers(); ++i) {
    const Vec da = detail::residual(h.h[static_cast<std::size_t>(i)], prior_layer_logits(m, i, h, ctx));
    auto& gl = acc.layers[static_cast<std::size_t>(i)];
    gl.b += coeff * da;
    if (i > 0) detail::add_outer_bits(gl.W, da, h.h[static_cast<std::size_t>(i - 1)], coeff);
    if (gl.Wc.cols() > 0) detail::add_outer_bits(gl.Wc, da, *ctx, coeff);
  }
}

/// acc += coeff * d log P(x|h,ctx) / d(model params); observation block only.
inline void accumulate_grad_log_obs(const SbnModel& m, const BitVec& x, const LatentStack& h,
                                    const BitVec* ctx, double coeff, NetGrad& acc) {
  check_context(m, ctx);
  check_stack(m, h);
  if (acc.layers.size() != static_cast<std::size_t>(m.n_latent_layers()) + 1)
    throw std::invalid_argument("gradient accumulator shape mismatch");
  const Vec da = detail::residual(x, obs_layer_logits(m, h, ctx));
  auto& go = acc.layers.back();
  go.b += coeff * da;
  detail::add_outer_bits(go.W, da, h.h.back(), coeff);
  if (go.Wc.cols() > 0) detail::add_outer_bits(go.Wc, da, *ctx, coeff);
}

/// acc += coeff * d log P(x,h|ctx) / d(model params).
inline void accumulate_grad_log_joint(const SbnModel& m, const BitVec& x, const LatentStack& h,
                                      const BitVec* ctx, double coeff, NetGrad& acc) {
  accumulate_grad_log_prior(m, h, ctx, coeff, acc);
  accumulate_grad_log_obs(m, x, h, ctx, coeff, acc);
}

inline NetGrad grad_log_joint(const SbnModel& m, const BitVec& x, const LatentStack& h,
                              const BitVec* ctx = nullptr) {
  NetGrad g = zero_grad(m);
  accumulate_grad_log_joint(m, x, h, ctx, 1.0, g);
  return g;
}

// ---------------------------------------------------------------------------
// Proposal networks.
// ---------------------------------------------------------------------------

struct SbnProposal {
  enum class Topology {
    FromObservation,  // samples the layer adjacent to the observation first
    PriorShaped       // samples in model order; last layer also sees the observation
  };

  Topology topology = Topology::FromObservation;
  std::vector<Layer> layers;  // in sampling order
  int obs_dim = 0;
  int context_dim = 0;

  int n_layers() const { return static_cast<int>(layers.size()); }
  /// Stack index written by chain position k.
  int stack_index(int k) const {
    return topology == Topology::FromObservation ? n_layers() - 1 - k : k;
  }
  bool conditional() const { return context_dim > 0; }
};

inline NetGrad zero_grad(const SbnProposal& p) {
  NetGrad g;
  g.layers.resize(p.layers.size());
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const Layer& L = p.layers[i];
    g.layers[i].W = Mat::Zero(L.W.rows(), L.W.cols());
    g.layers[i].Wc = Mat::Zero(L.Wc.rows(), L.Wc.cols());
    g.layers[i].Wx = Mat::Zero(L.Wx.rows(), L.Wx.cols());
    g.layers[i].b = Vec::Zero(L.b.size());
  }
  return g;
}

/// Per-input mean vectors subtracted from real-valued network inputs.
struct Centering {
  Vec obs_mean;  // empty => observation input not centered
  Vec ctx_mean;  // empty => context input not centered
};

/// Binds a proposal to an optional input centering, precomputing the
/// per-layer bias offsets so binary inputs can still be applied column-wise.
class ProposalEval {
 public:
  explicit ProposalEval(const SbnProposal& p, const Centering* center = nullptr)
      : prop_(&p), center_(center) {
    refresh();
  }

  /// Recompute cached offsets after a parameter update.
  void refresh() {
    const SbnProposal& p = *prop_;
    bias_eff_.resize(p.layers.size());
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
      const Layer& L = p.layers[k];
      bias_eff_[k] = L.b;
      if (center_ != nullptr) {
        if (L.Wx.cols() > 0 && center_->obs_mean.size() > 0) {
          if (L.Wx.cols() != center_->obs_mean.size())
            throw std::invalid_argument("observation centering dimension mismatch");
          bias_eff_[k] -= L.Wx * center_->obs_mean;
        }
        if (L.Wc.cols() > 0 && center_->ctx_mean.size() > 0) {
          if (L.Wc.cols() != center_->ctx_mean.size())
            throw std::invalid_argument("context centering dimension mismatch");
          bias_eff_[k] -= L.Wc * center_->ctx_mean;
        }
      }
    }
  }

  const SbnProposal& proposal() const { return *prop_; }
  const Centering* centering() const { return center_; }

  struct Draw {
    LatentStack h;
    double log_q;
  };

  /// Ancestral draw through the chain; returns the stack and its exact
  /// log-probability under the proposal.
  Draw sample(const BitVec& x, Rng& rng, const BitVec* ctx = nullptr) const {
    check_inputs(x, ctx);
    const SbnProposal& p = *prop_;
    Draw out;
    out.h.h.resize(p.layers.size());
    out.log_q = 0.0;
    const BitVec* prev = nullptr;
    for (int k = 0; k < p.n_layers(); ++k) {
      const Vec a = layer_logits(k, prev, x, ctx);
      BitVec bits = detail::draw_bits(a, rng);
      out.log_q += detail::bit_log_prob(bits, a);
      out.h.h[static_cast<std::size_t>(p.stack_index(k))] = std::move(bits);
      prev = &out.h.h[static_cast<std::size_t>(p.stack_index(k))];
    }
    return out;
  }

  /// Exact log Q(h | x, ctx) of a given stack.
  double log_prob(const BitVec& x, const LatentStack& h, const BitVec* ctx = nullptr) const {
    check_inputs(x, ctx);
    const SbnProposal& p = *prop_;
    if (h.h.size() != p.layers.size())
      throw std::invalid_argument("latent stack layer count mismatch");
    double lp = 0.0;
    const BitVec* prev = nullptr;
    for (int k = 0; k < p.n_layers(); ++k) {
      const BitVec& bits = h.h[static_cast<std::size_t>(p.stack_index(k))];
      if (static_cast<int>(bits.size()) != p.layers[static_cast<std::size_t>(k)].units())
        throw std::invalid_argument("latent stack layer size mismatch");
      lp += detail::bit_log_prob(bits, layer_logits(k, prev, x, ctx));
      prev = &bits;
    }
    return lp;
  }

  /// acc += coeff * d log Q(h|x,ctx) / d(proposal params).
  void accumulate_grad(const BitVec& x, const LatentStack& h, const BitVec* ctx, double coeff,
                       NetGrad& acc) const {
    accumulate_grads(x, {&h, 1}, {&coeff, 1}, ctx, acc);
  }

  /// Batched per-case accumulation: acc += sum_j coeff[j] * d log Q(h_j|x).
  /// The observation and context inputs are fixed across the samples, so
  /// their blocks receive one rank-1 update for the whole set.
  void accumulate_grads(const BitVec& x, std::span<const LatentStack> hs,
                        std::span<const double> coeffs, const BitVec* ctx, NetGrad& acc) const {
    check_inputs(x, ctx);
    const SbnProposal& p = *prop_;
    if (hs.size() != coeffs.size()) throw std::invalid_argument("sample/coefficient count mismatch");
    if (acc.layers.size() != p.layers.size())
      throw std::invalid_argument("gradient accumulator shape mismatch");

    std::vector<Vec> sda(p.layers.size());  // sum of coeff * residual, per layer
    for (std::size_t k = 0; k < p.layers.size(); ++k)
      sda[k] = Vec::Zero(p.layers[k].units());

    for (std::size_t j = 0; j < hs.size(); ++j) {
      const LatentStack& h = hs[j];
      const double coeff = coeffs[j];
      if (h.h.size() != p.layers.size())
        throw std::invalid_argument("latent stack layer count mismatch");
      const BitVec* prev = nullptr;
      for (int k = 0; k < p.n_layers(); ++k) {
        const BitVec& bits = h.h[static_cast<std::size_t>(p.stack_index(k))];
        const Vec a = layer_logits(k, prev, x, ctx);
        const Vec da = detail::residual(bits, a);
        sda[static_cast<std::size_t>(k)] += coeff * da;
        if (prev != nullptr)
          detail::add_outer_bits(acc.layers[static_cast<std::size_t>(k)].W, da, *prev, coeff);
        prev = &bits;
      }
    }

    for (int k = 0; k < p.n_layers(); ++k) {
      const Layer& L = p.layers[static_cast<std::size_t>(k)];
      auto& g = acc.layers[static_cast<std::size_t>(k)];
      g.b += sda[static_cast<std::size_t>(k)];
      if (L.Wx.cols() > 0) add_input_outer(g.Wx, sda[static_cast<std::size_t>(k)], x, obs_centered());
      if (L.Wc.cols() > 0) add_input_outer(g.Wc, sda[static_cast<std::size_t>(k)], *ctx, ctx_centered());
    }
  }

 private:
  const Vec* obs_centered() const {
    return (center_ != nullptr && center_->obs_mean.size() > 0) ? &center_->obs_mean : nullptr;
  }
  const Vec* ctx_centered() const {
    return (center_ != nullptr && center_->ctx_mean.size() > 0) ? &center_->ctx_mean : nullptr;
  }

  static void add_input_outer(Mat& acc, const Vec& sda, const BitVec& bits, const Vec* mean) {
    if (mean == nullptr) {
      detail::add_outer_bits(acc, sda, bits, 1.0);
    } else {
      Vec centered = detail::bits_to_vec(bits) - *mean;
      acc += sda * centered.transpose();
    }
  }

  void check_inputs(const BitVec& x, const BitVec* ctx) const {
    const SbnProposal& p = *prop_;
    if (static_cast<int>(x.size()) != p.obs_dim)
      throw std::invalid_argument("observation dimension mismatch");
    if (p.conditional()) {
      if (ctx == nullptr) throw std::invalid_argument("conditional proposal requires a context");
      if (static_cast<int>(ctx->size()) != p.context_dim)
        throw std::invalid_argument("context dimension mismatch");
    } else if (ctx != nullptr) {
      throw std::invalid_argument("unconditional proposal given a context");
    }
  }

  Vec layer_logits(int k, const BitVec* prev, const BitVec& x, const BitVec* ctx) const {
    const Layer& L = prop_->layers[static_cast<std::size_t>(k)];
    Vec a = bias_eff_[static_cast<std::size_t>(k)];
    if (L.W.cols() > 0) {
      if (prev == nullptr) throw std::invalid_argument("chain layer missing its parent input");
      detail::add_bit_cols(L.W, *prev, a);
    }
    if (L.Wx.cols() > 0) detail::add_bit_cols(L.Wx, x, a);
    if (L.Wc.cols() > 0) detail::add_bit_cols(L.Wc, *ctx, a);
    return a;
  }

  const SbnProposal* prop_;
  const Centering* center_;
  std::vector<Vec> bias_eff_;
};

inline ProposalEval::Draw sample_proposal(const SbnProposal& p, const BitVec& x, Rng& rng,
                                          const BitVec* ctx = nullptr) {
  return ProposalEval(p).sample(x, rng, ctx);
}

inline double log_q(const SbnProposal& p, const BitVec& x, const LatentStack& h,
                    const BitVec* ctx = nullptr) {
  return ProposalEval(p).log_prob(x, h, ctx);
}

inline NetGrad grad_log_q(const SbnProposal& p, const BitVec& x, const LatentStack& h,
                          const BitVec* ctx = nullptr) {
  NetGrad g = zero_grad(p);
  ProposalEval(p).accumulate_grad(x, h, ctx, 1.0, g);
  return g;
}

// ---------------------------------------------------------------------------
// Construction and initialization.
// ---------------------------------------------------------------------------

/// latent_sizes are listed deepest-first; the last entry is adjacent to the
/// observation layer.
inline SbnModel make_model(const std::vector<int>& latent_sizes, int obs_dim, int context_dim = 0) {
  if (latent_sizes.empty()) throw std::invalid_argument("model needs at least one latent layer");
  SbnModel m;
  m.context_dim = context_dim;
  m.prior.resize(latent_sizes.size());
  for (std::size_t i = 0; i < latent_sizes.size(); ++i) {
    Layer& L = m.prior[i];
    const int units = latent_sizes[i];
    L.b = Vec::Zero(units);
    L.W = (i == 0) ? Mat(units, 0) : Mat::Zero(units, latent_sizes[i - 1]);
    L.Wc = (context_dim > 0) ? Mat::Zero(units, context_dim) : Mat(units, 0);
    L.Wx = Mat(units, 0);
  }
  m.obs.b = Vec::Zero(obs_dim);
  m.obs.W = Mat::Zero(obs_dim, latent_sizes.back());
  m.obs.Wc = (context_dim > 0) ? Mat::Zero(obs_dim, context_dim) : Mat(obs_dim, 0);
  m.obs.Wx = Mat(obs_dim, 0);
  return m;
}

/// Proposal running from the observation up to the deepest latent layer.
inline SbnProposal make_proposal_from_observation(const std::vector<int>& latent_sizes,
                                                  int obs_dim) {
  SbnProposal p;
  p.topology = SbnProposal::Topology::FromObservation;
  p.obs_dim = obs_dim;
  p.context_dim = 0;
  const int L = static_cast<int>(latent_sizes.size());
  p.layers.resize(static_cast<std::size_t>(L));
  for (int k = 0; k < L; ++k) {
    Layer& layer = p.layers[static_cast<std::size_t>(k)];
    const int units = latent_sizes[static_cast<std::size_t>(L - 1 - k)];
    layer.b = Vec::Zero(units);
    layer.W = (k == 0) ? Mat(units, 0) : Mat::Zero(units, latent_sizes[static_cast<std::size_t>(L - k)]);
    layer.Wx = (k == 0) ? Mat::Zero(units, obs_dim) : Mat(units, 0);
    layer.Wc = Mat(units, 0);
  }
  return p;
}

/// Proposal with the same topology as the conditional prior; every layer sees
/// the context and the last latent layer additionally sees the observation.
inline SbnProposal make_prior_shaped_proposal(const std::vector<int>& latent_sizes, int obs_dim,
                                              int context_dim) {
  SbnProposal p;
  p.topology = SbnProposal::Topology::PriorShaped;
  p.obs_dim = obs_dim;
  p.context_dim = context_dim;
  const int L = static_cast<int>(latent_sizes.size());
  p.layers.resize(static_cast<std::size_t>(L));
  for (int k = 0; k < L; ++k) {
    Layer& layer = p.layers[static_cast<std::size_t>(k)];
    const int units = latent_sizes[static_cast<std::size_t>(k)];
    layer.b = Vec::Zero(units);
    layer.W = (k == 0) ? Mat(units, 0) : Mat::Zero(units, latent_sizes[static_cast<std::size_t>(k - 1)]);
    layer.Wc = (context_dim > 0) ? Mat::Zero(units, context_dim) : Mat(units, 0);
    layer.Wx = (k == L - 1) ? Mat::Zero(units, obs_dim) : Mat(units, 0);
  }
  return p;
}

namespace detail {
inline void init_layer(Layer& L, Rng& rng, double stddev) {
  for (Mat* M : {&L.W, &L.Wc, &L.Wx})
    for (Eigen::Index c = 0; c < M->cols(); ++c)
      for (Eigen::Index r = 0; r < M->rows(); ++r) (*M)(r, c) = stddev * rng.normal();
  L.b.setZero();
}
}  // namespace detail

inline void init_gaussian(SbnModel& m, Rng& rng, double stddev = 0.01) {
  for (auto& L : m.prior) detail::init_layer(L, rng, stddev);
  detail::init_layer(m.obs, rng, stddev);
}

inline void init_gaussian(SbnProposal& p, Rng& rng, double stddev = 0.01) {
  for (auto& L : p.layers) detail::init_layer(L, rng, stddev);
}

/// Sets the observation bias to the logit of per-pixel means, clamped away
/// from 0 and 1.
inline void set_obs_bias_from_means(SbnModel& m, const Vec& pixel_means) {
  if (pixel_means.size() != m.obs.b.size())
    throw std::invalid_argument("pixel mean dimension mismatch");
  for (Eigen::Index i = 0; i < pixel_means.size(); ++i) {
    const double p = std::min(0.999, std::max(0.001, pixel_means[i]));
    m.obs.b[i] = std::log(p / (1.0 - p));
  }
}

// ---------------------------------------------------------------------------
// Flat parameter access (shared by the optimizer and checkpointing).
// ---------------------------------------------------------------------------

namespace detail {
inline void push_layer_refs(Layer& L, std::vector<TensorRef>& out) {
  if (L.W.size() > 0) out.push_back({L.W.data(), L.W.size()});
  if (L.Wc.size() > 0) out.push_back({L.Wc.data(), L.Wc.size()});
  if (L.Wx.size() > 0) out.push_back({L.Wx.data(), L.Wx.size()});
  out.push_back({L.b.data(), L.b.size()});
}
inline void push_layer_refs(LayerGrad& L, std::vector<TensorRef>& out) {
  if (L.W.size() > 0) out.push_back({L.W.data(), L.W.size()});
  if (L.Wc.size() > 0) out.push_back({L.Wc.data(), L.Wc.size()});
  if (L.Wx.size() > 0) out.push_back({L.Wx.data(), L.Wx.size()});
  out.push_back({L.b.data(), L.b.size()});
}
}  // namespace detail

inline std::vector<TensorRef> tensor_refs(SbnModel& m) {
  std::vector<TensorRef> out;
  for (auto& L : m.prior) detail::push_layer_refs(L, out);
  detail::push_layer_refs(m.obs, out);
  return out;
}

inline std::vector<TensorRef> tensor_refs(SbnProposal& p) {
  std::vector<TensorRef> out;
  for (auto& L : p.layers) detail::push_layer_refs(L, out);
  return out;
}

inline std::vector<TensorRef> tensor_refs(NetGrad& g) {
  std::vector<TensorRef> out;
  for (auto& L : g.layers) detail::push_layer_refs(L, out);
  return out;
}

inline std::ptrdiff_t num_params(const std::vector<TensorRef>& refs) {
  std::ptrdiff_t n = 0;
  for (const auto& r : refs) n += r.n;
  return n;
}

/// Concatenates a gradient into one flat vector (used by the enumeration
/// oracle, where gradients live in a plain vector space).
inline Vec flatten(const NetGrad& g) {
  std::ptrdiff_t n = 0;
  for (const auto& L : g.layers) n += L.W.size() + L.Wc.size() + L.Wx.size() + L.b.size();
  Vec out(n);
  std::ptrdiff_t at = 0;
  auto put = [&](const double* d, std::ptrdiff_t k) {
    for (std::ptrdiff_t i = 0; i < k; ++i) out[at++] = d[i];
  };
  for (const auto& L : g.layers) {
    put(L.W.data(), L.W.size());
    put(L.Wc.data(), L.Wc.size());
    put(L.Wx.data(), L.Wx.size());
    put(L.b.data(), L.b.size());
  }
  return out;
}

}  // namespace vimco
