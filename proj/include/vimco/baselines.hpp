// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "vimco/adam.hpp"
#include "vimco/math.hpp"

namespace vimco {

struct BaselineNetGrad {
  Mat W1;
  Vec b1;
  Vec w2;
  double b2 = 0.0;

  void set_zero() {
    W1.setZero();
    b1.setZero();
    w2.setZero();
    b2 = 0.0;
  }
};

/// One-hidden-layer scalar regressor: w2' tanh(W1 x + b1) + b2.
struct BaselineNet {
  Mat W1;
  Vec b1;
  Vec w2;
  double b2 = 0.0;

  static BaselineNet make(int in_dim, int hidden = 100) {
    BaselineNet n;
    n.W1 = Mat::Zero(hidden, in_dim);
    n.b1 = Vec::Zero(hidden);
    n.w2 = Vec::Zero(hidden);
    n.b2 = 0.0;
    return n;
  }

  void init_gaussian(Rng& rng, double stddev = 0.01) {
    for (Eigen::Index c = 0; c < W1.cols(); ++c)
      for (Eigen::Index r = 0; r < W1.rows(); ++r) W1(r, c) = stddev * rng.normal();
    for (Eigen::Index i = 0; i < w2.size(); ++i) w2[i] = stddev * rng.normal();
    b1.setZero();
    b2 = 0.0;
  }

  int in_dim() const { return static_cast<int>(W1.cols()); }

  double predict(const Vec& x) const {
    if (x.size() != W1.cols()) throw std::invalid_argument("baseline input dimension mismatch");
    const Vec h = (W1 * x + b1).array().tanh();
    return w2.dot(h) + b2;
  }

  BaselineNetGrad zero_grad() const {
    BaselineNetGrad g;
    g.W1 = Mat::Zero(W1.rows(), W1.cols());
    g.b1 = Vec::Zero(b1.size());
    g.w2 = Vec::Zero(w2.size());
    return g;
  }

  /// acc += coeff * d predict(x) / d params.
  void accumulate_pred_grad(const Vec& x, double coeff, BaselineNetGrad& acc) const {
    if (x.size() != W1.cols()) throw std::invalid_argument("baseline input dimension mismatch");
    const Vec h = (W1 * x + b1).array().tanh();
    const Vec dh = w2.array() * (1.0 - h.array().square());  // back through tanh
    acc.w2 += coeff * h;
    acc.b2 += coeff;
    acc.b1 += coeff * dh;
    acc.W1 += (coeff * dh) * x.transpose();
  }
};

inline std::vector<TensorRef> tensor_refs(BaselineNet& n) {
  return {{n.W1.data(), n.W1.size()},
          {n.b1.data(), n.b1.size()},
          {n.w2.data(), n.w2.size()},
          {&n.b2, 1}};
}

inline std::vector<TensorRef> tensor_refs(BaselineNetGrad& g) {
  return {{g.W1.data(), g.W1.size()},
          {g.b1.data(), g.b1.size()},
          {g.w2.data(), g.w2.size()},
          {&g.b2, 1}};
}

/// Variance-reduction state: a constant baseline tracking the mean signal,
/// an input-dependent baseline network fit to the squared residual, and a
/// running variance estimate used to normalize the signal. The floor in
/// max(1, sqrt(v)) keeps low-variance signals from being amplified.
struct BaselineState {
  BaselineNet net;
  AdamState net_adam;
  double b = 0.0;
  double v = 0.0;
  double decay = 0.9;  // EMA decay for both b and v

  static BaselineState make(int in_dim, Rng& rng, int hidden = 100) {
    BaselineState s;
    s.net = BaselineNet::make(in_dim, hidden);
    s.net.init_gaussian(rng);
    auto refs = tensor_refs(s.net);
    s.net_adam = AdamState::like(refs);
    return s;
  }

  double predict(const Vec& centered_x) const { return net.predict(centered_x); }

  struct Signals {
    Vec centered;    // raw - b(x) - b
    Vec normalized;  // centered / max(1, sqrt(v))
  };

  /// Consumes one minibatch of raw learning signals: centers them with the
  /// current baselines, then moves b, the net, and v toward the batch.
  Signals update(std::span<const Vec> xs, const Vec& raw, double lr) {
    const int B = static_cast<int>(raw.size());
    if (static_cast<int>(xs.size()) != B || B < 1)
      throw std::invalid_argument("baseline update: batch size mismatch");
    Signals out;
    out.centered.resize(B);
    Vec preds(B);
    for (int i = 0; i < B; ++i) {
      preds[i] = net.predict(xs[static_cast<std::size_t>(i)]);
      out.centered[i] = raw[i] - b - preds[i];
    }

    b = decay * b + (1.0 - decay) * (raw - preds).mean();

    BaselineNetGrad g = net.zero_grad();
    for (int i = 0; i < B; ++i)
      net.accumulate_pred_grad(xs[static_cast<std::size_t>(i)],
                               2.0 * out.centered[i] / static_cast<double>(B), g);
    auto prefs = tensor_refs(net);
    auto grefs = tensor_refs(g);
    adam_step(prefs, grefs, net_adam, lr);

    double batch_var;
    if (B >= 2) {
      const double mu = out.centered.mean();
      batch_var = (out.centered.array() - mu).square().mean();
    } else {
      batch_var = out.centered[0] * out.centered[0];
    }
    v = decay * v + (1.0 - decay) * batch_var;

    const double scale = std::max(1.0, std::sqrt(v));
    out.normalized = out.centered / scale;
    return out;
  }

  /// Single-case form of update().
  Signals update(const Vec& x, double raw, double lr) {
    Vec r(1);
    r[0] = raw;
    return update(std::span<const Vec>(&x, 1), r, lr);
  }
};

}  // namespace vimco
