// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "vimco/math.hpp"
#include "vimco/sbn.hpp"

namespace vimco {

/// Bias-corrected moment state, shaped like a flat tensor list.
struct AdamState {
  std::vector<Vec> m, v;
  long long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState like(std::span<const TensorRef> params) {
    AdamState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const auto& p : params) {
      s.m.push_back(Vec::Zero(p.n));
      s.v.push_back(Vec::Zero(p.n));
    }
    return s;
  }
};

/// One Adam step of gradient ascent: params move along +grads.
inline void adam_step(std::span<TensorRef> params, std::span<const TensorRef> grads,
                      AdamState& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: tensor list mismatch");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].n != grads[i].n || params[i].n != state.m[i].size())
      throw std::invalid_argument("adam_step: tensor shape mismatch");
    double* p = params[i].data;
    const double* g = grads[i].data;
    Vec& m = state.m[i];
    Vec& v = state.v[i];
    for (std::ptrdiff_t e = 0; e < params[i].n; ++e) {
      m[e] = state.beta1 * m[e] + (1.0 - state.beta1) * g[e];
      v[e] = state.beta2 * v[e] + (1.0 - state.beta2) * g[e] * g[e];
      p[e] += lr * (m[e] / bc1) / (std::sqrt(v[e] / bc2) + state.eps);
    }
  }
}

}  // namespace vimco
