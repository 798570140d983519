// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace vimco {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using BitVec = std::vector<std::uint8_t>;

/// log(sum_i exp(v_i)) computed by max-shifting. Exact for a single element.
inline double log_sum_exp(const Vec& v) {
  if (v.size() == 0) throw std::invalid_argument("log_sum_exp: empty input");
  if (v.size() == 1) return v[0];
  const double m = v.maxCoeff();
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

/// exp(v_i - log_sum_exp(v)): non-negative weights summing to 1.
inline Vec softmax_from_logs(const Vec& v) {
  if (v.size() == 0) throw std::invalid_argument("softmax_from_logs: empty input");
  const double m = v.maxCoeff();
  Vec w(v.size());
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    w[i] = std::exp(v[i] - m);
    s += w[i];
  }
  w /= s;
  return w;
}

inline double sigmoid(double a) {
  if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

/// log(sigmoid(a)) without underflowing through an intermediate sigmoid.
inline double log_sigmoid(double a) {
  if (a >= 0.0) return -std::log1p(std::exp(-a));
  return a - std::log1p(std::exp(a));
}

/// b * log sigmoid(a) + (1 - b) * log sigmoid(-a) for b in {0, 1}.
inline double bernoulli_log_prob(int bit, double logit) {
  return bit ? log_sigmoid(logit) : log_sigmoid(-logit);
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline void check_finite(const Vec& v, const char* what) {
  if (!v.allFinite()) throw std::runtime_error(std::string("non-finite values in ") + what);
}

/// Splittable counter-based generator. Substreams are addressed by up to
/// three keys hashed together with the stream's base identity, so per-case
/// streams do not depend on how many draws were made elsewhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : base_(seed), state_(seed) {}

  Rng split(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) const {
    std::uint64_t h = mix_(base_ ^ (a * 0x9E3779B97F4A7C15ull + 0x243F6A8885A308D3ull));
    h = mix_(h ^ (b * 0xBF58476D1CE4E5B9ull + 0x13198A2E03707344ull));
    h = mix_(h ^ (c * 0x94D049BB133111EBull + 0xA4093822299F31D0ull));
    return Rng(h);
  }

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    return mix_(state_);
  }

  /// Uniform draw in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller (one value per pair of uniforms).
  double normal() {
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t base() const { return base_; }

 private:
  static std::uint64_t mix_(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t base_;
  std::uint64_t state_;
};

/// Independent Bernoulli draws, one per entry of p.
inline BitVec bernoulli_sample(const Vec& p, Rng& rng) {
  BitVec bits(static_cast<std::size_t>(p.size()));
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double pi = p[i];
    if (!(pi >= 0.0 && pi <= 1.0))
      throw std::invalid_argument("bernoulli_sample: probability outside [0,1]");
    bits[static_cast<std::size_t>(i)] = rng.bernoulli(pi) ? 1 : 0;
  }
  return bits;
}

}  // namespace vimco
