// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vimco/math.hpp"

namespace vimco {

// ---------------------------------------------------------------------------
// IDX image files (big-endian magic and dimensions, one byte per pixel).
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {
inline std::uint32_t read_be32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("truncated idx file");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}
inline void write_be32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}
}  // namespace detail

struct RawImages {
  int n = 0;
  int rows = 0;
  int cols = 0;
  std::vector<double> pixels;  // row-major per case, values in [0, 1]
};

inline RawImages load_idx_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  if (detail::read_be32(in) != kIdxImagesMagic)
    throw std::runtime_error("bad idx image magic in " + path);
  RawImages out;
  out.n = static_cast<int>(detail::read_be32(in));
  out.rows = static_cast<int>(detail::read_be32(in));
  out.cols = static_cast<int>(detail::read_be32(in));
  const std::size_t total =
      static_cast<std::size_t>(out.n) * static_cast<std::size_t>(out.rows) *
      static_cast<std::size_t>(out.cols);
  std::vector<unsigned char> bytes(total);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(total));
  if (static_cast<std::size_t>(in.gcount()) != total)
    throw std::runtime_error("truncated idx image data in " + path);
  out.pixels.resize(total);
  for (std::size_t i = 0; i < total; ++i) out.pixels[i] = bytes[i] / 255.0;
  return out;
}

inline void save_idx_images(const std::string& path, const RawImages& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  detail::write_be32(out, kIdxImagesMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(img.n));
  detail::write_be32(out, static_cast<std::uint32_t>(img.rows));
  detail::write_be32(out, static_cast<std::uint32_t>(img.cols));
  for (double p : img.pixels) {
    const double clamped = std::min(1.0, std::max(0.0, p));
    const unsigned char b = static_cast<unsigned char>(std::lround(clamped * 255.0));
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

/// Labels are ingested for completeness but unused by the training tasks.
inline std::vector<int> load_idx_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  if (detail::read_be32(in) != kIdxLabelsMagic)
    throw std::runtime_error("bad idx label magic in " + path);
  const std::uint32_t n = detail::read_be32(in);
  std::vector<unsigned char> bytes(n);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::uint32_t>(in.gcount()) != n)
    throw std::runtime_error("truncated idx label data in " + path);
  return std::vector<int>(bytes.begin(), bytes.end());
}

// ---------------------------------------------------------------------------
// Plain-text binary matrices: one case per line, space-separated 0/1.
// ---------------------------------------------------------------------------

inline std::vector<BitVec> load_amat(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::vector<BitVec> cases;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    BitVec row;
    double v;
    while (ls >> v) {
      if (v != 0.0 && v != 1.0)
        throw std::runtime_error("non-binary entry in pre-binarized matrix: " + path);
      row.push_back(v == 1.0 ? 1 : 0);
    }
    if (!cases.empty() && row.size() != cases.front().size())
      throw std::runtime_error("ragged rows in " + path);
    cases.push_back(std::move(row));
  }
  return cases;
}

inline void save_amat(const std::string& path, std::span<const BitVec> cases) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& row : cases) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ' ';
      out << int(row[i]);
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Binarization.
// ---------------------------------------------------------------------------

enum class BinarizeStrategy {
  FixedFile,   // values are already exactly 0/1, taken verbatim
  Threshold,   // >= 0.5 maps to 1 (ties up)
  Stochastic,  // one seeded draw per pixel, then frozen
};

inline BinarizeStrategy binarize_from_string(const std::string& s) {
  if (s == "fixed-file") return BinarizeStrategy::FixedFile;
  if (s == "threshold") return BinarizeStrategy::Threshold;
  if (s == "stochastic") return BinarizeStrategy::Stochastic;
  throw std::invalid_argument("unknown binarize strategy: " + s);
}

inline std::vector<BitVec> binarize(const RawImages& img, BinarizeStrategy strategy,
                                    std::uint64_t seed = 0) {
  const int dim = img.rows * img.cols;
  std::vector<BitVec> out(static_cast<std::size_t>(img.n));
  Rng root(seed);
  for (int c = 0; c < img.n; ++c) {
    BitVec& row = out[static_cast<std::size_t>(c)];
    row.resize(static_cast<std::size_t>(dim));
    Rng rng = root.split(static_cast<std::uint64_t>(c));
    for (int i = 0; i < dim; ++i) {
      const double v = img.pixels[static_cast<std::size_t>(c) * static_cast<std::size_t>(dim) +
                                  static_cast<std::size_t>(i)];
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("pixel outside [0,1]");
      switch (strategy) {
        case BinarizeStrategy::FixedFile:
          if (v != 0.0 && v != 1.0)
            throw std::invalid_argument("fixed-file binarization needs exact 0/1 pixels");
          row[static_cast<std::size_t>(i)] = v == 1.0 ? 1 : 0;
          break;
        case BinarizeStrategy::Threshold:
          row[static_cast<std::size_t>(i)] = v >= 0.5 ? 1 : 0;
          break;
        case BinarizeStrategy::Stochastic:
          row[static_cast<std::size_t>(i)] = rng.bernoulli(v) ? 1 : 0;
          break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets and canonical splits.
// ---------------------------------------------------------------------------

struct SplitSizes {
  int train = 0;
  int valid = 0;
  int test = 0;
  int total() const { return train + valid + test; }
};

struct Dataset {
  int rows = 0;
  int cols = 0;
  std::vector<BitVec> cases;  // [train | valid | test], split-contiguous
  SplitSizes sizes;

  int dim() const { return rows * cols; }
  std::span<const BitVec> train() const {
    return {cases.data(), static_cast<std::size_t>(sizes.train)};
  }
  std::span<const BitVec> valid() const {
    return {cases.data() + sizes.train, static_cast<std::size_t>(sizes.valid)};
  }
  std::span<const BitVec> test() const {
    return {cases.data() + sizes.train + sizes.valid, static_cast<std::size_t>(sizes.test)};
  }
  std::span<const BitVec> split(const std::string& name) const {
    if (name == "train") return train();
    if (name == "valid") return valid();
    if (name == "test") return test();
    throw std::invalid_argument("unknown split: " + name);
  }
};

inline Dataset make_dataset(std::vector<BitVec> cases, int rows, int cols, SplitSizes sizes) {
  if (static_cast<int>(cases.size()) != sizes.total())
    throw std::invalid_argument("case count does not match the configured split sizes");
  for (const auto& c : cases)
    if (static_cast<int>(c.size()) != rows * cols)
      throw std::invalid_argument("case dimension does not match the image shape");
  Dataset d;
  d.rows = rows;
  d.cols = cols;
  d.cases = std::move(cases);
  d.sizes = sizes;
  return d;
}

/// Per-pixel mean over one split (conventionally the training split).
inline Vec centering_stats(std::span<const BitVec> split) {
  if (split.empty()) throw std::invalid_argument("centering needs a non-empty split");
  Vec mean = Vec::Zero(static_cast<Eigen::Index>(split.front().size()));
  for (const auto& c : split)
    for (std::size_t i = 0; i < c.size(); ++i) mean[static_cast<Eigen::Index>(i)] += c[i];
  mean /= static_cast<double>(split.size());
  return mean;
}

// ---------------------------------------------------------------------------
// Structured-prediction view: top half as context, bottom half as target.
// ---------------------------------------------------------------------------

struct SopView {
  std::vector<BitVec> contexts;      // rows [0, rows/2)
  std::vector<BitVec> observations;  // rows [rows/2, rows)
  int top_rows = 0;
  int cols = 0;
};

inline SopView sop_view(const Dataset& d) {
  if (d.rows <= 0 || d.rows % 2 != 0) throw std::invalid_argument("half-image view needs an even row count");
  SopView v;
  v.top_rows = d.rows / 2;
  v.cols = d.cols;
  const std::size_t half = static_cast<std::size_t>(v.top_rows * d.cols);
  v.contexts.reserve(d.cases.size());
  v.observations.reserve(d.cases.size());
  for (const auto& c : d.cases) {
    v.contexts.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    v.observations.emplace_back(c.begin() + static_cast<std::ptrdiff_t>(half), c.end());
  }
  return v;
}

// ---------------------------------------------------------------------------
// Synthetic multimodal dataset for self-contained desk-scale runs. Cases are
// noisy copies of a small set of prototype images; prototypes come in pairs
// that share a top half, so half-image completion is genuinely multimodal.
// ---------------------------------------------------------------------------

struct SyntheticConfig {
  int rows = 28;
  int cols = 28;
  int n_top_patterns = 5;
  int bottoms_per_top = 2;
  double flip_prob = 0.08;
};

inline Dataset synthetic_dataset(SplitSizes sizes, std::uint64_t seed,
                                 const SyntheticConfig& cfg = {}) {
  Rng root(seed);
  const int dim = cfg.rows * cfg.cols;
  const int half_rows = cfg.rows / 2;

  auto random_half = [&](Rng& rng, int row0, int nrows, BitVec& canvas) {
    // a few filled rectangles on an empty half-canvas
    const int blobs = 2 + static_cast<int>(rng.next_u64() % 3);
    for (int b = 0; b < blobs; ++b) {
      const int r0 = row0 + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(nrows));
      const int c0 = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(cfg.cols));
      const int rh = 2 + static_cast<int>(rng.next_u64() % 5);
      const int cw = 2 + static_cast<int>(rng.next_u64() % 7);
      for (int r = r0; r < std::min(row0 + nrows, r0 + rh); ++r)
        for (int c = c0; c < std::min(cfg.cols, c0 + cw); ++c)
          canvas[static_cast<std::size_t>(r * cfg.cols + c)] = 1;
    }
  };

  std::vector<BitVec> prototypes;
  for (int tp = 0; tp < cfg.n_top_patterns; ++tp) {
    Rng trng = root.split(1, static_cast<std::uint64_t>(tp));
    BitVec top(static_cast<std::size_t>(dim), 0);
    random_half(trng, 0, half_rows, top);
    for (int bp = 0; bp < cfg.bottoms_per_top; ++bp) {
      Rng brng = root.split(2, static_cast<std::uint64_t>(tp), static_cast<std::uint64_t>(bp));
      BitVec proto = top;
      random_half(brng, half_rows, cfg.rows - half_rows, proto);
      prototypes.push_back(std::move(proto));
    }
  }

  std::vector<BitVec> cases(static_cast<std::size_t>(sizes.total()));
  for (int i = 0; i < sizes.total(); ++i) {
    Rng crng = root.split(3, static_cast<std::uint64_t>(i));
    const std::size_t pick = crng.next_u64() % prototypes.size();
    BitVec c = prototypes[pick];
    for (auto& bit : c)
      if (crng.bernoulli(cfg.flip_prob)) bit ^= 1;
    cases[static_cast<std::size_t>(i)] = std::move(c);
  }
  return make_dataset(std::move(cases), cfg.rows, cfg.cols, sizes);
}

}  // namespace vimco
