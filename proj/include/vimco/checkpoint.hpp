// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vimco/math.hpp"

namespace vimco {

/// Named-tensor archive: a text manifest (name, rank, dims, byte offset into
/// the data section) followed by little-endian IEEE-754 double blocks.
/// Matrices are serialized row-major.
class TensorArchive {
 public:
  struct Entry {
    std::vector<std::int64_t> dims;
    std::vector<double> values;
  };

  void put(const std::string& name, std::vector<std::int64_t> dims, std::vector<double> values) {
    std::size_t expect = 1;
    for (auto d : dims) expect *= static_cast<std::size_t>(d);
    if (expect != values.size()) throw std::invalid_argument("tensor dims do not match data size");
    entries_[name] = Entry{std::move(dims), std::move(values)};
  }

  void put_scalar(const std::string& name, double v) { put(name, {}, {v}); }

  void put_vec(const std::string& name, const Vec& v) {
    std::vector<double> data(v.data(), v.data() + v.size());
    put(name, {v.size()}, std::move(data));
  }

  void put_mat(const std::string& name, const Mat& m) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    put(name, {m.rows(), m.cols()}, std::move(data));
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  const Entry& get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::runtime_error("archive is missing tensor: " + name);
    return it->second;
  }

  double scalar(const std::string& name) const {
    const Entry& e = get(name);
    if (!e.dims.empty()) throw std::runtime_error("tensor is not a scalar: " + name);
    return e.values[0];
  }

  Vec vec(const std::string& name) const {
    const Entry& e = get(name);
    if (e.dims.size() != 1) throw std::runtime_error("tensor is not rank 1: " + name);
    Vec v(static_cast<Eigen::Index>(e.values.size()));
    for (std::size_t i = 0; i < e.values.size(); ++i) v[static_cast<Eigen::Index>(i)] = e.values[i];
    return v;
  }

  Mat mat(const std::string& name) const {
    const Entry& e = get(name);
    if (e.dims.size() != 2) throw std::runtime_error("tensor is not rank 2: " + name);
    Mat m(e.dims[0], e.dims[1]);
    std::size_t at = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = e.values[at++];
    return m;
  }

  const std::map<std::string, Entry>& entries() const { return entries_; }

  void save(const std::string& path) const {
    static_assert(std::endian::native == std::endian::little,
                  "archive writer assumes a little-endian host");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    std::ostringstream manifest;
    manifest << "tensor-archive 1\n" << entries_.size() << "\n";
    std::uint64_t offset = 0;
    for (const auto& [name, e] : entries_) {
      manifest << name << " " << e.dims.size();
      for (auto d : e.dims) manifest << " " << d;
      manifest << " " << offset << "\n";
      offset += e.values.size() * sizeof(double);
    }
    manifest << "data " << offset << "\n";
    const std::string header = manifest.str();
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, e] : entries_) {
      (void)name;
      out.write(reinterpret_cast<const char*>(e.values.data()),
                static_cast<std::streamsize>(e.values.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
  }

  static TensorArchive load(const std::string& path) {
    static_assert(std::endian::native == std::endian::little,
                  "archive reader assumes a little-endian host");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "tensor-archive 1")
      throw std::runtime_error("not a tensor archive: " + path);
    if (!std::getline(in, line)) throw std::runtime_error("truncated archive: " + path);
    const std::size_t count = std::stoull(line);
    struct Pending {
      std::string name;
      std::vector<std::int64_t> dims;
      std::uint64_t offset;
      std::size_t n;
    };
    std::vector<Pending> pending;
    pending.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      if (!std::getline(in, line)) throw std::runtime_error("truncated manifest: " + path);
      std::istringstream ls(line);
      Pending p;
      std::size_t rank = 0;
      ls >> p.name >> rank;
      p.dims.resize(rank);
      p.n = 1;
      for (std::size_t d = 0; d < rank; ++d) {
        ls >> p.dims[d];
        p.n *= static_cast<std::size_t>(p.dims[d]);
      }
      ls >> p.offset;
      if (!ls) throw std::runtime_error("bad manifest line: " + line);
      pending.push_back(std::move(p));
    }
    if (!std::getline(in, line) || line.rfind("data ", 0) != 0)
      throw std::runtime_error("missing data section: " + path);
    const std::uint64_t total = std::stoull(line.substr(5));
    std::vector<double> blob(total / sizeof(double));
    in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(total));
    if (static_cast<std::uint64_t>(in.gcount()) != total)
      throw std::runtime_error("truncated data section: " + path);
    TensorArchive arc;
    for (auto& p : pending) {
      const std::size_t start = p.offset / sizeof(double);
      if (start + p.n > blob.size()) throw std::runtime_error("tensor offset out of range: " + p.name);
      std::vector<double> vals(blob.begin() + static_cast<std::ptrdiff_t>(start),
                               blob.begin() + static_cast<std::ptrdiff_t>(start + p.n));
      arc.put(p.name, std::move(p.dims), std::move(vals));
    }
    return arc;
  }

 private:
  std::map<std::string, Entry> entries_;
};

}  // namespace vimco
