// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dlva/errors.hpp"
#include "dlva/rng.hpp"

namespace dlva {

// A bijection on 0..n-1. Applying it gathers: out[i] = in[k[i]].
class Permutation {
 public:
  Permutation() = default;

  explicit Permutation(std::vector<std::size_t> indices) : idx_(std::move(indices)) {
    std::vector<unsigned char> seen(idx_.size(), 0);
    for (auto v : idx_) {
      if (v >= idx_.size() || seen[v])
        fail(ErrorKind::data, "index list of length " + std::to_string(idx_.size()) + " is not a permutation");
      seen[v] = 1;
    }
  }

  static Permutation identity(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return Permutation(std::move(v));
  }

  // Uniform over S_n (Fisher–Yates).
  static Permutation random(std::size_t n, Rng& rng) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
    Permutation p;
    p.idx_ = std::move(v);
    return p;
  }

  std::size_t size() const { return idx_.size(); }
  std::size_t operator[](std::size_t i) const { return idx_[i]; }
  const std::vector<std::size_t>& indices() const { return idx_; }

  bool is_identity() const {
    for (std::size_t i = 0; i < idx_.size(); ++i)
      if (idx_[i] != i) return false;
    return true;
  }

  Permutation inverse() const {
    std::vector<std::size_t> inv(idx_.size());
    for (std::size_t i = 0; i < idx_.size(); ++i) inv[idx_[i]] = i;
    Permutation p;
    p.idx_ = std::move(inv);
    return p;
  }

  // (this ∘ other)[i] = this[other[i]], so
  // p.compose(q).apply(x) == q.apply(p.apply(x)).
  Permutation compose(const Permutation& other) const {
    if (other.size() != size()) fail(ErrorKind::dimension, "composing permutations of different lengths");
    std::vector<std::size_t> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = idx_[other.idx_[i]];
    Permutation p;
    p.idx_ = std::move(out);
    return p;
  }

  template <typename T>
  std::vector<T> apply(std::span<const T> in) const {
    if (in.size() != size())
      fail(ErrorKind::dimension, "permutation of length " + std::to_string(size()) + " applied to " +
                                     std::to_string(in.size()) + " items");
    std::vector<T> out;
    out.reserve(in.size());
    for (auto i : idx_) out.push_back(in[i]);
    return out;
  }
  template <typename T>
  std::vector<T> apply(const std::vector<T>& in) const {
    return apply(std::span<const T>(in));
  }

  friend bool operator==(const Permutation&, const Permutation&) = default;
  friend auto operator<=>(const Permutation& a, const Permutation& b) { return a.idx_ <=> b.idx_; }

 private:
  std::vector<std::size_t> idx_;
};

// Number of positions where a and b differ.
inline std::size_t hamming(const Permutation& a, const Permutation& b) {
  if (a.size() != b.size())
    fail(ErrorKind::dimension, "hamming distance between lengths " + std::to_string(a.size()) + " and " +
                                   std::to_string(b.size()));
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

}  // namespace dlva
