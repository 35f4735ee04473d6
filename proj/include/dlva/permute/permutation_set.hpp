// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "dlva/permute/permutation.hpp"

namespace dlva {

enum class SelectionObjective { min_avg, max_avg, random };

inline const char* to_string(SelectionObjective o) {
  switch (o) {
    case SelectionObjective::min_avg: return "min_avg";
    case SelectionObjective::max_avg: return "max_avg";
    case SelectionObjective::random: return "random";
  }
  return "?";
}

inline SelectionObjective parse_objective(const std::string& s) {
  if (s == "min_avg") return SelectionObjective::min_avg;
  if (s == "max_avg") return SelectionObjective::max_avg;
  if (s == "random") return SelectionObjective::random;
  fail(ErrorKind::usage, "unknown objective '" + s + "' (expected min_avg, max_avg or random)");
}

struct HammingStats {
  std::size_t min = 0;
  double mean = 0.0;
  std::size_t max = 0;
  friend bool operator==(const HammingStats&, const HammingStats&) = default;
};

// A fixed library of distinct permutations of n patches; the index of a member
// is its class label for order prediction.
struct PermutationSet {
  std::size_t n = 0;
  std::vector<Permutation> perms;
  SelectionObjective objective = SelectionObjective::min_avg;
  std::uint64_t seed = 0;
  HammingStats stats;

  std::size_t size() const { return perms.size(); }

  std::optional<std::size_t> index_of(const Permutation& p) const {
    for (std::size_t i = 0; i < perms.size(); ++i)
      if (perms[i] == p) return i;
    return std::nullopt;
  }
};

namespace detail {

struct IndexVectorHash {
  std::size_t operator()(const std::vector<std::size_t>& v) const {
    std::uint64_t h = 0x243f6a8885a308d3ULL;
    for (auto x : v) h = mix64(h ^ x);
    return static_cast<std::size_t>(h);
  }
};

}  // namespace detail

// Pairwise Hamming statistics. The mean is computed exactly from per-position
// value counts: Σ_pairs d = Σ_i [C(k,2) − Σ_v C(count_i(v),2)].
inline HammingStats pairwise_stats(const std::vector<Permutation>& perms) {
  HammingStats s;
  const std::size_t k = perms.size();
  if (k < 2) return s;
  const std::size_t n = perms[0].size();
  std::vector<std::uint16_t> flat(k * n);
  std::vector<std::uint64_t> counts(n * n, 0);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t i = 0; i < n; ++i) {
      flat[p * n + i] = static_cast<std::uint16_t>(perms[p][i]);
      ++counts[i * n + perms[p][i]];
    }
  const std::uint64_t pairs = static_cast<std::uint64_t>(k) * (k - 1) / 2;
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t same = 0;
    for (std::size_t v = 0; v < n; ++v) {
      const auto c = counts[i * n + v];
      if (c > 1) same += c * (c - 1) / 2;
    }
    total += pairs - same;
  }
  s.mean = static_cast<double>(total) / static_cast<double>(pairs);
  s.min = n;
  s.max = 0;
  for (std::size_t a = 0; a < k; ++a) {
    const std::uint16_t* pa = flat.data() + a * n;
    for (std::size_t b = a + 1; b < k; ++b) {
      const std::uint16_t* pb = flat.data() + b * n;
      std::size_t d = 0;
      for (std::size_t i = 0; i < n; ++i) d += pa[i] != pb[i];
      s.min = std::min(s.min, d);
      s.max = std::max(s.max, d);
    }
  }
  return s;
}

struct GenerateOptions {
  std::size_t pool = 100;
  // Consecutive all-duplicate candidate pools tolerated before giving up.
  std::size_t max_retries = 1000;
};

// Greedy library construction. The first member is a uniformly random
// permutation; every later step draws `pool` random candidates, drops those
// already selected, and keeps the one whose mean Hamming distance to the
// current selection is smallest (min_avg) or largest (max_avg). Ties go to
// the lexicographically smallest candidate. `random` keeps the first
// surviving candidate.
inline PermutationSet generate_set(std::size_t n, std::size_t k, SelectionObjective objective, std::uint64_t seed,
                                   const GenerateOptions& opt = {}) {
  if (n == 0) fail(ErrorKind::config, "permutation length must be positive");
  if (k == 0) fail(ErrorKind::config, "permutation set size must be positive");
  if (opt.pool == 0) fail(ErrorKind::config, "candidate pool must be at least 1");
  if (n > 65535) fail(ErrorKind::config, "permutation length above 65535 is not supported");
  if (n <= 12) {
    std::uint64_t fact = 1;
    for (std::size_t i = 2; i <= n; ++i) fact *= i;
    if (k > fact)
      fail(ErrorKind::config, "cannot select " + std::to_string(k) + " distinct permutations of " + std::to_string(n) +
                                  " (only " + std::to_string(fact) + " exist)");
  }

  Rng rng(seed);
  PermutationSet set;
  set.n = n;
  set.objective = objective;
  set.seed = seed;
  set.perms.reserve(k);

  std::unordered_set<std::vector<std::size_t>, detail::IndexVectorHash> chosen;
  // agree[i*n + v]: selected members with value v at position i.
  std::vector<std::uint32_t> agree(n * n, 0);
  auto add = [&](Permutation p) {
    for (std::size_t i = 0; i < n; ++i) ++agree[i * n + p[i]];
    chosen.insert(p.indices());
    set.perms.push_back(std::move(p));
  };

  add(Permutation::random(n, rng));
  std::size_t retries = 0;
  std::vector<Permutation> pool;
  pool.reserve(opt.pool);
  while (set.perms.size() < k) {
    pool.clear();
    for (std::size_t c = 0; c < opt.pool; ++c) pool.push_back(Permutation::random(n, rng));

    const Permutation* best = nullptr;
    std::uint64_t best_agree = 0;
    for (const auto& cand : pool) {
      if (chosen.count(cand.indices())) continue;
      if (objective == SelectionObjective::random) {
        best = &cand;
        break;
      }
      // Sum of distances to the selection is |S|·n − agreement, so ranking by
      // agreement ranks by mean distance.
      std::uint64_t a = 0;
      for (std::size_t i = 0; i < n; ++i) a += agree[i * n + cand[i]];
      const bool better = best == nullptr ||
                          (objective == SelectionObjective::min_avg ? a > best_agree : a < best_agree) ||
                          (a == best_agree && cand < *best);
      if (better) {
        best = &cand;
        best_agree = a;
      }
    }
    if (best == nullptr) {
      if (++retries > opt.max_retries)
        fail(ErrorKind::generation, "selected " + std::to_string(set.perms.size()) + " of " + std::to_string(k) +
                                        " permutations before candidates were exhausted");
      continue;
    }
    retries = 0;
    add(*best);
  }
  set.stats = pairwise_stats(set.perms);
  return set;
}

// Text form: header `n=<int> k=<int> objective=<name> seed=<int>`, then one
// permutation per line as space-separated indices.
inline void write_permutation_set(std::ostream& os, const PermutationSet& set) {
  os << "n=" << set.n << " k=" << set.size() << " objective=" << to_string(set.objective) << " seed=" << set.seed
     << '\n';
  for (const auto& p : set.perms) {
    for (std::size_t i = 0; i < p.size(); ++i) os << (i ? " " : "") << p[i];
    os << '\n';
  }
}

inline PermutationSet read_permutation_set(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) fail(ErrorKind::format, "permutation file is empty");
  PermutationSet set;
  std::size_t k = 0;
  {
    std::istringstream hs(header);
    std::string tok;
    int seen = 0;
    while (hs >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) fail(ErrorKind::format, "malformed header token '" + tok + "'");
      const auto key = tok.substr(0, eq), val = tok.substr(eq + 1);
      try {
        if (key == "n") set.n = std::stoul(val), seen |= 1;
        else if (key == "k") k = std::stoul(val), seen |= 2;
        else if (key == "objective") set.objective = parse_objective(val), seen |= 4;
        else if (key == "seed") set.seed = std::stoull(val), seen |= 8;
        else fail(ErrorKind::format, "unknown header key '" + key + "'");
      } catch (const std::logic_error&) {
        fail(ErrorKind::format, "bad value in header token '" + tok + "'");
      }
    }
    if (seen != 15) fail(ErrorKind::format, "permutation header must carry n, k, objective and seed");
  }
  std::unordered_set<std::vector<std::size_t>, detail::IndexVectorHash> seen;
  std::string line;
  for (std::size_t p = 0; p < k; ++p) {
    if (!std::getline(is, line)) fail(ErrorKind::format, "expected " + std::to_string(k) + " permutations, found " + std::to_string(p));
    std::istringstream ls(line);
    std::vector<std::size_t> idx;
    long long v;
    while (ls >> v) {
      if (v < 0) fail(ErrorKind::format, "negative index on line " + std::to_string(p + 2));
      idx.push_back(static_cast<std::size_t>(v));
    }
    if (!ls.eof()) fail(ErrorKind::format, "non-numeric token on line " + std::to_string(p + 2));
    if (idx.size() != set.n) fail(ErrorKind::format, "line " + std::to_string(p + 2) + " has " + std::to_string(idx.size()) + " indices, expected " + std::to_string(set.n));
    Permutation perm(std::move(idx));
    if (!seen.insert(perm.indices()).second) fail(ErrorKind::format, "duplicate permutation on line " + std::to_string(p + 2));
    set.perms.push_back(std::move(perm));
  }
  if (std::getline(is, line) && !line.empty()) fail(ErrorKind::format, "trailing content after " + std::to_string(k) + " permutations");
  set.stats = pairwise_stats(set.perms);
  return set;
}

inline void save_permutation_set(const std::string& path, const PermutationSet& set) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::data, "cannot open '" + path + "' for writing");
  write_permutation_set(os, set);
  if (!os) fail(ErrorKind::data, "write to '" + path + "' failed");
}

inline PermutationSet load_permutation_set(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::data, "cannot open '" + path + "'");
  return read_permutation_set(is);
}

}  // namespace dlva
