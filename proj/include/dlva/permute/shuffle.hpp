// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "dlva/permute/permutation.hpp"
#include "dlva/synthdata/image.hpp"

namespace dlva {

// Patch i of the result is patch k[i] of the input. Cells and the
// original-position record travel with their patches.
inline SynthImage shuffle_image(const SynthImage& img, const Permutation& k) {
  const std::size_t n = img.n_patches();
  if (k.size() != n)
    fail(ErrorKind::dimension, "permutation of length " + std::to_string(k.size()) + " for an image of " +
                                   std::to_string(n) + " patches");
  SynthImage out = img;
  out.cells = k.apply(img.cells);
  out.applied_order = k.apply(img.applied_order);
  const std::size_t w = img.side_px(), row_len = img.cell_px * 3;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = k[i];
    const std::size_t dr = i / img.grid, dc = i % img.grid, sr = src / img.grid, sc = src % img.grid;
    for (std::size_t y = 0; y < img.cell_px; ++y) {
      const double* from = img.pixels.data() + ((sr * img.cell_px + y) * w + sc * img.cell_px) * 3;
      double* to = out.pixels.data() + ((dr * img.cell_px + y) * w + dc * img.cell_px) * 3;
      std::copy(from, from + row_len, to);
    }
  }
  return out;
}

template <typename T>
struct ShuffledText {
  std::vector<T> words;
  Permutation order;
};

// Uniform random reordering of word positions: out[i] = words[k[i]].
template <typename T>
ShuffledText<T> shuffle_text(const std::vector<T>& words, Rng& rng) {
  if (words.empty()) fail(ErrorKind::data, "cannot shuffle an empty word list");
  auto k = Permutation::random(words.size(), rng);
  auto shuffled = k.apply(words);
  return {std::move(shuffled), std::move(k)};
}

template <typename T>
ShuffledText<T> shuffle_text(const std::vector<T>& words, std::uint64_t seed) {
  Rng rng(seed);
  return shuffle_text(words, rng);
}

}  // namespace dlva
