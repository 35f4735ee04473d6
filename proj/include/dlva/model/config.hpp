// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <map>
#include <utility>
#include <sstream>
#include <string>

#include "dlva/errors.hpp"

namespace dlva {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t vocab_size = 64;  // includes the reserved <bos>/<sep>/<drt> ids
  std::size_t patch_pixels = 108;
  std::size_t n_patches = 16;
  std::size_t max_seq_len = 64;
  std::size_t k_classes = 100;
  std::size_t connector_hidden = 64;

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t mlp_hidden() const { return 4 * d_model; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void validate(const ModelConfig& c) {
  const std::initializer_list<std::pair<const char*, std::size_t>> extents = {
      {"d_model", c.d_model},         {"n_layers", c.n_layers},   {"n_heads", c.n_heads},
      {"vocab_size", c.vocab_size},   {"patch_pixels", c.patch_pixels}, {"n_patches", c.n_patches},
      {"max_seq_len", c.max_seq_len}, {"connector_hidden", c.connector_hidden}};
  for (auto [name, v] : extents)
    if (v == 0) fail(ErrorKind::config, std::string(name) + " must be positive");
  if (c.d_model % c.n_heads != 0)
    fail(ErrorKind::config, "d_model " + std::to_string(c.d_model) + " is not divisible by " + std::to_string(c.n_heads) + " heads");
  if (c.k_classes < 2) fail(ErrorKind::config, "k_classes must be at least 2");
  if (c.vocab_size < 3) fail(ErrorKind::config, "vocab_size must cover the three reserved ids");
}

inline std::string to_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "d_model=" << c.d_model << '\n'
     << "n_layers=" << c.n_layers << '\n'
     << "n_heads=" << c.n_heads << '\n'
     << "vocab_size=" << c.vocab_size << '\n'
     << "patch_pixels=" << c.patch_pixels << '\n'
     << "n_patches=" << c.n_patches << '\n'
     << "max_seq_len=" << c.max_seq_len << '\n'
     << "k_classes=" << c.k_classes << '\n'
     << "connector_hidden=" << c.connector_hidden << '\n';
  return os.str();
}

// Assigns `key` if it names a model field. Returns false for other keys.
inline bool set_model_field(ModelConfig& c, const std::string& key, const std::string& value) {
  std::size_t* field = nullptr;
  if (key == "d_model") field = &c.d_model;
  else if (key == "n_layers") field = &c.n_layers;
  else if (key == "n_heads") field = &c.n_heads;
  else if (key == "vocab_size") field = &c.vocab_size;
  else if (key == "patch_pixels") field = &c.patch_pixels;
  else if (key == "n_patches") field = &c.n_patches;
  else if (key == "max_seq_len") field = &c.max_seq_len;
  else if (key == "k_classes") field = &c.k_classes;
  else if (key == "connector_hidden") field = &c.connector_hidden;
  else return false;
  try {
    std::size_t used = 0;
    *field = std::stoul(value, &used);
    if (used != value.size() || value.front() == '-') throw std::invalid_argument(value);
  } catch (const std::logic_error&) {
    fail(ErrorKind::config, "bad value '" + value + "' for " + key);
  }
  return true;
}

}  // namespace dlva
