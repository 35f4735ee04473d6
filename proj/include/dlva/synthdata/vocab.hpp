// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dlva/errors.hpp"
#include "dlva/synthdata/image.hpp"

namespace dlva {

using TokenId = std::uint32_t;

// Fixed prompt texts. Tokenization is a whitespace split; punctuation stays
// attached to its word.
inline const std::vector<std::string> kCaptionQuestions = {"describe the image", "caption this image",
                                                           "what is shown"};
inline const std::string kReorderPrompt = "re-order the sentence to represent the information of the image:";
inline const std::string kAboveWord = "above";
inline const std::string kLeftOfWord = "left-of";
inline const std::string kNoneWord = "none";

inline std::vector<std::string> split_words(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

// Closed vocabulary derived from the corpus geometry and attribute counts.
// Ids 0..2 are reserved: <bos>, <sep>, <drt>.
class Vocabulary {
 public:
  static constexpr TokenId bos = 0;
  static constexpr TokenId sep = 1;
  static constexpr TokenId drt = 2;

  Vocabulary(std::size_t grid, std::size_t n_colors, std::size_t n_shapes) {
    if (n_colors < 2 || n_colors > kMaxColors) fail(ErrorKind::config, "colors must lie in [2, " + std::to_string(kMaxColors) + "]");
    if (n_shapes < 2 || n_shapes > kMaxShapes) fail(ErrorKind::config, "shapes must lie in [2, " + std::to_string(kMaxShapes) + "]");
    for (const char* w : {"<bos>", "<sep>", "<drt>"}) add(w);
    for (const auto& q : kCaptionQuestions)
      for (const auto& w : split_words(q)) add(w);
    for (const auto& w : split_words(kReorderPrompt)) add(w);
    add("a");
    add(kAboveWord);
    add(kLeftOfWord);
    for (std::size_t c = 0; c < n_colors; ++c) color_ids_.push_back(add(kColorNames[c]));
    for (std::size_t s = 0; s < n_shapes; ++s) shape_ids_.push_back(add(kShapeNames[s]));
    for (const char* w : {"what", "color", "shape", "is", "cell", "?"}) add(w);
    for (std::size_t r = 0; r < grid; ++r) row_ids_.push_back(add("r" + std::to_string(r)));
    for (std::size_t c = 0; c < grid; ++c) col_ids_.push_back(add("c" + std::to_string(c)));
    none_ = add(kNoneWord);
  }

  std::size_t size() const { return words_.size(); }

  TokenId id(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) fail(ErrorKind::index, "word '" + word + "' is not in the vocabulary");
    return it->second;
  }
  bool contains(const std::string& word) const { return index_.count(word) != 0; }

  const std::string& word(TokenId id) const {
    if (id >= words_.size()) fail(ErrorKind::index, "token id " + std::to_string(id) + " outside vocabulary");
    return words_[id];
  }

  std::vector<TokenId> encode(const std::string& text) const {
    std::vector<TokenId> out;
    for (const auto& w : split_words(text)) out.push_back(id(w));
    return out;
  }

  std::string decode(const std::vector<TokenId>& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) out += (i ? " " : "") + word(ids[i]);
    return out;
  }

  TokenId color(std::size_t c) const { return color_ids_.at(c); }
  TokenId shape(std::size_t s) const { return shape_ids_.at(s); }
  TokenId row(std::size_t r) const { return row_ids_.at(r); }
  TokenId col(std::size_t c) const { return col_ids_.at(c); }
  TokenId none() const { return none_; }

  // Words that can appear as a single-token QA answer.
  std::vector<TokenId> answer_vocabulary() const {
    std::vector<TokenId> out(color_ids_);
    out.insert(out.end(), shape_ids_.begin(), shape_ids_.end());
    out.push_back(none_);
    return out;
  }

 private:
  TokenId add(const std::string& w) {
    auto [it, inserted] = index_.emplace(w, static_cast<TokenId>(words_.size()));
    if (inserted) words_.push_back(w);
    return it->second;
  }

  std::vector<std::string> words_;
  std::map<std::string, TokenId> index_;
  std::vector<TokenId> color_ids_, shape_ids_, row_ids_, col_ids_;
  TokenId none_ = 0;
};

}  // namespace dlva
