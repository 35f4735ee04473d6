// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dlva/synthdata/image.hpp"
#include "dlva/synthdata/vocab.hpp"

namespace dlva {

enum class TokenRole { bos, question, image_patch, answer, reorder_prompt, shuffled_text, drt, sep };

inline const char* to_string(TokenRole r) {
  switch (r) {
    case TokenRole::bos: return "BOS";
    case TokenRole::question: return "QUESTION";
    case TokenRole::image_patch: return "IMAGE_PATCH";
    case TokenRole::answer: return "ANSWER";
    case TokenRole::reorder_prompt: return "REORDER_PROMPT";
    case TokenRole::shuffled_text: return "SHUFFLED_TEXT";
    case TokenRole::drt: return "DRT";
    case TokenRole::sep: return "SEP";
  }
  return "?";
}

enum class SequenceKind { caption, image_order, text_order, conversation };

struct SequenceItem {
  TokenRole role;
  // Vocabulary id, or the patch index into TokenSequence::image for IMAGE_PATCH.
  std::uint32_t payload;
  friend bool operator==(const SequenceItem&, const SequenceItem&) = default;
};

// One assembled training sequence. The model predicts item i from items < i;
// lm_targets[i] is the id at i itself and lm_mask selects where loss applies.
struct TokenSequence {
  SequenceKind kind = SequenceKind::caption;
  std::vector<SequenceItem> items;
  std::vector<std::optional<TokenId>> lm_targets;
  std::vector<unsigned char> lm_mask;
  std::vector<std::size_t> visual_set;
  std::vector<std::size_t> response_set;
  std::optional<std::size_t> perm_target;
  std::optional<std::size_t> drt_position;
  SynthImage image;

  std::size_t size() const { return items.size(); }

  std::vector<std::size_t> masked_positions() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < lm_mask.size(); ++i)
      if (lm_mask[i]) out.push_back(i);
    return out;
  }

  void push_token(TokenRole role, TokenId id, bool loss) {
    if (role == TokenRole::answer) response_set.push_back(items.size());
    if (role == TokenRole::drt) drt_position = items.size();
    items.push_back({role, id});
    lm_targets.emplace_back(id);
    lm_mask.push_back(loss ? 1 : 0);
  }

  void push_patch(std::size_t patch) {
    visual_set.push_back(items.size());
    items.push_back({TokenRole::image_patch, static_cast<std::uint32_t>(patch)});
    lm_targets.emplace_back(std::nullopt);
    lm_mask.push_back(0);
  }

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

// One line per position: `pos role payload target mask`. Token payloads are
// vocabulary ids, patch payloads are written `patch:<index>`, a missing target
// is `-`, mask is 0 or 1.
inline std::string dump_sequence(const TokenSequence& seq) {
  std::ostringstream os;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto& it = seq.items[i];
    os << i << ' ' << to_string(it.role) << ' ';
    if (it.role == TokenRole::image_patch) os << "patch:" << it.payload;
    else os << it.payload;
    os << ' ';
    if (seq.lm_targets[i]) os << *seq.lm_targets[i];
    else os << '-';
    os << ' ' << static_cast<int>(seq.lm_mask[i]) << '\n';
  }
  return os.str();
}

}  // namespace dlva
