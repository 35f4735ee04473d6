// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dlva/io.hpp"
#include "dlva/rng.hpp"
#include "dlva/synthdata/image.hpp"
#include "dlva/synthdata/vocab.hpp"

namespace dlva {

struct CorpusSpec {
  std::size_t n_samples = 2200;
  std::size_t n_val = 200;
  std::size_t grid = 4;
  std::size_t cell_px = 6;
  std::size_t n_colors = 6;
  std::size_t n_shapes = 3;
  std::string template_family = "relation";
  std::uint64_t seed = 1;

  std::size_t n_train() const { return n_samples - n_val; }
  std::size_t n_patches() const { return grid * grid; }
  std::size_t patch_pixels() const { return cell_px * cell_px * 3; }
  Vocabulary vocabulary() const { return Vocabulary(grid, n_colors, n_shapes); }

  friend bool operator==(const CorpusSpec&, const CorpusSpec&) = default;
};

inline void validate(const CorpusSpec& s) {
  if (s.n_samples < 10) fail(ErrorKind::config, "corpus needs at least 10 samples");
  if (s.n_val == 0 || s.n_val >= s.n_samples) fail(ErrorKind::config, "validation split must be nonempty and smaller than the corpus");
  if (s.grid * s.grid < 2) fail(ErrorKind::config, "grid must hold at least two cells");
  if (s.grid > 16) fail(ErrorKind::config, "grid above 16 is not supported");
  if (s.cell_px < 3) fail(ErrorKind::config, "cell_px must be at least 3");
  if (s.template_family != "relation") fail(ErrorKind::config, "unknown caption template family '" + s.template_family + "'");
  (void)s.vocabulary();  // range-checks colors and shapes
}

inline std::string to_text(const CorpusSpec& s) {
  std::ostringstream os;
  os << "n_samples=" << s.n_samples << '\n'
     << "n_val=" << s.n_val << '\n'
     << "grid=" << s.grid << '\n'
     << "cell_px=" << s.cell_px << '\n'
     << "colors=" << s.n_colors << '\n'
     << "shapes=" << s.n_shapes << '\n'
     << "template=" << s.template_family << '\n'
     << "seed=" << s.seed << '\n';
  return os.str();
}

inline CorpusSpec corpus_spec_from_text(const std::string& text) {
  CorpusSpec s;
  const auto kv = io::parse_key_values(text);
  for (const auto& [k, v] : kv) {
    try {
      if (k == "n_samples") s.n_samples = std::stoul(v);
      else if (k == "n_val") s.n_val = std::stoul(v);
      else if (k == "grid") s.grid = std::stoul(v);
      else if (k == "cell_px") s.cell_px = std::stoul(v);
      else if (k == "colors") s.n_colors = std::stoul(v);
      else if (k == "shapes") s.n_shapes = std::stoul(v);
      else if (k == "template") s.template_family = v;
      else if (k == "seed") s.seed = std::stoull(v);
      else fail(ErrorKind::format, "unknown corpus spec key '" + k + "'");
    } catch (const std::logic_error&) {
      fail(ErrorKind::format, "bad value for corpus spec key '" + k + "'");
    }
  }
  return s;
}

struct Turn {
  std::vector<TokenId> question;
  std::vector<TokenId> answer;
  friend bool operator==(const Turn&, const Turn&) = default;
};

struct Conversation {
  SynthImage image;
  std::vector<TokenId> caption;
  std::vector<Turn> turns;
  friend bool operator==(const Conversation&, const Conversation&) = default;
};

struct Corpus {
  CorpusSpec spec;
  std::vector<Conversation> train;
  std::vector<Conversation> val;
  friend bool operator==(const Corpus&, const Corpus&) = default;
};

namespace detail {

// Two objects with distinct (color, shape) pairs in distinct cells.
inline std::vector<Cell> random_grid(const CorpusSpec& spec, Rng& rng) {
  const std::size_t n = spec.n_patches();
  std::vector<Cell> cells(n);
  const std::size_t a = rng.below(n);
  std::size_t b = rng.below(n - 1);
  if (b >= a) ++b;
  const std::size_t pairs = spec.n_colors * spec.n_shapes;
  const std::size_t pa = rng.below(pairs);
  std::size_t pb = rng.below(pairs - 1);
  if (pb >= pa) ++pb;
  cells[a] = {static_cast<int>(pa / spec.n_shapes), static_cast<int>(pa % spec.n_shapes)};
  cells[b] = {static_cast<int>(pb / spec.n_shapes), static_cast<int>(pb % spec.n_shapes)};
  return cells;
}

}  // namespace detail

// "a <color> <shape> {above|left-of} a <color> <shape>". The first mention is
// the upper object, or the left one when both share a row, so each two-object
// grid has exactly one caption and swapping the mentions describes another grid.
inline std::vector<TokenId> relation_caption(const std::vector<Cell>& cells, std::size_t grid, const Vocabulary& vocab) {
  std::vector<std::size_t> objs;
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (!cells[i].empty()) objs.push_back(i);
  if (objs.size() != 2) fail(ErrorKind::data, "relation captions need exactly two objects");
  const std::size_t first = objs[0], second = objs[1];  // row-major order
  const bool same_row = first / grid == second / grid;
  const TokenId a = vocab.id("a");
  auto obj = [&](std::size_t i) {
    return std::vector<TokenId>{a, vocab.color(static_cast<std::size_t>(cells[i].color)),
                                vocab.shape(static_cast<std::size_t>(cells[i].shape))};
  };
  auto out = obj(first);
  out.push_back(vocab.id(same_row ? kLeftOfWord : kAboveWord));
  const auto tail = obj(second);
  out.insert(out.end(), tail.begin(), tail.end());
  return out;
}

inline Conversation generate_sample(const CorpusSpec& spec, const Vocabulary& vocab, std::vector<Cell> cells, Rng& rng) {
  Conversation conv;
  conv.caption = relation_caption(cells, spec.grid, vocab);
  std::vector<std::size_t> objs, empties;
  for (std::size_t i = 0; i < cells.size(); ++i) (cells[i].empty() ? empties : objs).push_back(i);
  const std::size_t n_turns = 1 + rng.below(3);
  for (std::size_t t = 0; t < n_turns; ++t) {
    const bool ask_color = rng.coin();
    std::size_t cell;
    if (empties.empty() || rng.uniform() < 0.75) cell = objs[rng.below(objs.size())];
    else cell = empties[rng.below(empties.size())];
    Turn turn;
    turn.question = {vocab.id("what"), vocab.id(ask_color ? "color" : "shape"), vocab.id("is"), vocab.id("cell"),
                     vocab.row(cell / spec.grid), vocab.col(cell % spec.grid), vocab.id("?")};
    const Cell& c = cells[cell];
    if (c.empty()) turn.answer = {vocab.none()};
    else turn.answer = {ask_color ? vocab.color(static_cast<std::size_t>(c.color))
                                  : vocab.shape(static_cast<std::size_t>(c.shape))};
    conv.turns.push_back(std::move(turn));
  }
  conv.image = render_image(spec.grid, spec.cell_px, std::move(cells));
  return conv;
}

// Every sample is a pure function of (spec, index). Validation grids are
// redrawn until they differ from every training grid.
inline Corpus generate_corpus(const CorpusSpec& spec) {
  validate(spec);
  const auto vocab = spec.vocabulary();
  Corpus corpus;
  corpus.spec = spec;
  std::set<std::vector<std::pair<int, int>>> train_grids;
  auto key = [](const std::vector<Cell>& cells) {
    std::vector<std::pair<int, int>> k;
    for (const auto& c : cells) k.emplace_back(c.color, c.shape);
    return k;
  };
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    const bool is_val = i >= spec.n_train();
    for (std::uint64_t attempt = 0;; ++attempt) {
      if (attempt > 10000) fail(ErrorKind::data, "could not draw a validation grid disjoint from training");
      Rng rng(derive_seed(spec.seed, {i, attempt}));
      auto cells = detail::random_grid(spec, rng);
      if (is_val && train_grids.count(key(cells))) continue;
      if (!is_val) train_grids.insert(key(cells));
      auto conv = generate_sample(spec, vocab, std::move(cells), rng);
      (is_val ? corpus.val : corpus.train).push_back(std::move(conv));
      break;
    }
  }
  return corpus;
}

inline void check_vocab_fits(const CorpusSpec& spec, std::size_t model_vocab_size) {
  const auto v = spec.vocabulary().size();
  if (v > model_vocab_size)
    fail(ErrorKind::config, "corpus vocabulary has " + std::to_string(v) + " words but the model holds " +
                                std::to_string(model_vocab_size));
}

inline constexpr char kCorpusMagic[4] = {'D', 'L', 'V', 'C'};
inline constexpr std::uint32_t kCorpusVersion = 1;

namespace detail {

inline void put_ids(io::ByteWriter& w, const std::vector<TokenId>& ids) {
  if (ids.size() > 0xffff) fail(ErrorKind::data, "token list too long for corpus record");
  w.u16(static_cast<std::uint16_t>(ids.size()));
  for (auto id : ids) w.u16(static_cast<std::uint16_t>(id));
}

inline std::vector<TokenId> get_ids(io::ByteReader& r, std::size_t vocab_size) {
  std::vector<TokenId> ids(r.u16());
  for (auto& id : ids) {
    id = r.u16();
    if (id >= vocab_size) r.error("token id " + std::to_string(id) + " outside vocabulary");
  }
  return ids;
}

}  // namespace detail

// Layout: magic "DLVC", version u32, spec text (u32 length + key=value lines),
// n_train u32, n_val u32, then per sample a u32 byte length followed by the
// cells (color i8, shape i8 each), caption ids, and turns.
inline std::string serialize_corpus(const Corpus& corpus) {
  io::ByteWriter w;
  w.raw(kCorpusMagic, 4);
  w.u32(kCorpusVersion);
  const auto spec_text = to_text(corpus.spec);
  w.u32(static_cast<std::uint32_t>(spec_text.size()));
  w.bytes(spec_text);
  w.u32(static_cast<std::uint32_t>(corpus.train.size()));
  w.u32(static_cast<std::uint32_t>(corpus.val.size()));
  for (const auto* split : {&corpus.train, &corpus.val})
    for (const auto& conv : *split) {
      io::ByteWriter rec;
      for (const auto& c : conv.image.cells) {
        rec.u8(static_cast<std::uint8_t>(static_cast<std::int8_t>(c.color)));
        rec.u8(static_cast<std::uint8_t>(static_cast<std::int8_t>(c.shape)));
      }
      detail::put_ids(rec, conv.caption);
      rec.u8(static_cast<std::uint8_t>(conv.turns.size()));
      for (const auto& t : conv.turns) {
        detail::put_ids(rec, t.question);
        detail::put_ids(rec, t.answer);
      }
      w.u32(static_cast<std::uint32_t>(rec.size()));
      w.bytes(rec.buffer());
    }
  return w.buffer();
}

inline Corpus deserialize_corpus(const std::string& bytes) {
  io::ByteReader r(bytes);
  if (r.bytes(4) != std::string(kCorpusMagic, 4)) r.error("bad corpus magic");
  if (const auto v = r.u32(); v != kCorpusVersion) r.error("unsupported corpus version " + std::to_string(v));
  Corpus corpus;
  corpus.spec = corpus_spec_from_text(r.bytes(r.u32()));
  validate(corpus.spec);
  const auto vocab = corpus.spec.vocabulary();
  const std::size_t n_train = r.u32(), n_val = r.u32();
  if (n_train != corpus.spec.n_train() || n_val != corpus.spec.n_val)
    r.error("record counts disagree with the spec header");
  const std::size_t cells = corpus.spec.n_patches();
  for (std::size_t i = 0; i < n_train + n_val; ++i) {
    const std::size_t len = r.u32();
    const std::size_t start = r.offset();
    if (r.remaining() < len) r.error("truncated record " + std::to_string(i));
    std::vector<Cell> grid(cells);
    for (auto& c : grid) {
      c.color = static_cast<std::int8_t>(r.u8());
      c.shape = static_cast<std::int8_t>(r.u8());
      if (c.color >= static_cast<int>(corpus.spec.n_colors) || c.shape >= static_cast<int>(corpus.spec.n_shapes) ||
          (c.color < 0) != (c.shape < 0))
        r.error("invalid cell in record " + std::to_string(i));
    }
    Conversation conv;
    conv.caption = detail::get_ids(r, vocab.size());
    conv.turns.resize(r.u8());
    for (auto& t : conv.turns) {
      t.question = detail::get_ids(r, vocab.size());
      t.answer = detail::get_ids(r, vocab.size());
    }
    if (r.offset() - start != len) r.error("record " + std::to_string(i) + " length mismatch");
    conv.image = render_image(corpus.spec.grid, corpus.spec.cell_px, std::move(grid));
    (i < n_train ? corpus.train : corpus.val).push_back(std::move(conv));
  }
  if (!r.done()) r.error("trailing bytes after last record");
  return corpus;
}

inline void write_corpus(const std::string& path, const Corpus& corpus) { io::write_file(path, serialize_corpus(corpus)); }
inline Corpus read_corpus(const std::string& path) { return deserialize_corpus(io::read_file(path)); }

}  // namespace dlva
