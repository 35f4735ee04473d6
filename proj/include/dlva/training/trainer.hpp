// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dlva/io.hpp"
#include "dlva/losses/losses.hpp"
#include "dlva/model/checkpoint.hpp"
#include "dlva/model/forward.hpp"
#include "dlva/numerics/adam.hpp"
#include "dlva/permute/permutation.hpp"
#include "dlva/permute/permutation_set.hpp"
#include "dlva/rng.hpp"
#include "dlva/sequence/builders.hpp"
#include "dlva/synthdata/corpus.hpp"
#include "dlva/training/config.hpp"

namespace dlva {

// Optimizer plus the parameter subset it updates.
struct TrainState {
  Adam adam;
  std::vector<std::string> names;  // trainable parameter names, in optimizer order
  std::vector<TensorPtr> trainable;
  std::size_t step = 0;  // completed steps

  TrainState(const ModelParams& params, const TrainConfig& cfg) : adam(AdamConfig{cfg.lr}) {
    for (const auto& [name, t] : params.named())
      if (!cfg.frozen(name)) {
        names.push_back(name);
        trainable.push_back(t);
      }
  }
};

struct StepResult {
  LossBreakdown breakdown;
  std::size_t updates = 0;
  std::vector<double> grad_norms;  // global norm of each applied update, after clipping
  std::uint64_t seed = 0;          // step seed every draw of this step derives from
};

namespace detail {

enum class Term { ce, image_order, text_order, i2r };

inline const char* term_name(Term t) {
  switch (t) {
    case Term::ce: return "l_ce";
    case Term::image_order: return "l_io";
    case Term::text_order: return "l_to";
    case Term::i2r: return "l_i2r";
  }
  return "?";
}

inline double term_weight(Term t, const LossWeights& w) {
  switch (t) {
    case Term::ce: return w.ce;
    case Term::image_order: return w.image_order;
    case Term::text_order: return w.text_order;
    case Term::i2r: return w.i2r;
  }
  return 0.0;
}

inline std::optional<double>& term_slot(LossTerms& terms, Term t) {
  switch (t) {
    case Term::ce: return terms.ce;
    case Term::image_order: return terms.image_order;
    case Term::text_order: return terms.text_order;
    case Term::i2r: return terms.i2r;
  }
  return terms.ce;
}

using TermList = std::vector<std::pair<Term, TensorPtr>>;
// Builds one sample's sequence and returns its unweighted loss terms.
using TaskFn = std::function<TermList(Tape&, const Conversation&, Rng&)>;

enum Task : std::uint64_t { task_main = 1, task_image_order = 2, task_text_order = 3 };

}  // namespace detail

// One iteration of the two-stage procedure over `batch`. Task 1 (captioning
// or conversation) trains CE + image-to-response; Task 2 the image order;
// Task 3 (pretrain only) the text order. Each task ends in its own clipped
// Adam update unless cfg.sum_tasks folds them into one.
inline StepResult train_step(ModelParams& params, TrainState& state, std::span<const Conversation* const> batch,
                             const TrainConfig& cfg, const SequenceBuilder& builder, const PermutationSet* perms) {
  using detail::Term;
  using detail::TermList;
  if (batch.empty()) fail(ErrorKind::usage, "train_step needs a nonempty batch");
  if (cfg.enable_image_order && perms == nullptr) fail(ErrorKind::config, "image-order learning needs a permutation set");
  if (cfg.stage == Stage::finetune && cfg.enable_text_order)
    fail(ErrorKind::stage, "text-order learning is not allowed at the finetune stage");

  const std::size_t step = state.step;
  StepResult result;
  result.seed = derive_seed(cfg.seed, {step});
  const bool pretrain = cfg.stage == Stage::pretrain;

  auto i2r_term = [&](Tape& tape, const ForwardOutput& out, const TokenSequence& seq, TermList& terms) {
    if (seq.visual_set.empty() || seq.response_set.empty()) return;
    terms.emplace_back(Term::i2r, loss_image_to_response(tape, out.attention, seq.visual_set, seq.response_set,
                                                         cfg.head_reduction));
  };

  std::vector<std::pair<std::uint64_t, detail::TaskFn>> tasks;
  tasks.emplace_back(detail::task_main, [&](Tape& tape, const Conversation& conv, Rng& rng) {
    TokenSequence seq = pretrain ? builder.build_caption_pretrain(conv, rng) : builder.build_finetune(conv, nullptr, rng, false);
    auto out = forward(tape, params, seq, cfg.enable_i2r);
    TermList terms{{Term::ce, loss_autoregressive(tape, out, seq)}};
    if (cfg.enable_i2r) i2r_term(tape, out, seq, terms);
    return terms;
  });
  if (cfg.enable_image_order)
    tasks.emplace_back(detail::task_image_order, [&](Tape& tape, const Conversation& conv, Rng& rng) {
      TokenSequence seq = pretrain ? builder.build_image_order(conv, *perms, rng) : builder.build_finetune(conv, perms, rng, true);
      const bool with_i2r = cfg.enable_i2r && cfg.i2r_all_tasks;
      auto out = forward(tape, params, seq, with_i2r);
      TermList terms{{Term::image_order, loss_image_order(tape, std::optional<TensorPtr>(predict_permutation(tape, params, out, seq, cfg.order_mode)),
                                                          seq.perm_target)}};
      if (with_i2r) i2r_term(tape, out, seq, terms);
      return terms;
    });
  if (cfg.enable_text_order && pretrain)
    tasks.emplace_back(detail::task_text_order, [&](Tape& tape, const Conversation& conv, Rng& rng) {
      auto seq = builder.build_text_order(conv, rng);
      if (!seq) return TermList{};
      const bool with_i2r = cfg.enable_i2r && cfg.i2r_all_tasks;
      auto out = forward(tape, params, *seq, with_i2r);
      TermList terms{{Term::text_order, loss_text_order(tape, out, *seq)}};
      if (with_i2r) i2r_term(tape, out, *seq, terms);
      return terms;
    });

  const double lr_scale =
      cfg.lr_schedule == LrSchedule::cosine
          ? 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(cfg.steps)))
          : 1.0;
  auto apply_update = [&] {
    clip_grad_norm(state.trainable, cfg.clip);
    result.grad_norms.push_back(global_grad_norm(state.trainable));
    state.adam.step(state.trainable, lr_scale);
    params.zero_grad();
    ++result.updates;
  };

  params.zero_grad();
  std::map<Term, std::pair<double, std::size_t>> sums;
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  for (const auto& [task_id, task] : tasks) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      Rng rng(derive_seed(result.seed, {b, task_id}));
      Conversation blanked;
      const Conversation* conv = batch[b];
      if (cfg.blank_images) {
        blanked = *conv;
        blanked.image = blank_image(conv->image);
        conv = &blanked;
      }
      Tape tape;
      TermList terms;
      try {
        terms = task(tape, *conv, rng);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::numeric) throw;
        fail(ErrorKind::numeric, "step " + std::to_string(step) + ", task " + std::to_string(task_id) + ": " + e.what());
      }
      if (terms.empty()) continue;
      std::vector<TensorPtr> tensors;
      std::vector<double> coeffs;
      for (const auto& [term, t] : terms) {
        if (!std::isfinite(t->item()))
          fail(ErrorKind::numeric, "step " + std::to_string(step) + ": non-finite " + detail::term_name(term));
        auto& s = sums[term];
        s.first += t->item();
        ++s.second;
        tensors.push_back(t);
        coeffs.push_back(detail::term_weight(term, cfg.weights));
      }
      tape.backward(ops::weighted_sum(tape, tensors, coeffs), inv_batch);
    }
    if (!cfg.sum_tasks) apply_update();
  }
  if (cfg.sum_tasks) apply_update();

  LossTerms terms;
  for (const auto& [term, s] : sums) detail::term_slot(terms, term) = s.first / static_cast<double>(s.second);
  result.breakdown = combine(terms, cfg.weights, cfg.stage);
  ++state.step;
  return result;
}

// `step  l_ce  l_io  l_to  l_i2r  total`, tab-separated, `-` for absent terms.
inline std::string format_trace_line(std::size_t step, const LossBreakdown& b) {
  auto field = [](const std::optional<double>& v) { return v ? io::fmt_double(*v) : std::string("-"); };
  return std::to_string(step) + '\t' + field(b.terms.ce) + '\t' + field(b.terms.image_order) + '\t' +
         field(b.terms.text_order) + '\t' + field(b.terms.i2r) + '\t' + io::fmt_double(b.total) + '\n';
}

struct TrainTrace {
  std::vector<std::size_t> steps;
  std::vector<StepResult> results;

  std::string text() const {
    std::string out;
    for (std::size_t i = 0; i < steps.size(); ++i) out += format_trace_line(steps[i], results[i].breakdown);
    return out;
  }
};

// Fills the data-bound model fields and checks the vocabulary fits.
inline ModelConfig bind_model(ModelConfig model, const CorpusSpec& spec, const PermutationSet* perms) {
  model.n_patches = spec.n_patches();
  model.patch_pixels = spec.patch_pixels();
  if (perms != nullptr) model.k_classes = perms->size();
  const auto vocab = spec.vocabulary();
  if (model.vocab_size < vocab.size())
    fail(ErrorKind::config, "vocab_size " + std::to_string(model.vocab_size) + " is smaller than the corpus vocabulary of " +
                                std::to_string(vocab.size()));
  validate(model);
  return model;
}

// Deterministic sample order: epoch e visits the training split in the order
// of a permutation seeded by (seed, e).
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {
    if (n == 0) fail(ErrorKind::data, "training split is empty");
  }

  std::vector<std::size_t> batch(std::size_t step, std::size_t size) {
    std::vector<std::size_t> out;
    for (std::size_t b = 0; b < size; ++b) {
      const std::size_t g = step * size + b;
      const std::size_t epoch = g / n_;
      if (!order_ || epoch_ != epoch) {
        Rng rng(derive_seed(seed_, {0x5A3D1E, epoch}));
        order_ = Permutation::random(n_, rng);
        epoch_ = epoch;
      }
      out.push_back((*order_)[g % n_]);
    }
    return out;
  }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::optional<Permutation> order_;
  std::size_t epoch_ = 0;
};

struct TrainOutcome {
  ModelParams params;
  TrainTrace trace;
  std::size_t completed_steps = 0;
  Checkpoint checkpoint;
};

inline Checkpoint make_checkpoint(const ModelParams& params, const TrainState& state, const TrainConfig& cfg) {
  Checkpoint ck;
  ck.params = params;
  ck.meta["train.stage"] = to_string(cfg.stage);
  ck.meta["train.step"] = std::to_string(state.step);
  ck.meta["train.steps"] = std::to_string(cfg.steps);
  ck.meta["train.seed"] = std::to_string(cfg.seed);
  ck.meta["train.order_mode"] = to_string(cfg.order_mode);
  ck.optimizer = capture_optimizer(state.adam, state.names);
  return ck;
}

// Trains from fresh parameters, from `init` (parameters only), or resumes
// from `resume` (parameters, optimizer state and step counter). Every
// configuration error is raised before the first step.
inline TrainOutcome run_training(const TrainConfig& cfg, const Corpus& corpus, const PermutationSet* perms,
                                 const Checkpoint* init = nullptr, const Checkpoint* resume = nullptr,
                                 std::ostream* log = nullptr) {
  validate(cfg);
  if (init != nullptr && resume != nullptr) fail(ErrorKind::usage, "give either an initial checkpoint or a resume point, not both");
  if (cfg.enable_image_order && perms == nullptr) fail(ErrorKind::config, "image-order learning needs a permutation set");
  if (perms != nullptr && perms->n != corpus.spec.n_patches())
    fail(ErrorKind::config, "permutation set over " + std::to_string(perms->n) + " positions, images have " +
                                std::to_string(corpus.spec.n_patches()) + " patches");

  ModelParams params;
  const Checkpoint* source = resume != nullptr ? resume : init;
  if (source != nullptr) {
    const ModelConfig expected = bind_model(source->params.config, corpus.spec, perms);
    if (!(expected == source->params.config))
      fail(ErrorKind::config, "checkpoint model does not match the corpus/permutation set (patches, pixels or K)");
    params = source->params.clone();
  } else {
    params = init_params(bind_model(cfg.model, corpus.spec, perms), cfg.seed, cfg.init_std);
  }

  TrainState state(params, cfg);
  if (resume != nullptr) {
    auto stage = resume->meta.find("train.stage");
    auto step = resume->meta.find("train.step");
    if (stage == resume->meta.end() || step == resume->meta.end() || !resume->optimizer)
      fail(ErrorKind::config, "resume checkpoint lacks training state");
    if (stage->second != to_string(cfg.stage))
      fail(ErrorKind::config, "resume checkpoint is from stage " + stage->second + ", config runs " + to_string(cfg.stage));
    state.step = std::stoul(step->second);
    restore_optimizer(state.adam, *resume->optimizer, state.names);
    if (state.step > cfg.steps) fail(ErrorKind::config, "resume step is past the configured step count");
  }

  BuilderOptions bopts;
  bopts.caption_loss_in_image_order = cfg.caption_loss_in_image_order;
  const SequenceBuilder builder(corpus.spec.vocabulary(), bopts);
  BatchSampler sampler(corpus.train.size(), cfg.seed);

  std::ofstream trace_file;
  if (!cfg.trace_path.empty()) {
    trace_file.open(cfg.trace_path, resume != nullptr ? std::ios::app : std::ios::trunc);
    if (!trace_file) fail(ErrorKind::data, "cannot open trace file '" + cfg.trace_path + "'");
  }

  TrainOutcome outcome;
  const std::size_t end = cfg.stop_after > 0 ? std::min(cfg.stop_after, cfg.steps) : cfg.steps;
  while (state.step < end) {
    const std::size_t step = state.step;
    std::vector<const Conversation*> batch;
    for (auto i : sampler.batch(step, cfg.batch)) batch.push_back(&corpus.train[i]);
    auto r = train_step(params, state, batch, cfg, builder, perms);
    const auto line = format_trace_line(step, r.breakdown);
    if (trace_file) trace_file << line << std::flush;
    if (log != nullptr && cfg.log_interval > 0 && (step % cfg.log_interval == 0 || step + 1 == end))
      *log << "[" << to_string(cfg.stage) << "] " << line;
    outcome.trace.steps.push_back(step);
    outcome.trace.results.push_back(std::move(r));
  }
  outcome.completed_steps = state.step;
  outcome.checkpoint = make_checkpoint(params, state, cfg);
  if (!cfg.out_checkpoint.empty()) save_checkpoint(outcome.checkpoint, cfg.out_checkpoint);
  outcome.params = std::move(params);
  return outcome;
}

}  // namespace dlva
