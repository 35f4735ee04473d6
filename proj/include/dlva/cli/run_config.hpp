// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dlva/errors.hpp"
#include "dlva/io.hpp"
#include "dlva/permute/permutation_set.hpp"
#include "dlva/synthdata/corpus.hpp"
#include "dlva/training/config.hpp"

namespace dlva {

struct PermSpec {
  std::size_t n = 16;
  std::size_t k = 100;
  SelectionObjective objective = SelectionObjective::min_avg;
  std::size_t pool = 100;
  std::uint64_t seed = 1;
  friend bool operator==(const PermSpec&, const PermSpec&) = default;
};

// A run file: `key = value` lines. Training keys apply to both stages unless
// written as `pretrain.<key>` or `finetune.<key>`, which override them for
// that stage only. Corpus keys carry a `corpus.` prefix, permutation-set keys
// `perms.`, architecture keys `model.`.
struct RunConfig {
  CorpusSpec corpus;
  PermSpec perms;
  TrainConfig train;
  std::map<std::string, std::string> pretrain_overrides;
  std::map<std::string, std::string> finetune_overrides;

  RunConfig() {
    pretrain_overrides = {{"out_checkpoint", "pretrain.ckpt"}, {"trace_path", "pretrain_trace.tsv"}};
    finetune_overrides = {{"steps", "1000"},
                          {"enable_text_order", "false"},
                          {"init_checkpoint", "pretrain.ckpt"},
                          {"out_checkpoint", "finetune.ckpt"},
                          {"trace_path", "finetune_trace.tsv"}};
    train.corpus_path = "corpus.bin";
    train.perms_path = "perms.txt";
  }

  TrainConfig stage_config(Stage stage) const;
};

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(ErrorKind::config, "'" + key + "' expects true or false, got '" + v + "'");
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (v.empty() || v.front() == '-') throw std::invalid_argument(v);
    const auto out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::logic_error&) {
    fail(ErrorKind::config, "'" + key + "' expects a nonnegative integer, got '" + v + "'");
  }
}

inline double parse_f64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::logic_error&) {
    fail(ErrorKind::config, "'" + key + "' expects a number, got '" + v + "'");
  }
}

inline std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
  return s;
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto t = io::trim(item); !t.empty()) out.push_back(t);
  return out;
}

struct TrainKey {
  const char* name;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

inline std::string b2s(bool b) { return b ? "true" : "false"; }

inline const std::vector<TrainKey>& train_keys() {
  using C = TrainConfig;
  using S = const std::string&;
  static const std::vector<TrainKey> keys = {
      {"steps", [](const C& c) { return std::to_string(c.steps); }, [](C& c, S v) { c.steps = parse_u64("steps", v); }},
      {"batch", [](const C& c) { return std::to_string(c.batch); }, [](C& c, S v) { c.batch = parse_u64("batch", v); }},
      {"lr", [](const C& c) { return io::fmt_double(c.lr); }, [](C& c, S v) { c.lr = parse_f64("lr", v); }},
      {"clip", [](const C& c) { return io::fmt_double(c.clip); }, [](C& c, S v) { c.clip = parse_f64("clip", v); }},
      {"seed", [](const C& c) { return std::to_string(c.seed); }, [](C& c, S v) { c.seed = parse_u64("seed", v); }},
      {"w_ce", [](const C& c) { return io::fmt_double(c.weights.ce); }, [](C& c, S v) { c.weights.ce = parse_f64("w_ce", v); }},
      {"w_image_order", [](const C& c) { return io::fmt_double(c.weights.image_order); },
       [](C& c, S v) { c.weights.image_order = parse_f64("w_image_order", v); }},
      {"w_text_order", [](const C& c) { return io::fmt_double(c.weights.text_order); },
       [](C& c, S v) { c.weights.text_order = parse_f64("w_text_order", v); }},
      {"w_i2r", [](const C& c) { return io::fmt_double(c.weights.i2r); }, [](C& c, S v) { c.weights.i2r = parse_f64("w_i2r", v); }},
      {"enable_text_order", [](const C& c) { return b2s(c.enable_text_order); },
       [](C& c, S v) { c.enable_text_order = parse_bool("enable_text_order", v); }},
      {"enable_image_order", [](const C& c) { return b2s(c.enable_image_order); },
       [](C& c, S v) { c.enable_image_order = parse_bool("enable_image_order", v); }},
      {"enable_i2r", [](const C& c) { return b2s(c.enable_i2r); }, [](C& c, S v) { c.enable_i2r = parse_bool("enable_i2r", v); }},
      {"order_mode", [](const C& c) { return std::string(to_string(c.order_mode)); },
       [](C& c, S v) { c.order_mode = parse_order_mode(v); }},
      {"sum_tasks", [](const C& c) { return b2s(c.sum_tasks); }, [](C& c, S v) { c.sum_tasks = parse_bool("sum_tasks", v); }},
      {"i2r_all_tasks", [](const C& c) { return b2s(c.i2r_all_tasks); },
       [](C& c, S v) { c.i2r_all_tasks = parse_bool("i2r_all_tasks", v); }},
      {"head_reduction", [](const C& c) { return std::string(to_string(c.head_reduction)); },
       [](C& c, S v) { c.head_reduction = parse_head_reduction(v); }},
      {"lr_schedule", [](const C& c) { return std::string(to_string(c.lr_schedule)); },
       [](C& c, S v) { c.lr_schedule = parse_lr_schedule(v); }},
      {"caption_loss_in_image_order", [](const C& c) { return b2s(c.caption_loss_in_image_order); },
       [](C& c, S v) { c.caption_loss_in_image_order = parse_bool("caption_loss_in_image_order", v); }},
      {"blank_images", [](const C& c) { return b2s(c.blank_images); },
       [](C& c, S v) { c.blank_images = parse_bool("blank_images", v); }},
      {"freeze", [](const C& c) { return join(c.freeze); }, [](C& c, S v) { c.freeze = split_list(v); }},
      {"init_std", [](const C& c) { return io::fmt_double(c.init_std); }, [](C& c, S v) { c.init_std = parse_f64("init_std", v); }},
      {"corpus_path", [](const C& c) { return c.corpus_path; }, [](C& c, S v) { c.corpus_path = v; }},
      {"perms_path", [](const C& c) { return c.perms_path; }, [](C& c, S v) { c.perms_path = v; }},
      {"init_checkpoint", [](const C& c) { return c.init_checkpoint; }, [](C& c, S v) { c.init_checkpoint = v; }},
      {"out_checkpoint", [](const C& c) { return c.out_checkpoint; }, [](C& c, S v) { c.out_checkpoint = v; }},
      {"trace_path", [](const C& c) { return c.trace_path; }, [](C& c, S v) { c.trace_path = v; }},
      {"log_interval", [](const C& c) { return std::to_string(c.log_interval); },
       [](C& c, S v) { c.log_interval = parse_u64("log_interval", v); }},
      {"stop_after", [](const C& c) { return std::to_string(c.stop_after); },
       [](C& c, S v) { c.stop_after = parse_u64("stop_after", v); }},
  };
  return keys;
}

inline bool set_train_key(TrainConfig& c, const std::string& key, const std::string& value) {
  if (key.rfind("model.", 0) == 0) return set_model_field(c.model, key.substr(6), value);
  for (const auto& k : train_keys())
    if (key == k.name) {
      k.set(c, value);
      return true;
    }
  return false;
}

inline bool set_corpus_key(CorpusSpec& s, const std::string& key, const std::string& v) {
  if (key == "n_samples") s.n_samples = parse_u64("corpus.n_samples", v);
  else if (key == "n_val") s.n_val = parse_u64("corpus.n_val", v);
  else if (key == "grid") s.grid = parse_u64("corpus.grid", v);
  else if (key == "cell_px") s.cell_px = parse_u64("corpus.cell_px", v);
  else if (key == "colors") s.n_colors = parse_u64("corpus.colors", v);
  else if (key == "shapes") s.n_shapes = parse_u64("corpus.shapes", v);
  else if (key == "template") s.template_family = v;
  else if (key == "seed") s.seed = parse_u64("corpus.seed", v);
  else return false;
  return true;
}

inline bool set_perm_key(PermSpec& p, const std::string& key, const std::string& v) {
  if (key == "n") p.n = parse_u64("perms.n", v);
  else if (key == "k") p.k = parse_u64("perms.k", v);
  else if (key == "objective") {
    try {
      p.objective = parse_objective(v);
    } catch (const Error& e) {
      fail(ErrorKind::config, e.what());
    }
  } else if (key == "pool") p.pool = parse_u64("perms.pool", v);
  else if (key == "seed") p.seed = parse_u64("perms.seed", v);
  else return false;
  return true;
}

}  // namespace detail

inline TrainConfig RunConfig::stage_config(Stage stage) const {
  TrainConfig c = train;
  c.stage = stage;
  for (const auto& [k, v] : stage == Stage::pretrain ? pretrain_overrides : finetune_overrides) detail::set_train_key(c, k, v);
  return c;
}

// Applies one key. Unknown keys are config errors.
inline void set_run_key(RunConfig& rc, const std::string& key, const std::string& value) {
  auto unknown = [&] { fail(ErrorKind::config, "unknown config key '" + key + "'"); };
  auto with_prefix = [&](const char* p) { return key.rfind(p, 0) == 0; };
  if (with_prefix("corpus.")) {
    if (!detail::set_corpus_key(rc.corpus, key.substr(7), value)) unknown();
  } else if (with_prefix("perms.")) {
    if (!detail::set_perm_key(rc.perms, key.substr(6), value)) unknown();
  } else if (with_prefix("pretrain.") || with_prefix("finetune.")) {
    const bool pre = with_prefix("pretrain.");
    const std::string sub = key.substr(9);
    TrainConfig probe;
    if (!detail::set_train_key(probe, sub, value)) unknown();
    (pre ? rc.pretrain_overrides : rc.finetune_overrides)[sub] = value;
  } else if (!detail::set_train_key(rc.train, key, value)) {
    unknown();
  }
}

inline RunConfig parse_run_config(const std::string& text) {
  RunConfig rc;
  std::map<std::string, std::string> kv;
  try {
    kv = io::parse_key_values(text);
  } catch (const Error& e) {
    fail(ErrorKind::config, e.what());
  }
  for (const auto& [k, v] : kv) set_run_key(rc, k, v);
  return rc;
}

inline RunConfig load_run_config(const std::string& path) { return parse_run_config(io::read_file(path)); }

// Every key with its current value: corpus, permutation set, model, shared
// training keys, then the stage overrides.
inline std::string serialize_run_config(const RunConfig& rc) {
  std::ostringstream os;
  const auto& s = rc.corpus;
  os << "corpus.n_samples = " << s.n_samples << '\n'
     << "corpus.n_val = " << s.n_val << '\n'
     << "corpus.grid = " << s.grid << '\n'
     << "corpus.cell_px = " << s.cell_px << '\n'
     << "corpus.colors = " << s.n_colors << '\n'
     << "corpus.shapes = " << s.n_shapes << '\n'
     << "corpus.template = " << s.template_family << '\n'
     << "corpus.seed = " << s.seed << '\n';
  os << "perms.n = " << rc.perms.n << '\n'
     << "perms.k = " << rc.perms.k << '\n'
     << "perms.objective = " << to_string(rc.perms.objective) << '\n'
     << "perms.pool = " << rc.perms.pool << '\n'
     << "perms.seed = " << rc.perms.seed << '\n';
  std::istringstream model(to_text(rc.train.model));
  std::string line;
  while (std::getline(model, line)) {
    const auto eq = line.find('=');
    os << "model." << line.substr(0, eq) << " = " << line.substr(eq + 1) << '\n';
  }
  for (const auto& k : detail::train_keys()) os << k.name << " = " << k.get(rc.train) << '\n';
  for (const auto& [k, v] : rc.pretrain_overrides) os << "pretrain." << k << " = " << v << '\n';
  for (const auto& [k, v] : rc.finetune_overrides) os << "finetune." << k << " = " << v << '\n';
  return os.str();
}

inline bool operator==(const RunConfig& a, const RunConfig& b) {
  return serialize_run_config(a) == serialize_run_config(b);
}

}  // namespace dlva
