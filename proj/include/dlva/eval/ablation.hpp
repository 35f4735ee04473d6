// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dlva/errors.hpp"
#include "dlva/eval/metrics.hpp"
#include "dlva/training/trainer.hpp"

namespace dlva {

// Toggles a grid may vary.
//   text_order           pretrain Task 3        (0/1)
//   image_order          pretrain Task 2        (0/1)
//   finetune_image_order finetune Task 2        (0/1)
//   i2r                  image-to-response loss in both stages (0/1)
//   order_mode           drt/vis, training and evaluation
//   sum_tasks            one summed update per step (0/1)
inline const std::vector<std::string>& ablation_axes() {
  static const std::vector<std::string> axes = {"text_order", "image_order", "finetune_image_order",
                                                "i2r",        "order_mode",  "sum_tasks"};
  return axes;
}

using AblationCell = std::map<std::string, std::string>;

struct AblationAxis {
  std::string name;
  std::vector<std::string> values;
};

// Full factorial product, first axis varying slowest.
inline std::vector<AblationCell> factorial(const std::vector<AblationAxis>& axes) {
  std::vector<AblationCell> cells{{}};
  for (const auto& axis : axes) {
    if (axis.values.empty()) fail(ErrorKind::config, "axis '" + axis.name + "' has no values");
    std::vector<AblationCell> next;
    for (const auto& c : cells)
      for (const auto& v : axis.values) {
        auto cell = c;
        cell[axis.name] = v;
        next.push_back(std::move(cell));
      }
    cells = std::move(next);
  }
  return cells;
}

// The seven toggle configurations of the shuffle/I2R ladder:
// (text_order, image_order, finetune_image_order, i2r).
inline std::vector<AblationCell> shuffle_ladder() {
  const char* rows[] = {"0000", "0001", "1000", "0100", "1100", "1110", "1111"};
  std::vector<AblationCell> cells;
  for (const char* r : rows) {
    AblationCell c;
    c["text_order"] = std::string(1, r[0]);
    c["image_order"] = std::string(1, r[1]);
    c["finetune_image_order"] = std::string(1, r[2]);
    c["i2r"] = std::string(1, r[3]);
    cells.push_back(std::move(c));
  }
  return cells;
}

struct AblationBase {
  TrainConfig pretrain;
  std::optional<TrainConfig> finetune;  // run after pretraining from its parameters
  EvalOptions eval;
};

struct AblationRow {
  AblationCell cell;
  std::optional<MetricsReport> report;
  std::string error;  // set when the cell failed
};

namespace detail {

inline bool parse_flag(const std::string& axis, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  fail(ErrorKind::config, "axis " + axis + " takes 0/1, got '" + v + "'");
}

inline void apply_cell(const AblationCell& cell, AblationBase& b) {
  for (const auto& [axis, v] : cell) {
    if (axis == "text_order") {
      b.pretrain.enable_text_order = parse_flag(axis, v);
    } else if (axis == "image_order") {
      b.pretrain.enable_image_order = parse_flag(axis, v);
    } else if (axis == "finetune_image_order") {
      if (b.finetune) b.finetune->enable_image_order = parse_flag(axis, v);
    } else if (axis == "i2r") {
      b.pretrain.enable_i2r = parse_flag(axis, v);
      if (b.finetune) b.finetune->enable_i2r = b.pretrain.enable_i2r;
    } else if (axis == "order_mode") {
      b.pretrain.order_mode = b.eval.mode = parse_order_mode(v);
      if (b.finetune) b.finetune->order_mode = b.eval.mode;
    } else if (axis == "sum_tasks") {
      b.pretrain.sum_tasks = parse_flag(axis, v);
      if (b.finetune) b.finetune->sum_tasks = b.pretrain.sum_tasks;
    } else {
      fail(ErrorKind::config, "unknown ablation axis '" + axis + "'");
    }
  }
}

}  // namespace detail

inline std::string cell_label(const AblationCell& cell) {
  std::string s;
  for (const auto& [k, v] : cell) s += (s.empty() ? "" : " ") + k + "=" + v;
  return s.empty() ? "base" : s;
}

// Trains and evaluates every cell from the same seeds. A failing cell is
// recorded and the grid moves on; unknown axes fail before any training.
inline std::vector<AblationRow> run_ablation_grid(const AblationBase& base, const std::vector<AblationCell>& cells,
                                                  const Corpus& corpus, const PermutationSet* perms,
                                                  std::ostream* log = nullptr) {
  for (const auto& cell : cells) {
    AblationBase probe = base;
    detail::apply_cell(cell, probe);
  }
  std::vector<AblationRow> rows;
  for (const auto& cell : cells) {
    AblationRow row;
    row.cell = cell;
    try {
      AblationBase b = base;
      detail::apply_cell(cell, b);
      b.pretrain.out_checkpoint.clear();
      b.pretrain.trace_path.clear();
      if (log != nullptr) *log << "cell: " << cell_label(cell) << '\n';
      auto pre = run_training(b.pretrain, corpus, perms, nullptr, nullptr, log);
      ModelParams final_params = std::move(pre.params);
      if (b.finetune) {
        b.finetune->out_checkpoint.clear();
        b.finetune->trace_path.clear();
        Checkpoint init;
        init.params = std::move(final_params);
        final_params = run_training(*b.finetune, corpus, perms, &init, nullptr, log).params;
      }
      const bool order_trained = b.pretrain.enable_image_order || (b.finetune && b.finetune->enable_image_order);
      row.report = evaluate(final_params, corpus, order_trained ? perms : nullptr, b.eval);
      for (const auto& [k, v] : cell) row.report->config["cell." + k] = v;
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// Header plus one comma-separated row per cell; failed cells leave the
// metric columns empty and carry the message in `status`.
inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::vector<std::string> axes;
  for (const auto& r : rows)
    for (const auto& [k, v] : r.cell)
      if (std::find(axes.begin(), axes.end(), k) == axes.end()) axes.push_back(k);
  std::ostringstream os;
  for (const auto& a : axes) os << a << ',';
  for (const auto& c : MetricsReport::columns()) os << c << ',';
  os << "status\n";
  for (const auto& r : rows) {
    for (const auto& a : axes) {
      auto it = r.cell.find(a);
      os << (it == r.cell.end() ? "" : it->second) << ',';
    }
    if (r.report) {
      for (const auto& v : r.report->values()) os << v << ',';
      os << "ok\n";
    } else {
      for (std::size_t i = 0; i < MetricsReport::columns().size(); ++i) os << ',';
      std::string msg = r.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      os << "error: " << msg << '\n';
    }
  }
  return os.str();
}

}  // namespace dlva
