// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dlva/errors.hpp"
#include "dlva/losses/losses.hpp"
#include "dlva/model/config.hpp"
#include "dlva/model/forward.hpp"

namespace dlva {

enum class LrSchedule { constant, cosine };

inline const char* to_string(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "cosine"; }

inline LrSchedule parse_lr_schedule(const std::string& s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "cosine") return LrSchedule::cosine;
  fail(ErrorKind::config, "unknown lr schedule '" + s + "' (expected constant or cosine)");
}

struct TrainConfig {
  Stage stage = Stage::pretrain;
  std::size_t steps = 2000;
  std::size_t batch = 8;
  double lr = 3e-4;
  double clip = 1.0;  // global gradient-norm bound; 0 disables
  std::uint64_t seed = 1;
  LossWeights weights;

  bool enable_text_order = true;
  bool enable_image_order = true;
  bool enable_i2r = true;
  OrderMode order_mode = OrderMode::drt;
  bool sum_tasks = false;      // one summed update per step instead of one per task
  bool i2r_all_tasks = false;  // also apply the image-to-response loss in the order tasks
  HeadReduction head_reduction = HeadReduction::mean;
  LrSchedule lr_schedule = LrSchedule::constant;
  bool caption_loss_in_image_order = false;
  bool blank_images = false;  // train on blank images (control runs)
  std::vector<std::string> freeze;  // parameter-name prefixes held fixed

  // Architecture; patch_pixels, n_patches and k_classes are bound from the
  // corpus and permutation set when training starts.
  ModelConfig model;
  double init_std = 0.02;

  std::string corpus_path;
  std::string perms_path;
  std::string init_checkpoint;  // parameters to start from (e.g. the pretrain result)
  std::string out_checkpoint;
  std::string trace_path;
  std::size_t log_interval = 100;  // 0 silences progress lines
  std::size_t stop_after = 0;      // end the run after this many total steps; 0 runs to `steps`

  std::size_t updates_per_step() const {
    if (sum_tasks) return 1;
    return 1 + (enable_image_order ? 1 : 0) + (enable_text_order && stage == Stage::pretrain ? 1 : 0);
  }

  bool frozen(const std::string& name) const {
    for (const auto& p : freeze)
      if (name.rfind(p, 0) == 0) return true;
    return false;
  }
};

inline void validate(const TrainConfig& c) {
  if (c.stage == Stage::finetune && c.enable_text_order)
    fail(ErrorKind::stage, "text-order learning is not allowed at the finetune stage; set enable_text_order = false");
  if (c.steps == 0) fail(ErrorKind::config, "steps must be positive");
  if (c.batch == 0) fail(ErrorKind::config, "batch must be positive");
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) fail(ErrorKind::config, "lr must be positive");
  if (!(c.clip >= 0.0) || !std::isfinite(c.clip)) fail(ErrorKind::config, "clip must be finite and nonnegative");
  if (!(c.init_std > 0.0)) fail(ErrorKind::config, "init_std must be positive");
  validate(c.weights);
}

}  // namespace dlva
