// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <initializer_list>
#include <utility>
#include <vector>

#include "dlva/numerics/tensor.hpp"

namespace dlva {

// Records the backward closure of every differentiable op in execution order.
// backward() replays them in exact reverse order. A tape in inference mode
// records nothing, so forward passes run without graph bookkeeping.
class Tape {
 public:
  enum class Mode { record, inference };

  explicit Tape(Mode mode = Mode::record) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return mode_ == Mode::record; }

  bool wants_grad(std::initializer_list<const Tensor*> inputs) const {
    if (!recording()) return false;
    for (const Tensor* t : inputs)
      if (t != nullptr && t->requires_grad) return true;
    return false;
  }

  void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

  std::size_t size() const { return ops_.size(); }

  // Seeds d(root)/d(root) = seed and runs every recorded closure backwards.
  // Gradients accumulate into leaf tensors, so several tapes may feed the same
  // parameters before an optimizer step.
  void backward(const TensorPtr& root, double seed = 1.0) {
    if (root->numel() != 1) fail(ErrorKind::dimension, "backward root must be a scalar, got " + shape_str(root->shape));
    root->ensure_grad();
    root->grad[0] += seed;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
  }

 private:
  Mode mode_;
  std::vector<std::function<void()>> ops_;
};

}  // namespace dlva
