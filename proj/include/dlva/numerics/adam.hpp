// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dlva/numerics/tensor.hpp"

namespace dlva {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline void validate(const AdamConfig& c) {
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) fail(ErrorKind::config, "learning rate must be positive, got " + std::to_string(c.lr));
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0))
    fail(ErrorKind::config, "Adam betas must lie in [0, 1)");
  if (!(c.eps > 0.0)) fail(ErrorKind::config, "Adam eps must be positive");
}

// Adam with bias correction. Moments are kept per parameter, in the order the
// parameters are passed to step(); that order must not change between calls.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) { validate(config_); }

  const AdamConfig& config() const { return config_; }
  long long steps_taken() const { return t_; }

  // Updates every parameter from its accumulated grad. `lr_scale` multiplies
  // the configured rate (learning-rate schedules). Parameters with an empty
  // grad buffer are treated as having a zero gradient.
  void step(std::span<const TensorPtr> params, double lr_scale = 1.0) {
    const double lr = config_.lr * lr_scale;
    if (!(lr > 0.0)) fail(ErrorKind::config, "effective learning rate must be positive");
    bind(params);
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor& w = *params[p];
      auto& m = m_[p];
      auto& v = v_[p];
      const bool has_grad = w.has_grad();
      for (std::size_t i = 0; i < w.numel(); ++i) {
        const double g = has_grad ? w.grad[i] : 0.0;
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w.data[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
      }
      if (!w.all_finite()) fail(ErrorKind::numeric, "parameter became non-finite after Adam step " + std::to_string(t_));
    }
  }

  // Moment buffers, exposed for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

  void restore(long long t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
    if (m.size() != v.size()) fail(ErrorKind::format, "Adam state moment lists differ in length");
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  void bind(std::span<const TensorPtr> params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p->numel(), 0.0);
        v_.emplace_back(p->numel(), 0.0);
      }
      return;
    }
    if (m_.size() != params.size())
      fail(ErrorKind::dimension, "Adam state tracks " + std::to_string(m_.size()) + " tensors, got " +
                                     std::to_string(params.size()));
    for (std::size_t p = 0; p < params.size(); ++p)
      if (m_[p].size() != params[p]->numel() || v_[p].size() != params[p]->numel())
        fail(ErrorKind::dimension, "Adam state shape mismatch for tensor " + std::to_string(p));
  }

  AdamConfig config_;
  long long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

inline double global_grad_norm(std::span<const TensorPtr> params) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p->grad) sq += g * g;
  return std::sqrt(sq);
}

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_grad_norm(std::span<const TensorPtr> params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& p : params)
      for (double& g : p->grad) g *= s;
  }
  return norm;
}

}  // namespace dlva
