// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "dlva/numerics/tape.hpp"
#include "dlva/rng.hpp"

namespace dlva {

struct GradcheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

struct GradcheckOptions {
  double h = 1e-5;
  // 0 checks every coordinate; otherwise a seeded sample of this many per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t sample_seed = 0;
};

// f builds a scalar on the given tape from `params`. The reverse-mode gradient
// is compared coordinate-by-coordinate against the central difference
// (f(θ+h) − f(θ−h)) / 2h, using max(|analytic|, |numeric|, 1e-8) as the
// relative-error denominator.
inline GradcheckResult gradcheck(const std::function<TensorPtr(Tape&)>& f, std::span<const TensorPtr> params,
                                 const GradcheckOptions& opt = {}) {
  for (const auto& p : params) p->zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    auto loss = f(tape);
    if (!std::isfinite(loss->item())) fail(ErrorKind::numeric, "gradcheck objective is not finite");
    tape.backward(loss);
    for (const auto& p : params) analytic.push_back(p->has_grad() ? p->grad : std::vector<double>(p->numel(), 0.0));
  }

  auto eval = [&] {
    Tape tape(Tape::Mode::inference);
    const double v = f(tape)->item();
    if (!std::isfinite(v)) fail(ErrorKind::numeric, "gradcheck objective is not finite under perturbation");
    return v;
  };

  GradcheckResult res;
  Rng rng(opt.sample_seed);
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& w = *params[t];
    std::vector<std::size_t> coords(w.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opt.max_coords_per_tensor != 0 && coords.size() > opt.max_coords_per_tensor) {
      for (std::size_t i = 0; i < opt.max_coords_per_tensor; ++i)
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      coords.resize(opt.max_coords_per_tensor);
    }
    for (auto i : coords) {
      const double saved = w.data[i];
      w.data[i] = saved + opt.h;
      const double fp = eval();
      w.data[i] = saved - opt.h;
      const double fm = eval();
      w.data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * opt.h);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++res.coords_checked;
      res.max_abs_error = std::max(res.max_abs_error, std::abs(a - numeric));
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_tensor = t;
        res.worst_coord = i;
        res.worst_analytic = a;
        res.worst_numeric = numeric;
      }
    }
  }
  for (const auto& p : params) p->zero_grad();
  return res;
}

}  // namespace dlva
