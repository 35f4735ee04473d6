// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dlva/errors.hpp"

namespace dlva {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major float64 tensor. `grad` stays empty until something
// backpropagates into it.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d, bool rg = false)
      : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
    if (shape.empty()) fail(ErrorKind::dimension, "tensor needs at least one extent");
    for (auto e : shape)
      if (e == 0) fail(ErrorKind::dimension, "zero extent in shape " + shape_str(shape));
    if (shape_numel(shape) != data.size())
      fail(ErrorKind::dimension, "shape " + shape_str(shape) + " does not hold " +
                                     std::to_string(data.size()) + " values");
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t cols() const { return shape.back(); }
  std::size_t rows() const { return numel() / cols(); }

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  double item() const { return data.at(0); }

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
  }
  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr make_tensor(Shape shape, std::vector<double> data, bool requires_grad = false) {
  return std::make_shared<Tensor>(std::move(shape), std::move(data), requires_grad);
}

inline TensorPtr zeros(Shape shape, bool requires_grad = false) {
  const auto n = shape_numel(shape);
  return make_tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

inline TensorPtr scalar(double v, bool requires_grad = false) {
  return make_tensor({1}, {v}, requires_grad);
}

// Row-major boolean mask; true marks an entry that stays visible.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<unsigned char> keep;

  Mask() = default;
  Mask(std::size_t r, std::size_t c, bool value = true)
      : rows(r), cols(c), keep(r * c, value ? 1 : 0) {}

  bool operator()(std::size_t r, std::size_t c) const { return keep[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { keep[r * cols + c] = v ? 1 : 0; }

  // Lower-triangular: row r sees columns 0..r.
  static Mask causal(std::size_t n) {
    Mask m(n, n, false);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c <= r; ++c) m.set(r, c, true);
    return m;
  }
};

}  // namespace dlva
