// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "dlva/model/params.hpp"
#include "dlva/numerics/gradcheck.hpp"

namespace dlva {

// Key biases shift every score of a softmax row by the same amount, so their
// exact gradient is zero and a relative error on them measures only rounding
// noise. They are checked against an absolute bound instead.
inline bool gradient_is_structurally_zero(const std::string& name) {
  constexpr std::string_view suffix = ".attn.k.bias";
  return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct ModelGradcheck {
  GradcheckResult result;     // every tensor with a nonzero gradient
  GradcheckResult invariant;  // key biases
  std::string worst_name;

  bool pass(double rel_tol, double abs_tol = 1e-9) const {
    return result.max_rel_error <= rel_tol && invariant.max_abs_error <= abs_tol;
  }
};

inline ModelGradcheck gradcheck_model(const std::function<TensorPtr(Tape&)>& f, const ModelParams& params,
                                      const GradcheckOptions& opt) {
  std::vector<TensorPtr> regular, invariant;
  std::vector<std::string> names;
  for (const auto& [name, t] : params.named()) {
    if (gradient_is_structurally_zero(name)) {
      invariant.push_back(t);
    } else {
      regular.push_back(t);
      names.push_back(name);
    }
  }
  ModelGradcheck out;
  out.result = gradcheck(f, regular, opt);
  out.worst_name = names[out.result.worst_tensor];
  if (!invariant.empty()) out.invariant = gradcheck(f, invariant, opt);
  return out;
}

}  // namespace dlva
