#pragma once

#include "hfan/tensor.hpp"

#include <functional>
#include <string>

namespace hfan {

/// Scalar tensor program over a named parameter set. Implementations bind
/// parameters with `tape.parameter(name, params.at(name))`.
using LossProgram = std::function<Var(Tape& tape, const TensorMap& params)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares reverse-mode gradients with central differences coordinate by
/// coordinate: |a - (f(x+h) - f(x-h)) / 2h| / max(|a|, 1e-8).
///
/// `params` is perturbed in place and restored before returning. The optional
/// `corrupt` hook edits the analytic gradients before comparison (used to
/// check that the harness notices a broken backward pass).
GradCheckResult grad_check(const LossProgram& f, TensorMap& params, double h = 1e-5,
                           const std::function<void(TensorMap&)>& corrupt = {});

}  // namespace hfan
