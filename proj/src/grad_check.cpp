#include "hfan/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace hfan {

namespace {

double evaluate(const LossProgram& f, const TensorMap& params) {
  Tape tape;
  return f(tape, params).scalar();
}

}  // namespace

GradCheckResult grad_check(const LossProgram& f, TensorMap& params, double h,
                           const std::function<void(TensorMap&)>& corrupt) {
  TensorMap analytic;
  {
    Tape tape;
    Var loss = f(tape, params);
    analytic = tape.backward(loss);
  }
  if (corrupt) corrupt(analytic);

  GradCheckResult result;
  for (auto& [name, tensor] : params) {
    const auto it = analytic.find(name);
    for (Index k = 0; k < tensor.size(); ++k) {
      double& x = tensor.data()[k];
      const double saved = x;
      x = saved + h;
      const double up = evaluate(f, params);
      x = saved - h;
      const double down = evaluate(f, params);
      x = saved;

      const double numeric = (up - down) / (2.0 * h);
      const double a = it == analytic.end() ? 0.0 : it->second.data()[k];
      const double err = std::abs(a - numeric) / std::max(std::abs(a), 1e-8);
      if (err > result.max_rel_error || result.worst_index < 0) {
        result = {err, name, k, a, numeric};
      }
    }
  }
  return result;
}

}  // namespace hfan
