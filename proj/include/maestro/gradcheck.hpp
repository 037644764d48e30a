#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "maestro/autodiff.hpp"

namespace maestro::nn {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Loss evaluated at the given parameters. When `grads` is non-null the
// function must also add d loss / d params into it.
using LossFn = std::function<double(const ParamStore<double>& params, GradStore<double>* grads)>;

// Central differences with step h against the analytic gradient. Relative
// error is |a - n| / max(|a|, |n|, floor). At most `max_per_param` entries of
// each tensor are probed (evenly strided); 0 probes all.
GradCheckReport grad_check(const LossFn& loss, ParamStore<double>& params, double h = 1e-5,
                           std::size_t max_per_param = 0, double floor = 1e-6);

}  // namespace maestro::nn
