#include "maestro/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace maestro::nn {

GradCheckReport grad_check(const LossFn& loss, ParamStore<double>& params, double h, std::size_t max_per_param,
                           double floor) {
  GradStore<double> analytic(params);
  loss(params, &analytic);
  GradCheckReport rep;
  rep.max_relative_error = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& values = params.value(p).data;
    const std::size_t n = values.size();
    const std::size_t stride = (max_per_param == 0 || n <= max_per_param) ? 1 : (n + max_per_param - 1) / max_per_param;
    for (std::size_t k = 0; k < n; k += stride) {
      const double saved = values[k];
      values[k] = saved + h;
      const double up = loss(params, nullptr);
      values[k] = saved - h;
      const double down = loss(params, nullptr);
      values[k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.grads[p][k];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++rep.checked;
      if (rel > rep.max_relative_error) {
        rep.max_relative_error = rel;
        rep.worst_param = params.name(p);
        rep.worst_index = k;
        rep.worst_analytic = a;
        rep.worst_numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace maestro::nn
