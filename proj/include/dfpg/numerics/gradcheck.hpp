#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dfpg/numerics/params.hpp"
#include "dfpg/numerics/tensor.hpp"

namespace dfpg {

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

/// |a - n| / max(1e-8, |a| + |n|)
double relative_error(double analytic, double numeric) noexcept;

/**
 * Compares analytic gradients against central finite differences of `loss`
 * at every coordinate of `params`. `loss` must read the parameters through
 * the same tensors that `params` references; each coordinate is perturbed in
 * place and restored afterwards.
 *
 * The stencil is the fourth-order central difference
 *   (-f(x+2h) + 8 f(x+h) - 8 f(x-h) + f(x-2h)) / 12h
 * so that coordinates with small gradients are not swamped by truncation
 * error. Throws NumericError if any evaluation is non-finite.
 */
GradcheckReport gradcheck(const std::function<double()>& loss, const ParamList<double>& params,
                          const std::vector<Tensor64>& analytic, double eps = 1e-4);

}  // namespace dfpg
