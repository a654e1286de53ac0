#include "dfpg/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dfpg {

double relative_error(double analytic, double numeric) noexcept {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

GradcheckReport gradcheck(const std::function<double()>& loss, const ParamList<double>& params,
                          const std::vector<Tensor64>& analytic, double eps) {
  if (params.size() != analytic.size()) {
    throw ShapeError("gradcheck: parameter and gradient lists differ in length");
  }
  auto eval = [&] {
    const double v = loss();
    if (!std::isfinite(v)) throw NumericError("gradcheck: loss evaluated to a non-finite value");
    return v;
  };
  eval();

  GradcheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor64& t = *params[p].tensor;
    require_shape(analytic[p].shape(), t.shape(), "gradcheck gradient for " + params[p].name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + 2 * eps;
      const double f2p = eval();
      t[i] = orig + eps;
      const double f1p = eval();
      t[i] = orig - eps;
      const double f1m = eval();
      t[i] = orig - 2 * eps;
      const double f2m = eval();
      t[i] = orig;
      // Differences first: equal evaluations then give exactly 0.
      const double numeric = (8 * (f1p - f1m) - (f2p - f2m)) / (12 * eps);
      const double err = relative_error(analytic[p][i], numeric);
      ++report.coordinates;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = params[p].name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace dfpg
