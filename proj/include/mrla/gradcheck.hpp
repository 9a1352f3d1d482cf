#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mrla/tensor.hpp"

namespace mrla {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  bool finite = true;
  std::string note;
};

// Compares reverse-mode gradients of a scalar-valued map against central
// differences (f(x+eps) - f(x-eps)) / (2 eps), element by element. Relative
// error uses denominator max(|analytic|, |numeric|, 1e-8). Non-finite values
// anywhere produce a failing report, never a pass.
template <class F>
GradCheckReport grad_check(F&& f, const Tensor<double>& x, double eps = 1e-6,
                           double tol = 1e-4) {
  GradCheckReport report;

  std::vector<double> base(x.data().begin(), x.data().end());
  Tensor<double> xg = Tensor<double>::from_data(x.shape(), base, /*requires_grad=*/true);
  Tensor<double> y = f(xg);
  if (y.size() != 1) {
    report.finite = false;
    report.note = "map did not produce a scalar";
    return report;
  }
  if (!all_finite(y)) {
    report.finite = false;
    report.note = "non-finite forward value";
    return report;
  }
  backward(y);
  std::vector<double> analytic(x.size(), 0.0);
  if (xg.has_grad()) {
    analytic.assign(xg.grad().begin(), xg.grad().end());
  }

  double max_rel = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto eval = [&](double delta) {
      std::vector<double> probe = base;
      probe[i] += delta;
      Tensor<double> xp = Tensor<double>::from_data(x.shape(), probe);
      return f(xp).item();
    };
    const double fp = eval(eps);
    const double fm = eval(-eps);
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      report.finite = false;
      report.note = "non-finite value during finite differencing";
      return report;
    }
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[i];
    if (!std::isfinite(a)) {
      report.finite = false;
      report.note = "non-finite analytic gradient";
      return report;
    }
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
  }
  report.max_rel_err = max_rel;
  report.pass = max_rel < tol;
  return report;
}

}  // namespace mrla
