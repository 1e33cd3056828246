#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

STMOTION_BEGIN_NAMESPACE
namespace nd {

template <class F>
double finite_diff_check(F&& f, Tensor& x, double step) {
  if (!x.requires_grad()) throw ContractError("finite_diff_check: x must require grad");
  x.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f(x);
    backward(loss, tape);
  }
  const std::vector<Real> analytic(x.grad().begin(), x.grad().end());

  NoGradScope no_grad;
  double worst = 0.0;
  auto values = x.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Real saved = values[i];
    values[i] = static_cast<Real>(saved + step);
    const double plus = f(x).item();
    values[i] = static_cast<Real>(saved - step);
    const double minus = f(x).item();
    values[i] = saved;
    const double central = (plus - minus) / (2.0 * step);
    const double a = analytic[i];
    const double err = std::abs(a - central) / (std::abs(a) + std::abs(central) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace nd
STMOTION_END_NAMESPACE
