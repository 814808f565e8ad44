#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>

#include "pdarts/tensor.hpp"

namespace pdarts {

struct GradCheckResult {
  double max_error = 0.0;
  std::size_t worst_index = 0;
  bool finite = true;

  bool passed(double tolerance) const { return finite && max_error <= tolerance; }
};

/// Compares the reverse-mode gradient of scalar f() with respect to the leaf
/// `wrt` against central differences. The error per coordinate is
/// |analytic - numeric| / max(1, |numeric|). f must be deterministic and read
/// `wrt` afresh on every call; `wrt` is restored on return.
template <typename T>
GradCheckResult finite_difference_check(const std::function<Tensor<T>()>& f, Tensor<T> wrt, double eps) {
  GradCheckResult result;
  const bool was_required = wrt.requires_grad();
  wrt.set_requires_grad(true);
  wrt.zero_grad();
  const Tensor<T> loss = f();
  if (loss.numel() != 1) throw ShapeError("finite_difference_check: f must return a scalar");
  loss.backward();
  std::vector<T> analytic(static_cast<std::size_t>(wrt.numel()), T(0));
  if (wrt.has_grad()) std::copy(wrt.grad().begin(), wrt.grad().end(), analytic.begin());
  wrt.zero_grad();

  NoGradGuard no_grad;
  auto data = wrt.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const T original = data[i];
    data[i] = static_cast<T>(original + eps);
    const double up = f().item();
    data[i] = static_cast<T>(original - eps);
    const double down = f().item();
    data[i] = original;
    // Use the realized step so rounding of original +- eps does not bias the quotient.
    const double step = static_cast<double>(static_cast<T>(original + eps)) -
                        static_cast<double>(static_cast<T>(original - eps));
    const double numeric = (up - down) / step;
    if (!std::isfinite(numeric) || !std::isfinite(static_cast<double>(analytic[i]))) {
      result.finite = false;
      result.max_error = std::numeric_limits<double>::infinity();
      result.worst_index = i;
      continue;
    }
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
    if (err > result.max_error) {
      result.max_error = err;
      result.worst_index = i;
    }
  }
  wrt.set_requires_grad(was_required);
  return result;
}

/// Convenience form for a function of a single input tensor.
template <typename T>
GradCheckResult finite_difference_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x,
                                        double eps) {
  Tensor<T> leaf = Tensor<T>::from_data(x.shape(), std::vector<T>(x.data().begin(), x.data().end()), true);
  return finite_difference_check<T>([&] { return f(leaf); }, leaf, eps);
}

}  // namespace pdarts
