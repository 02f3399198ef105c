#pragma once

// Finite-difference helpers shared by the gradient tests.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace rfcn::testing {

// Central differences (f(x+h) - f(x-h)) / 2h for every entry of `params`,
// restoring each entry afterwards.
template <class F>
std::vector<double> numeric_gradient(std::span<double> params, F&& f, double h = 1e-5) {
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = f();
    params[i] = saved - h;
    const double down = f();
    params[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||); 0 when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

}  // namespace rfcn::testing
