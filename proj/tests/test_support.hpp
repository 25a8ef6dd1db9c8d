#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mambapupil/tensor.hpp"

namespace mptest {

using mambapupil::Shape;
using Tensor = mambapupil::Tensor<double>;

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  Tensor t(std::move(shape), requires_grad);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<tensor>[<index>]"
  std::size_t checked = 0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Compares backward() against central differences for every element of
/// every tensor in `inputs`. `loss` must rebuild the graph on each call.
inline GradCheckResult grad_check(const std::function<Tensor()>& loss, std::vector<std::pair<std::string, Tensor>> inputs,
                                  double h = 1e-5) {
  for (auto& [_, t] : inputs) t.zero_grad();
  Tensor l = loss();
  mambapupil::backward(l);
  GradCheckResult result;
  for (auto& [name, t] : inputs) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double saved = t[i];
      double plus, minus;
      {
        mambapupil::NoGradGuard guard;
        t[i] = saved + h;
        plus = loss().item();
        t[i] = saved - h;
        minus = loss().item();
      }
      t[i] = saved;
      const double numeric = (plus - minus) / (2 * h);
      const double err = relative_error(analytic[i], numeric);
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic[i]) +
                       " numeric=" + std::to_string(numeric);
      }
    }
  }
  return result;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace mptest
