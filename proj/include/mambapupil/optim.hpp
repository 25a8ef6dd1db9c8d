#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "mambapupil/tensor.hpp"

namespace mambapupil {

/// Adam with bias-corrected moments. Moment buffers are created on the first
/// step and keyed by position in the parameter list.
template <typename T>
struct AdamState {
  long step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  T lr = T(0.002);
};

template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, T lr) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), T(0));
      state.v.emplace_back(p.numel(), T(0));
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: parameter list changed");
  state.lr = lr;
  ++state.step;
  const T bc1 = T(1) - std::pow(state.beta1, static_cast<T>(state.step));
  const T bc2 = T(1) - std::pow(state.beta2, static_cast<T>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (state.m[k].size() != p.numel()) throw std::invalid_argument("adam_step: moment shape mismatch");
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.data();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (T(1) - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (T(1) - state.beta2) * g[i] * g[i];
      const T mhat = m[i] / bc1;
      const T vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

/// Cosine annealing with warm restarts, indexed by epoch. Cycle i lasts
/// cycle_length * cycle_mult^i epochs.
struct LrSchedule {
  double lr_max = 0.002;
  double lr_min = 0.0;
  int cycle_length = 10;
  int cycle_mult = 1;

  void validate() const {
    if (!(lr_max >= lr_min) || lr_min < 0) throw std::invalid_argument("schedule requires lr_max >= lr_min >= 0");
    if (cycle_length < 1) throw std::invalid_argument("schedule cycle_length must be >= 1");
    if (cycle_mult < 1) throw std::invalid_argument("schedule cycle_mult must be >= 1");
  }
};

inline double lr_at(const LrSchedule& s, long epoch) {
  s.validate();
  if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
  long t_cur = epoch;
  long t_i = s.cycle_length;
  if (s.cycle_mult == 1) {
    t_cur = epoch % t_i;
  } else {
    while (t_cur >= t_i) {
      t_cur -= t_i;
      t_i *= s.cycle_mult;
    }
  }
  if (t_cur == 0) return s.lr_max;
  return s.lr_min + (s.lr_max - s.lr_min) *
                        (1.0 + std::cos(std::numbers::pi * static_cast<double>(t_cur) / static_cast<double>(t_i))) / 2.0;
}

}  // namespace mambapupil
