#pragma once

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "mugen/core/tensor.hpp"

namespace mugen {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates, one slot per parameter, plus the step counter t.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update. Parameters without a gradient buffer are treated as
/// having a zero gradient.
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, const AdamOptions& opt) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), T(0));
      state.v[i].assign(params[i].numel(), T(0));
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: parameter list changed");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(opt.beta1, t);
  const double correction2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    auto data = p.data();
    const bool has_grad = p.has_grad();
    std::span<const T> grad = std::as_const(p).grad();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = has_grad ? static_cast<double>(grad[j]) : 0.0;
      m[j] = static_cast<T>(opt.beta1 * m[j] + (1.0 - opt.beta1) * g);
      v[j] = static_cast<T>(opt.beta2 * v[j] + (1.0 - opt.beta2) * g * g);
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      data[j] = static_cast<T>(data[j] - opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps));
    }
  }
}

}  // namespace mugen
