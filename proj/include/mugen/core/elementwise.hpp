#pragma once

#include <array>
#include <cmath>
#include <numbers>

#include "mugen/core/tensor.hpp"

namespace mugen {
namespace detail {

template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, const char* op, F f, D derivative) {
  const auto& xs = x.values();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  return make_result<T>(x.dims(), std::move(out), op, {x}, [derivative](Node<T>& self) {
    auto gx = input_grad(self, 0);
    if (gx.empty()) return;
    const auto& xin = input_data(self, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += self.grad[i] * derivative(xin[i], self.data[i]);
    }
  });
}

/// Index plan for a binary op over up to four broadcast dimensions.
struct BroadcastPlan {
  Shape out_dims;
  std::array<std::size_t, 4> extent{};
  std::array<std::size_t, 4> stride_a{};
  std::array<std::size_t, 4> stride_b{};
};

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  if (rank > 4) throw ShapeError(std::string(op) + ": broadcasting supports rank <= 4");
  std::array<std::size_t, 4> pa{1, 1, 1, 1}, pb{1, 1, 1, 1};
  for (std::size_t i = 0; i < a.size(); ++i) pa[4 - a.size() + i] = a[i];
  for (std::size_t i = 0; i < b.size(); ++i) pb[4 - b.size() + i] = b[i];
  BroadcastPlan plan;
  for (std::size_t k = 0; k < 4; ++k) {
    if (pa[k] != pb[k] && pa[k] != 1 && pb[k] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(a) + " with " +
                       shape_string(b));
    }
    plan.extent[k] = std::max(pa[k], pb[k]);
  }
  std::size_t sa = 1, sb = 1;
  for (std::size_t k = 4; k-- > 0;) {
    plan.stride_a[k] = pa[k] == 1 ? 0 : sa;
    plan.stride_b[k] = pb[k] == 1 ? 0 : sb;
    sa *= pa[k];
    sb *= pb[k];
  }
  plan.out_dims.assign(plan.extent.begin() + static_cast<std::ptrdiff_t>(4 - rank),
                       plan.extent.end());
  return plan;
}

/// Visits (out, a, b) flat offsets in row-major order of the output.
template <typename Fn>
void for_each_broadcast(const BroadcastPlan& p, Fn&& fn) {
  std::size_t o = 0;
  for (std::size_t i0 = 0; i0 < p.extent[0]; ++i0) {
    for (std::size_t i1 = 0; i1 < p.extent[1]; ++i1) {
      for (std::size_t i2 = 0; i2 < p.extent[2]; ++i2) {
        std::size_t ia = i0 * p.stride_a[0] + i1 * p.stride_a[1] + i2 * p.stride_a[2];
        std::size_t ib = i0 * p.stride_b[0] + i1 * p.stride_b[1] + i2 * p.stride_b[2];
        for (std::size_t i3 = 0; i3 < p.extent[3]; ++i3) {
          fn(o++, ia, ib);
          ia += p.stride_a[3];
          ib += p.stride_b[3];
        }
      }
    }
  }
}

template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, F f, DA da, DB db) {
  auto plan = plan_broadcast(a.dims(), b.dims(), op);
  std::vector<T> out(element_count(plan.out_dims));
  const auto& av = a.values();
  const auto& bv = b.values();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    out[o] = f(av[ia], bv[ib]);
  });
  Shape dims = plan.out_dims;
  return make_result<T>(std::move(dims), std::move(out), op, {a, b},
                        [plan, da, db](Node<T>& self) {
                          auto ga = input_grad(self, 0);
                          auto gb = input_grad(self, 1);
                          const auto& av = input_data(self, 0);
                          const auto& bv = input_data(self, 1);
                          for_each_broadcast(plan, [&](std::size_t o, std::size_t ia,
                                                       std::size_t ib) {
                            const T g = self.grad[o];
                            if (!ga.empty()) ga[ia] += g * da(av[ia], bv[ib]);
                            if (!gb.empty()) gb[ib] += g * db(av[ia], bv[ib]);
                          });
                        });
}

}  // namespace detail

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x, "sigmoid",
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

/// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return detail::unary(
      x, "gelu", [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary(
      x, "scale", [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary(
      x, "add_scalar", [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary(
      x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.values()) acc += static_cast<double>(v);
  return detail::make_result<T>(Shape{1}, {static_cast<T>(acc)}, "sum", {x}, [](Node<T>& self) {
    auto gx = detail::input_grad(self, 0);
    for (auto& g : gx) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.values()) acc += static_cast<double>(v);
  const double n = static_cast<double>(x.numel());
  return detail::make_result<T>(Shape{1}, {static_cast<T>(acc / n)}, "mean", {x},
                                [n](Node<T>& self) {
                                  auto gx = detail::input_grad(self, 0);
                                  const T g = static_cast<T>(self.grad[0] / n);
                                  for (auto& v : gx) v += g;
                                });
}

}  // namespace mugen
