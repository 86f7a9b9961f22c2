#pragma once

#include <limits>

#include "mugen/core/linalg.hpp"
#include "mugen/core/tensor.hpp"

namespace mugen {

/// Stride/padding of a 2-D window. With floor_output unset, the output extent must be
/// exact, i.e. (in + 2*pad - kernel) divisible by stride.
struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
  bool floor_output = false;
};

namespace detail {

inline std::size_t window_extent(std::size_t in, std::size_t kernel, const ConvGeometry& g,
                                 const char* op) {
  if (g.stride == 0) throw ShapeError(std::string(op) + ": stride must be positive");
  const std::size_t padded = in + 2 * g.pad;
  if (kernel > padded) {
    throw ShapeError(std::string(op) + ": kernel " + std::to_string(kernel) +
                     " larger than padded input " + std::to_string(padded));
  }
  if (!g.floor_output && (padded - kernel) % g.stride != 0) {
    throw ShapeError(std::string(op) + ": non-integral output extent (" + std::to_string(in) +
                     " + 2*" + std::to_string(g.pad) + " - " + std::to_string(kernel) +
                     ") / " + std::to_string(g.stride));
  }
  return (padded - kernel) / g.stride + 1;
}

inline void require_nchw(const Shape& d, const char* op) {
  if (d.size() != 4) throw ShapeError(std::string(op) + " expects N x C x H x W, got " + shape_string(d));
}

struct ConvDims {
  std::size_t n, c, h, w, f, kh, kw, oh, ow, stride, pad;
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

/// cols[(c*kh + i)*kw + j][oy*ow + ox] = x[c][oy*s - p + i][ox*s - p + j] (zero outside).
template <typename T>
void im2col(const T* x, const ConvDims& d, T* cols) {
  const std::size_t plane = d.oh * d.ow;
  for (std::size_t c = 0; c < d.c; ++c) {
    const T* xc = x + c * d.h * d.w;
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        T* row = cols + ((c * d.kh + i) * d.kw + j) * plane;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * d.stride + i) -
                                    static_cast<std::ptrdiff_t>(d.pad);
          T* out = row + oy * d.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) {
            std::fill_n(out, d.ow, T(0));
            continue;
          }
          const T* xr = xc + static_cast<std::size_t>(iy) * d.w;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * d.stride + j) -
                                      static_cast<std::ptrdiff_t>(d.pad);
            out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) ? T(0)
                                                                          : xr[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters column gradients back onto the input plane.
template <typename T>
void col2im(const T* cols, const ConvDims& d, T* dx) {
  const std::size_t plane = d.oh * d.ow;
  for (std::size_t c = 0; c < d.c; ++c) {
    T* xc = dx + c * d.h * d.w;
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        const T* row = cols + ((c * d.kh + i) * d.kw + j) * plane;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * d.stride + i) -
                                    static_cast<std::ptrdiff_t>(d.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          T* xr = xc + static_cast<std::size_t>(iy) * d.w;
          const T* in = row + oy * d.ow;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * d.stride + j) -
                                      static_cast<std::ptrdiff_t>(d.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(d.w)) xr[static_cast<std::size_t>(ix)] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation (no kernel flip) of x [N x C x H x W] with w [F x C x kh x kw],
/// plus an optional per-filter bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {},
                 ConvGeometry geom = {}) {
  detail::require_nchw(x.dims(), "conv2d");
  detail::require_nchw(weight.dims(), "conv2d weight");
  if (weight.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, kernel expects " +
                     std::to_string(weight.dim(1)));
  }
  if (bias.defined() && bias.numel() != weight.dim(0)) {
    throw ShapeError("conv2d: bias length mismatch");
  }
  detail::ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2),
                     weight.dim(3), 0, 0, geom.stride, geom.pad};
  d.oh = detail::window_extent(d.h, d.kh, geom, "conv2d");
  d.ow = detail::window_extent(d.w, d.kw, geom, "conv2d");
  const std::size_t plane = d.oh * d.ow, patch = d.c * d.kh * d.kw;

  std::vector<T> out(d.n * d.f * plane);
  std::vector<T> cols(d.pointwise() ? 0 : patch * plane);
  auto wm = detail::cmap(weight.values().data(), d.f, patch);
  for (std::size_t b = 0; b < d.n; ++b) {
    const T* xb = x.values().data() + b * d.c * d.h * d.w;
    const T* colp = xb;
    if (!d.pointwise()) {
      detail::im2col(xb, d, cols.data());
      colp = cols.data();
    }
    auto om = detail::mmap(out.data() + b * d.f * plane, d.f, plane);
    om.noalias() = wm * detail::cmap(colp, patch, plane);
    if (bias.defined()) {
      for (std::size_t f = 0; f < d.f; ++f) om.row(static_cast<Eigen::Index>(f)).array() += bias.values()[f];
    }
  }

  return detail::make_result<T>(
      Shape{d.n, d.f, d.oh, d.ow}, std::move(out), "conv2d", {x, weight, bias},
      [d, plane, patch](Node<T>& self) {
        auto gx = detail::input_grad(self, 0);
        auto gw = detail::input_grad(self, 1);
        std::span<T> gb;
        if (self.inputs[2]) gb = detail::input_grad(self, 2);
        const auto& xv = detail::input_data(self, 0);
        auto wm = detail::cmap(detail::input_data(self, 1).data(), d.f, patch);
        std::vector<T> cols(d.pointwise() ? 0 : patch * plane);
        std::vector<T> dcols(d.pointwise() || gx.empty() ? 0 : patch * plane);
        for (std::size_t b = 0; b < d.n; ++b) {
          auto dy = detail::cmap(self.grad.data() + b * d.f * plane, d.f, plane);
          if (!gw.empty()) {
            const T* colp = xv.data() + b * d.c * d.h * d.w;
            if (!d.pointwise()) {
              detail::im2col(colp, d, cols.data());
              colp = cols.data();
            }
            detail::mmap(gw.data(), d.f, patch).noalias() +=
                dy * detail::cmap(colp, patch, plane).transpose();
          }
          if (!gb.empty()) {
            // fixed-order sum, see linear()
            const T* g = self.grad.data() + b * d.f * plane;
            for (std::size_t f = 0; f < d.f; ++f) {
              T acc = T(0);
              for (std::size_t i = 0; i < plane; ++i) acc += g[f * plane + i];
              gb[f] += acc;
            }
          }
          if (!gx.empty()) {
            T* gxb = gx.data() + b * d.c * d.h * d.w;
            if (d.pointwise()) {
              detail::mmap(gxb, patch, plane).noalias() += wm.transpose() * dy;
            } else {
              detail::mmap(dcols.data(), patch, plane).noalias() = wm.transpose() * dy;
              detail::col2im(dcols.data(), d, gxb);
            }
          }
        }
      });
}

/// Per-channel maximum over H x W. Gradient goes to the first maximal element in scan order.
template <typename T>
Tensor<T> global_max_pool(const Tensor<T>& x) {
  detail::require_nchw(x.dims(), "global_max_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<T> out(n * c);
  std::vector<std::size_t> argmax(n * c);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n * c; ++i) {
    const T* p = xv.data() + i * plane;
    std::size_t best = 0;
    for (std::size_t j = 1; j < plane; ++j) {
      if (p[j] > p[best]) best = j;
    }
    argmax[i] = i * plane + best;
    out[i] = p[best];
  }
  return detail::make_result<T>(Shape{n, c}, std::move(out), "global_max_pool", {x},
                                [argmax = std::move(argmax)](Node<T>& self) {
                                  auto gx = detail::input_grad(self, 0);
                                  if (gx.empty()) return;
                                  for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += self.grad[i];
                                });
}

/// Per-channel mean over H x W.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  detail::require_nchw(x.dims(), "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<T> out(n * c);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < plane; ++j) acc += static_cast<double>(xv[i * plane + j]);
    out[i] = static_cast<T>(acc / static_cast<double>(plane));
  }
  return detail::make_result<T>(Shape{n, c}, std::move(out), "global_avg_pool", {x},
                                [plane](Node<T>& self) {
                                  auto gx = detail::input_grad(self, 0);
                                  if (gx.empty()) return;
                                  const T inv = T(1) / static_cast<T>(plane);
                                  for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                    for (std::size_t j = 0; j < plane; ++j) gx[i * plane + j] += self.grad[i] * inv;
                                  }
                                });
}

/// Non-overlapping k x k mean pooling; H and W must be multiples of k.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t k) {
  detail::require_nchw(x.dims(), "avg_pool2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (k == 0 || h % k != 0 || w % k != 0) {
    throw ShapeError("avg_pool2d: " + shape_string(x.dims()) + " not divisible by window " +
                     std::to_string(k));
  }
  const std::size_t oh = h / k, ow = w / k;
  std::vector<T> out(n * c * oh * ow);
  const auto& xv = x.values();
  const double inv = 1.0 / static_cast<double>(k * k);
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < k; ++j) acc += static_cast<double>(xv[(p * h + oy * k + i) * w + ox * k + j]);
        }
        out[(p * oh + oy) * ow + ox] = static_cast<T>(acc * inv);
      }
    }
  }
  return detail::make_result<T>(Shape{n, c, oh, ow}, std::move(out), "avg_pool2d", {x},
                                [n, c, h, w, k, oh, ow](Node<T>& self) {
                                  auto gx = detail::input_grad(self, 0);
                                  if (gx.empty()) return;
                                  const T inv = T(1) / static_cast<T>(k * k);
                                  for (std::size_t p = 0; p < n * c; ++p) {
                                    for (std::size_t y = 0; y < h; ++y) {
                                      for (std::size_t xx = 0; xx < w; ++xx) {
                                        gx[(p * h + y) * w + xx] += self.grad[(p * oh + y / k) * ow + xx / k] * inv;
                                      }
                                    }
                                  }
                                });
}

/// k x k max pooling with stride/padding; gradient to first maximal element in scan order.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t k, ConvGeometry geom) {
  detail::require_nchw(x.dims(), "max_pool2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = detail::window_extent(h, k, geom, "max_pool2d");
  const std::size_t ow = detail::window_extent(w, k, geom, "max_pool2d");
  std::vector<T> out(n * c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const auto& xv = x.values();
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = std::numeric_limits<std::size_t>::max();
        for (std::size_t i = 0; i < k; ++i) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * geom.stride + i) - static_cast<std::ptrdiff_t>(geom.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * geom.stride + j) - static_cast<std::ptrdiff_t>(geom.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t idx = (p * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix);
            if (best_idx == std::numeric_limits<std::size_t>::max() || xv[idx] > best) {
              best = xv[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
  return detail::make_result<T>(Shape{n, c, oh, ow}, std::move(out), "max_pool2d", {x},
                                [argmax = std::move(argmax)](Node<T>& self) {
                                  auto gx = detail::input_grad(self, 0);
                                  if (gx.empty()) return;
                                  for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += self.grad[o];
                                });
}

enum class UpsampleMode { nearest, bilinear };

namespace detail {

/// Source taps for one output coordinate of a x2 bilinear resize (half-pixel centres).
struct Taps {
  std::size_t lo, hi;
  double w_hi;
};

inline std::vector<Taps> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Taps> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[o] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

/// Doubles H and W. Nearest replicates 2x2; bilinear uses half-pixel centres without
/// corner alignment.
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x, UpsampleMode mode) {
  detail::require_nchw(x.dims(), "upsample2x");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = 2 * h, ow = 2 * w;
  std::vector<T> out(n * c * oh * ow);
  const auto& xv = x.values();
  if (mode == UpsampleMode::nearest) {
    for (std::size_t p = 0; p < n * c; ++p) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xx = 0; xx < ow; ++xx) out[(p * oh + y) * ow + xx] = xv[(p * h + y / 2) * w + xx / 2];
      }
    }
    return detail::make_result<T>(Shape{n, c, oh, ow}, std::move(out), "upsample2x_nearest", {x},
                                  [n, c, h, w, oh, ow](Node<T>& self) {
                                    auto gx = detail::input_grad(self, 0);
                                    if (gx.empty()) return;
                                    for (std::size_t p = 0; p < n * c; ++p) {
                                      for (std::size_t y = 0; y < oh; ++y) {
                                        for (std::size_t xx = 0; xx < ow; ++xx) {
                                          gx[(p * h + y / 2) * w + xx / 2] += self.grad[(p * oh + y) * ow + xx];
                                        }
                                      }
                                    }
                                  });
  }
  auto ty = detail::bilinear_taps(h, oh);
  auto tx = detail::bilinear_taps(w, ow);
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* src = xv.data() + p * h * w;
    T* dst = out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const auto& a = ty[y];
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const auto& b = tx[xx];
        const double top = (1.0 - b.w_hi) * src[a.lo * w + b.lo] + b.w_hi * src[a.lo * w + b.hi];
        const double bot = (1.0 - b.w_hi) * src[a.hi * w + b.lo] + b.w_hi * src[a.hi * w + b.hi];
        dst[y * ow + xx] = static_cast<T>((1.0 - a.w_hi) * top + a.w_hi * bot);
      }
    }
  }
  return detail::make_result<T>(
      Shape{n, c, oh, ow}, std::move(out), "upsample2x_bilinear", {x},
      [n, c, h, w, oh, ow, ty = std::move(ty), tx = std::move(tx)](Node<T>& self) {
        auto gx = detail::input_grad(self, 0);
        if (gx.empty()) return;
        for (std::size_t p = 0; p < n * c; ++p) {
          T* dst = gx.data() + p * h * w;
          const T* g = self.grad.data() + p * oh * ow;
          for (std::size_t y = 0; y < oh; ++y) {
            const auto& a = ty[y];
            for (std::size_t xx = 0; xx < ow; ++xx) {
              const auto& b = tx[xx];
              const T v = g[y * ow + xx];
              const T wy0 = static_cast<T>(1.0 - a.w_hi), wy1 = static_cast<T>(a.w_hi);
              const T wx0 = static_cast<T>(1.0 - b.w_hi), wx1 = static_cast<T>(b.w_hi);
              dst[a.lo * w + b.lo] += v * wy0 * wx0;
              dst[a.lo * w + b.hi] += v * wy0 * wx1;
              dst[a.hi * w + b.lo] += v * wy1 * wx0;
              dst[a.hi * w + b.hi] += v * wy1 * wx1;
            }
          }
        }
      });
}

}  // namespace mugen
