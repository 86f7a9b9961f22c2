#pragma once

#include <cmath>

#include "mugen/core/tensor.hpp"

namespace mugen {

/// Softmax over the last dimension, computed with max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const std::size_t n = x.dims().back();
  const std::size_t rows = x.numel() / n;
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * n;
    T* o = out.data() + r * n;
    T mx = in[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(static_cast<double>(in[j] - mx));
      o[j] = static_cast<T>(e);
      total += e;
    }
    for (std::size_t j = 0; j < n; ++j) o[j] = static_cast<T>(static_cast<double>(o[j]) / total);
  }
  return detail::make_result<T>(x.dims(), std::move(out), "softmax_rows", {x},
                                [rows, n](Node<T>& self) {
                                  auto gx = detail::input_grad(self, 0);
                                  if (gx.empty()) return;
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    const T* y = self.data.data() + r * n;
                                    const T* g = self.grad.data() + r * n;
                                    double dot = 0.0;
                                    for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(g[j]) * y[j];
                                    for (std::size_t j = 0; j < n; ++j) {
                                      gx[r * n + j] += static_cast<T>(y[j] * (g[j] - dot));
                                    }
                                  }
                                });
}

/// Normalizes each row of the last dimension to zero mean / unit variance, then applies
/// gamma, beta [d].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-5) {
  const std::size_t d = x.dims().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: affine length must be " + std::to_string(d));
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<double> rstd(rows);
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = in[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (in[j] - mu) * rstd[r];
      xhat[r * d + j] = static_cast<T>(h);
      out[r * d + j] = static_cast<T>(h * gv[j] + bv[j]);
    }
  }
  return detail::make_result<T>(
      x.dims(), std::move(out), "layer_norm", {x, gamma, beta},
      [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        auto gx = detail::input_grad(self, 0);
        auto gg = detail::input_grad(self, 1);
        auto gb = detail::input_grad(self, 2);
        const auto& gv = detail::input_data(self, 1);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* g = self.grad.data() + r * d;
          const T* h = xhat.data() + r * d;
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = static_cast<double>(g[j]) * gv[j];
            mean_dh += dh;
            mean_dh_h += dh * h[j];
            if (!gg.empty()) gg[j] += g[j] * h[j];
            if (!gb.empty()) gb[j] += g[j];
          }
          if (gx.empty()) continue;
          mean_dh /= static_cast<double>(d);
          mean_dh_h /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = static_cast<double>(g[j]) * gv[j];
            gx[r * d + j] += static_cast<T>(rstd[r] * (dh - mean_dh - h[j] * mean_dh_h));
          }
        }
      });
}

/// Running statistics owned by a batch-norm layer. These tensors are mutated in
/// training-mode forwards.
template <typename T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;
  double momentum = 0.1;
};

/// Per-channel normalization of x [N x C x H x W]. Training mode normalizes with batch
/// statistics (biased variance) and updates the running estimates (unbiased variance);
/// eval mode uses the running estimates.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     RunningStats<T>& stats, bool training, double eps = 1e-5) {
  if (x.rank() != 4) throw ShapeError("batch_norm expects N x C x H x W, got " + shape_string(x.dims()));
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c || stats.mean.numel() != c || stats.var.numel() != c) {
    throw ShapeError("batch_norm: parameters must have " + std::to_string(c) + " channels");
  }
  const std::size_t count = n * plane;
  if (training && count < 2) {
    throw ContractError("batch_norm: training mode needs more than one value per channel "
                        "(degenerate variance)");
  }
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  std::vector<double> mu(c), rstd(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (training) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xv.data() + (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      double v = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = xv.data() + (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double dlt = p[i] - m;
          v += dlt * dlt;
        }
      }
      const double biased = v / static_cast<double>(count);
      const double unbiased = v / static_cast<double>(count - 1);
      mu[ch] = m;
      rstd[ch] = 1.0 / std::sqrt(biased + eps);
      auto& rm = stats.mean.values()[ch];
      auto& rv = stats.var.values()[ch];
      rm = static_cast<T>((1.0 - stats.momentum) * rm + stats.momentum * m);
      rv = static_cast<T>((1.0 - stats.momentum) * rv + stats.momentum * unbiased);
    } else {
      mu[ch] = stats.mean.values()[ch];
      rstd[ch] = 1.0 / std::sqrt(static_cast<double>(stats.var.values()[ch]) + eps);
    }
  }
  std::vector<T> out(x.numel()), xhat(x.numel());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double h = (xv[off + i] - mu[ch]) * rstd[ch];
        xhat[off + i] = static_cast<T>(h);
        out[off + i] = static_cast<T>(h * gv[ch] + bv[ch]);
      }
    }
  }
  return detail::make_result<T>(
      x.dims(), std::move(out), training ? "batch_norm_train" : "batch_norm_eval", {x, gamma, beta},
      [n, c, plane, count, training, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        auto gx = detail::input_grad(self, 0);
        auto gg = detail::input_grad(self, 1);
        auto gb = detail::input_grad(self, 2);
        const auto& gv = detail::input_data(self, 1);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_g = 0.0, sum_gh = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_g += self.grad[off + i];
              sum_gh += static_cast<double>(self.grad[off + i]) * xhat[off + i];
            }
          }
          if (!gg.empty()) gg[ch] += static_cast<T>(sum_gh);
          if (!gb.empty()) gb[ch] += static_cast<T>(sum_g);
          if (gx.empty()) continue;
          const double k = gv[ch] * rstd[ch];
          const double mean_g = sum_g / static_cast<double>(count);
          const double mean_gh = sum_gh / static_cast<double>(count);
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const double g = self.grad[off + i];
              gx[off + i] += static_cast<T>(training ? k * (g - mean_g - xhat[off + i] * mean_gh) : k * g);
            }
          }
        }
      });
}

}  // namespace mugen
