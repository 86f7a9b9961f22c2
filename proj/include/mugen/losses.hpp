#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mugen/core/ops.hpp"
#include "mugen/errors.hpp"

namespace mugen {

struct LossConfig {
  double n = 6.0 / 5.0;  // BCE weight relative to the IoU term
  double alpha = 0.5;    // transformer-branch prediction
  double beta = 0.5;     // CNN-branch prediction
  double gamma = 1.0;    // fused prediction
  std::size_t weight_kernel = 7;

  static LossConfig paper() {
    LossConfig c;
    c.weight_kernel = 31;
    return c;
  }

  void validate() const {
    if (!(n > 0.0)) throw ConfigError("loss n must be positive");
    if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) throw ConfigError("loss weights must be non-negative");
    if (alpha + beta + gamma <= 0.0) throw ConfigError("loss weights alpha, beta, gamma are all zero");
    if (weight_kernel % 2 == 0) throw ConfigError("loss weight_kernel must be odd");
  }
};

inline constexpr double kProbabilityClamp = 1e-7;

namespace detail {

/// Splits a prediction-shaped tensor into (samples, pixels per sample). Rank-2 tensors are
/// one H x W map; higher ranks treat the leading dimension as the batch.
inline std::pair<std::size_t, std::size_t> loss_layout(const Shape& d) {
  if (d.size() < 2) throw ShapeError("loss inputs need at least rank 2, got " + shape_string(d));
  const std::size_t batch = d.size() == 2 ? 1 : d[0];
  return {batch, element_count(d) / batch};
}

template <typename T>
void require_same_dims(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(what) + ": " + shape_string(a.dims()) + " vs " + shape_string(b.dims()));
  }
}

}  // namespace detail

/// omega = 1 + 5 |boxmean_k(G) - G| per H x W plane, zero padded (the window average always
/// divides by k*k). Values lie in [1, 6].
template <typename T>
Tensor<T> pixel_weights(const Tensor<T>& masks, std::size_t k) {
  if (k % 2 == 0) throw ContractError("pixel_weights: kernel must be odd, got " + std::to_string(k));
  const auto& d = masks.dims();
  if (d.size() < 2) throw ShapeError("pixel_weights expects [..., H, W]");
  const std::size_t h = d[d.size() - 2], w = d[d.size() - 1];
  const std::size_t planes = masks.numel() / (h * w);
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(k / 2);
  const double inv_area = 1.0 / static_cast<double>(k * k);
  std::vector<T> out(masks.numel());
  std::vector<double> sat((h + 1) * (w + 1));
  const auto& g = masks.values();
  auto clampi = [](std::ptrdiff_t v, std::size_t hi) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(hi)));
  };
  for (std::size_t p = 0; p < planes; ++p) {
    const T* plane = g.data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      double row = 0.0;
      for (std::size_t x = 0; x < w; ++x) {
        row += plane[y * w + x];
        sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
      }
    }
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t y0 = clampi(static_cast<std::ptrdiff_t>(y) - r, h);
      const std::size_t y1 = clampi(static_cast<std::ptrdiff_t>(y) + r + 1, h);
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t x0 = clampi(static_cast<std::ptrdiff_t>(x) - r, w);
        const std::size_t x1 = clampi(static_cast<std::ptrdiff_t>(x) + r + 1, w);
        const double box = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0] +
                           sat[y0 * (w + 1) + x0];
        const double v = plane[y * w + x];
        out[p * h * w + y * w + x] = static_cast<T>(1.0 + 5.0 * std::abs(box * inv_area - v));
      }
    }
  }
  return Tensor<T>(d, std::move(out));
}

/// Per-sample sum(omega * BCE(P, G)) / sum(omega), averaged over the batch. P is clamped to
/// [1e-7, 1 - 1e-7] before the logs; the gradient is taken at the clamped value.
template <typename T>
Tensor<T> weighted_bce(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& omega) {
  detail::require_same_dims(pred, gt, "weighted_bce");
  detail::require_same_dims(pred, omega, "weighted_bce");
  const auto [batch, pixels] = detail::loss_layout(pred.dims());
  const auto& p = pred.values();
  const auto& g = gt.values();
  const auto& w = omega.values();
  std::vector<double> wsum(batch, 0.0);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    double num = 0.0;
    for (std::size_t i = b * pixels; i < (b + 1) * pixels; ++i) {
      const double q = std::clamp<double>(p[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
      num += w[i] * (-g[i] * std::log(q) - (1.0 - g[i]) * std::log(1.0 - q));
      wsum[b] += w[i];
    }
    if (wsum[b] <= 0.0) throw ContractError("weighted_bce: pixel weights sum to zero");
    total += num / wsum[b];
  }
  const double inv_batch = 1.0 / static_cast<double>(batch);
  return detail::make_result<T>(
      Shape{1}, {static_cast<T>(total * inv_batch)}, "weighted_bce", {pred},
      [batch, pixels, inv_batch, wsum, g = g, w = w](Node<T>& self) {
        auto gp = detail::input_grad(self, 0);
        if (gp.empty()) return;
        const auto& p = detail::input_data(self, 0);
        const double upstream = self.grad[0] * inv_batch;
        for (std::size_t b = 0; b < batch; ++b) {
          const double k = upstream / wsum[b];
          for (std::size_t i = b * pixels; i < (b + 1) * pixels; ++i) {
            const double q = std::clamp<double>(p[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
            gp[i] += static_cast<T>(k * w[i] * (-g[i] / q + (1.0 - g[i]) / (1.0 - q)));
          }
        }
      });
}

/// Per-sample 1 - sum(omega P G) / sum(omega (P + G - P G)), averaged over the batch. A
/// sample whose weighted union is zero (empty mask, all-zero prediction) scores 0.
template <typename T>
Tensor<T> weighted_iou(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& omega) {
  detail::require_same_dims(pred, gt, "weighted_iou");
  detail::require_same_dims(pred, omega, "weighted_iou");
  const auto [batch, pixels] = detail::loss_layout(pred.dims());
  const auto& p = pred.values();
  const auto& g = gt.values();
  const auto& w = omega.values();
  std::vector<double> inter(batch, 0.0), uni(batch, 0.0);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = b * pixels; i < (b + 1) * pixels; ++i) {
      inter[b] += static_cast<double>(w[i]) * p[i] * g[i];
      uni[b] += static_cast<double>(w[i]) * (static_cast<double>(p[i]) + g[i] - static_cast<double>(p[i]) * g[i]);
    }
    if (uni[b] > 0.0) total += 1.0 - inter[b] / uni[b];
  }
  const double inv_batch = 1.0 / static_cast<double>(batch);
  return detail::make_result<T>(
      Shape{1}, {static_cast<T>(total * inv_batch)}, "weighted_iou", {pred},
      [batch, pixels, inv_batch, inter, uni, g = g, w = w](Node<T>& self) {
        auto gp = detail::input_grad(self, 0);
        if (gp.empty()) return;
        const double upstream = self.grad[0] * inv_batch;
        for (std::size_t b = 0; b < batch; ++b) {
          if (!(uni[b] > 0.0)) continue;
          const double u2 = uni[b] * uni[b];
          for (std::size_t i = b * pixels; i < (b + 1) * pixels; ++i) {
            const double d = -(w[i] * g[i] * uni[b] - inter[b] * w[i] * (1.0 - g[i])) / u2;
            gp[i] += static_cast<T>(upstream * d);
          }
        }
      });
}

/// weighted IoU + n * weighted BCE with a shared weight map.
template <typename T>
Tensor<T> combined_loss(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& omega, double n) {
  return add(weighted_iou(pred, gt, omega), scale(weighted_bce(pred, gt, omega), static_cast<T>(n)));
}

template <typename T>
Tensor<T> combined_loss(const Tensor<T>& pred, const Tensor<T>& gt, const LossConfig& cfg) {
  return combined_loss(pred, gt, pixel_weights(gt, cfg.weight_kernel), cfg.n);
}

template <typename T>
struct LossTerms {
  Tensor<T> total;
  double transformer = 0.0;
  double cnn = 0.0;
  double fused = 0.0;
};

/// alpha L(G, S_t) + beta L(G, S_r) + gamma L(G, S_z). All maps must already be at the
/// resolution of G.
template <typename T>
LossTerms<T> total_loss(const Tensor<T>& s_t, const Tensor<T>& s_r, const Tensor<T>& s_z, const Tensor<T>& gt,
                        const LossConfig& cfg) {
  detail::require_same_dims(s_t, gt, "total_loss S_t");
  detail::require_same_dims(s_r, gt, "total_loss S_r");
  detail::require_same_dims(s_z, gt, "total_loss S_z");
  const auto omega = pixel_weights(gt, cfg.weight_kernel);
  LossTerms<T> out;
  auto lt = combined_loss(s_t, gt, omega, cfg.n);
  auto lr = combined_loss(s_r, gt, omega, cfg.n);
  auto lz = combined_loss(s_z, gt, omega, cfg.n);
  out.transformer = lt.item();
  out.cnn = lr.item();
  out.fused = lz.item();
  out.total = add(add(scale(lt, static_cast<T>(cfg.alpha)), scale(lr, static_cast<T>(cfg.beta))),
                  scale(lz, static_cast<T>(cfg.gamma)));
  return out;
}

}  // namespace mugen
