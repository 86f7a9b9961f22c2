#pragma once

#include <array>

#include "mugen/core/tensor.hpp"

namespace mugen {

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape dims) {
  if (element_count(dims) != x.numel()) {
    throw ShapeError("reshape " + shape_string(x.dims()) + " -> " + shape_string(dims) +
                     " changes element count");
  }
  return detail::make_result<T>(std::move(dims), x.values(), "reshape", {x}, [](Node<T>& self) {
    auto gx = detail::input_grad(self, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

namespace detail {

/// Calls fn(out_offset, in_offset) for every element of permute(x, perm).
template <typename Fn>
void for_each_permuted(const Shape& in_dims, const std::vector<std::size_t>& perm, Fn&& fn) {
  const std::size_t rank = in_dims.size();
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t k = rank - 1; k-- > 0;) in_stride[k] = in_stride[k + 1] * in_dims[k + 1];
  std::vector<std::size_t> out_dims(rank), step(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    out_dims[k] = in_dims[perm[k]];
    step[k] = in_stride[perm[k]];
  }
  std::vector<std::size_t> idx(rank, 0);
  const std::size_t total = element_count(in_dims);
  std::size_t in_off = 0;
  for (std::size_t o = 0; o < total; ++o) {
    fn(o, in_off);
    for (std::size_t k = rank; k-- > 0;) {
      if (++idx[k] < out_dims[k]) {
        in_off += step[k];
        break;
      }
      in_off -= step[k] * (out_dims[k] - 1);
      idx[k] = 0;
    }
  }
}

}  // namespace detail

/// Reorders dimensions: output dim k is input dim perm[k].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::vector<std::size_t> perm) {
  const std::size_t rank = x.rank();
  if (perm.size() != rank) throw ShapeError("permute: permutation rank mismatch");
  std::vector<bool> used(rank, false);
  for (auto p : perm) {
    if (p >= rank || used[p]) throw ShapeError("permute: invalid permutation");
    used[p] = true;
  }
  Shape out_dims(rank);
  for (std::size_t k = 0; k < rank; ++k) out_dims[k] = x.dim(perm[k]);
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  detail::for_each_permuted(x.dims(), perm,
                            [&](std::size_t o, std::size_t i) { out[o] = xv[i]; });
  Shape in_dims = x.dims();
  return detail::make_result<T>(std::move(out_dims), std::move(out), "permute", {x},
                                [in_dims, perm](Node<T>& self) {
                                  auto gx = detail::input_grad(self, 0);
                                  if (gx.empty()) return;
                                  detail::for_each_permuted(
                                      in_dims, perm,
                                      [&](std::size_t o, std::size_t i) { gx[i] += self.grad[o]; });
                                });
}

/// Tiles a [1 x ...] tensor n times along the leading dimension.
template <typename T>
Tensor<T> repeat_batch(const Tensor<T>& x, std::size_t n) {
  if (x.dim(0) != 1) throw ShapeError("repeat_batch expects leading extent 1");
  const std::size_t block = x.numel();
  std::vector<T> out(block * n);
  for (std::size_t b = 0; b < n; ++b) {
    std::copy(x.values().begin(), x.values().end(), out.begin() + static_cast<std::ptrdiff_t>(b * block));
  }
  Shape dims = x.dims();
  dims[0] = n;
  return detail::make_result<T>(std::move(dims), std::move(out), "repeat_batch", {x},
                                [block, n](Node<T>& self) {
                                  auto gx = detail::input_grad(self, 0);
                                  if (gx.empty()) return;
                                  for (std::size_t b = 0; b < n; ++b) {
                                    for (std::size_t i = 0; i < block; ++i) {
                                      gx[i] += self.grad[b * block + i];
                                    }
                                  }
                                });
}

/// Stacks N x C_i x H x W tensors along the channel axis, in argument order.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels needs at least one tensor");
  const auto& d0 = xs.front().dims();
  if (d0.size() != 4) throw ShapeError("concat_channels expects N x C x H x W tensors");
  std::size_t channels = 0;
  for (const auto& x : xs) {
    const auto& d = x.dims();
    if (d.size() != 4 || d[0] != d0[0] || d[2] != d0[2] || d[3] != d0[3]) {
      throw ShapeError("concat_channels: " + shape_string(d) + " incompatible with " +
                       shape_string(d0));
    }
    channels += d[1];
  }
  const std::size_t n = d0[0], plane = d0[2] * d0[3];
  std::vector<T> out(n * channels * plane);
  std::vector<std::size_t> offsets;
  std::size_t c_off = 0;
  for (const auto& x : xs) {
    offsets.push_back(c_off);
    const std::size_t c = x.dim(1);
    for (std::size_t b = 0; b < n; ++b) {
      std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>(b * c * plane), c * plane,
                  out.begin() + static_cast<std::ptrdiff_t>((b * channels + c_off) * plane));
    }
    c_off += c;
  }

  auto node = std::make_shared<Node<T>>();
  node->dims = Shape{n, channels, d0[2], d0[3]};
  node->data = std::move(out);
  node->op = "concat_channels";
  if (finite_checks_enabled() && !detail::all_finite<T>(node->data)) {
    throw NumericalError(node->op, "non-finite output from op 'concat_channels'");
  }
  bool needs = false;
  for (const auto& x : xs) needs = needs || x.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& x : xs) node->inputs.push_back(x.node_ptr());
    node->backward = [offsets, n, channels, plane](Node<T>& self) {
      for (std::size_t i = 0; i < self.inputs.size(); ++i) {
        auto gx = detail::input_grad(self, i);
        if (gx.empty()) continue;
        const std::size_t c = self.inputs[i]->dims[1];
        for (std::size_t b = 0; b < n; ++b) {
          const T* src = self.grad.data() + (b * channels + offsets[i]) * plane;
          T* dst = gx.data() + b * c * plane;
          for (std::size_t j = 0; j < c * plane; ++j) dst[j] += src[j];
        }
      }
    };
  }
  return Tensor<T>(std::move(node));
}

}  // namespace mugen
