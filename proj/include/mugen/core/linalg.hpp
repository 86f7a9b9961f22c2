#pragma once

#include <Eigen/Core>

#include "mugen/core/tensor.hpp"

namespace mugen {
namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
ConstMatrixMap<T> cmap(const T* p, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap<T>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <typename T>
MatrixMap<T> mmap(T* p, std::size_t rows, std::size_t cols) {
  return MatrixMap<T>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

}  // namespace detail

/// C = A * B for A [m x k], B [k x n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul expects rank-2 operands, got " + shape_string(a.dims()) + " and " +
                     shape_string(b.dims()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul inner dimensions differ: a has " + std::to_string(k) +
                     " columns, b has " + std::to_string(b.dim(0)) + " rows");
  }
  std::vector<T> out(m * n);
  detail::mmap(out.data(), m, n).noalias() =
      detail::cmap(a.values().data(), m, k) * detail::cmap(b.values().data(), k, n);
  return detail::make_result<T>(Shape{m, n}, std::move(out), "matmul", {a, b},
                                [m, k, n](Node<T>& self) {
                                  auto dc = detail::cmap(self.grad.data(), m, n);
                                  auto ga = detail::input_grad(self, 0);
                                  auto gb = detail::input_grad(self, 1);
                                  if (!ga.empty()) {
                                    detail::mmap(ga.data(), m, k).noalias() +=
                                        dc * detail::cmap(detail::input_data(self, 1).data(), k, n)
                                                 .transpose();
                                  }
                                  if (!gb.empty()) {
                                    detail::mmap(gb.data(), k, n).noalias() +=
                                        detail::cmap(detail::input_data(self, 0).data(), m, k)
                                            .transpose() *
                                        dc;
                                  }
                                });
}

/// Batched product over the leading dimension: C[i] = op(A[i]) * op(B[i]),
/// where op optionally transposes the trailing two dimensions.
template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a = false,
                         bool transpose_b = false) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    throw ShapeError("batched_matmul expects [B,m,k] x [B,k,n], got " + shape_string(a.dims()) +
                     " and " + shape_string(b.dims()));
  }
  const std::size_t batch = a.dim(0);
  const std::size_t ar = a.dim(1), ac = a.dim(2), br = b.dim(1), bc = b.dim(2);
  const std::size_t m = transpose_a ? ac : ar;
  const std::size_t k = transpose_a ? ar : ac;
  const std::size_t kb = transpose_b ? bc : br;
  const std::size_t n = transpose_b ? br : bc;
  if (k != kb) {
    throw ShapeError("batched_matmul inner dimensions differ: " + std::to_string(k) + " vs " +
                     std::to_string(kb));
  }
  std::vector<T> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    auto am = detail::cmap(a.values().data() + i * ar * ac, ar, ac);
    auto bm = detail::cmap(b.values().data() + i * br * bc, br, bc);
    auto cm = detail::mmap(out.data() + i * m * n, m, n);
    if (!transpose_a && !transpose_b) cm.noalias() = am * bm;
    else if (!transpose_a && transpose_b) cm.noalias() = am * bm.transpose();
    else if (transpose_a && !transpose_b) cm.noalias() = am.transpose() * bm;
    else cm.noalias() = am.transpose() * bm.transpose();
  }
  return detail::make_result<T>(
      Shape{batch, m, n}, std::move(out), "batched_matmul", {a, b},
      [=](Node<T>& self) {
        auto ga = detail::input_grad(self, 0);
        auto gb = detail::input_grad(self, 1);
        const auto& av = detail::input_data(self, 0);
        const auto& bv = detail::input_data(self, 1);
        for (std::size_t i = 0; i < batch; ++i) {
          auto dc = detail::cmap(self.grad.data() + i * m * n, m, n);
          auto am = detail::cmap(av.data() + i * ar * ac, ar, ac);
          auto bm = detail::cmap(bv.data() + i * br * bc, br, bc);
          if (!ga.empty()) {
            // d op(A) = dC * op(B)^T
            detail::RowMatrix<T> d = transpose_b ? (dc * bm).eval() : (dc * bm.transpose()).eval();
            auto gm = detail::mmap(ga.data() + i * ar * ac, ar, ac);
            if (transpose_a) gm += d.transpose();
            else gm += d;
          }
          if (!gb.empty()) {
            // d op(B) = op(A)^T * dC
            detail::RowMatrix<T> d = transpose_a ? (am * dc).eval() : (am.transpose() * dc).eval();
            auto gm = detail::mmap(gb.data() + i * br * bc, br, bc);
            if (transpose_b) gm += d.transpose();
            else gm += d;
          }
        }
      });
}

/// y = x W^T + b over the last dimension of x. W is [out x in]; bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {}) {
  if (weight.rank() != 2) throw ShapeError("linear weight must be rank 2");
  const std::size_t in = weight.dim(1), out_features = weight.dim(0);
  if (x.dims().back() != in) {
    throw ShapeError("linear: input " + shape_string(x.dims()) + " does not end in " +
                     std::to_string(in));
  }
  if (bias.defined() && bias.numel() != out_features) {
    throw ShapeError("linear: bias length " + std::to_string(bias.numel()) + " != " +
                     std::to_string(out_features));
  }
  const std::size_t rows = x.numel() / in;
  Shape dims = x.dims();
  dims.back() = out_features;
  std::vector<T> out(rows * out_features);
  auto ym = detail::mmap(out.data(), rows, out_features);
  ym.noalias() = detail::cmap(x.values().data(), rows, in) *
                 detail::cmap(weight.values().data(), out_features, in).transpose();
  if (bias.defined()) {
    auto bv = detail::cmap(bias.values().data(), 1, out_features);
    ym.rowwise() += bv.row(0);
  }
  return detail::make_result<T>(
      std::move(dims), std::move(out), "linear", {x, weight, bias},
      [rows, in, out_features](Node<T>& self) {
        auto dy = detail::cmap(self.grad.data(), rows, out_features);
        auto gx = detail::input_grad(self, 0);
        auto gw = detail::input_grad(self, 1);
        if (!gx.empty()) {
          detail::mmap(gx.data(), rows, in).noalias() +=
              dy * detail::cmap(detail::input_data(self, 1).data(), out_features, in);
        }
        if (!gw.empty()) {
          detail::mmap(gw.data(), out_features, in).noalias() +=
              dy.transpose() * detail::cmap(detail::input_data(self, 0).data(), rows, in);
        }
        if (self.inputs[2]) {
          auto gb = detail::input_grad(self, 2);
          if (!gb.empty()) {
            // plain loops: Eigen's vectorized sum depends on pointer alignment, which
            // would make training bits vary from run to run
            const T* g = self.grad.data();
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t o = 0; o < out_features; ++o) gb[o] += g[r * out_features + o];
          }
        }
      });
}

}  // namespace mugen
