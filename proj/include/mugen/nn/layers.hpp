#pragma once

#include <string>

#include "mugen/core/ops.hpp"
#include "mugen/nn/parameters.hpp"

namespace mugen::nn {

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
         Init weight_init, bool with_bias = true)
      : weight_(store.parameter(name + ".weight", {out, in}, weight_init)) {
    if (with_bias) bias_ = store.parameter(name + ".bias", {out}, Init::zeros());
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight_, bias_); }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
};

/// Init gain for a bias-free conv that feeds a batch norm. The norm makes such a conv
/// invariant to its weight scale, so a smaller start means each Adam step turns the
/// weights further.
inline constexpr double kNormedConvGain = 0.1;

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
         std::size_t kernel, ConvGeometry geom, bool with_bias = true, double gain = 1.0)
      : weight_(store.parameter(name + ".weight", {out, in, kernel, kernel},
                                Init::normal(gain * Init::kaiming(in * kernel * kernel).value))),
        geom_(geom) {
    if (with_bias) bias_ = store.parameter(name + ".bias", {out}, Init::zeros());
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight_, bias_, geom_); }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  std::size_t out_channels() const { return weight_.dim(0); }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
  ConvGeometry geom_;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParameterStore<T>& store, const std::string& name, std::size_t channels)
      : gamma_(store.parameter(name + ".gamma", {channels}, Init::ones())),
        beta_(store.parameter(name + ".beta", {channels}, Init::zeros())),
        stats_{store.buffer(name + ".running_mean", {channels}, T(0)),
               store.buffer(name + ".running_var", {channels}, T(1))} {}

  Tensor<T> operator()(const Tensor<T>& x, bool training) {
    return batch_norm(x, gamma_, beta_, stats_, training);
  }

  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }
  RunningStats<T>& stats() { return stats_; }

 private:
  Tensor<T> gamma_;
  Tensor<T> beta_;
  RunningStats<T> stats_;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore<T>& store, const std::string& name, std::size_t dim)
      : gamma_(store.parameter(name + ".gamma", {dim}, Init::ones())),
        beta_(store.parameter(name + ".beta", {dim}, Init::zeros())) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma_, beta_); }

 private:
  Tensor<T> gamma_;
  Tensor<T> beta_;
};

/// conv (no bias) -> batch norm -> ReLU.
template <typename T>
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
             std::size_t kernel = 3, ConvGeometry geom = {1, 1, false})
      : conv_(store, name + ".conv", in, out, kernel, geom, false, kNormedConvGain), bn_(store, name + ".bn", out) {}

  Tensor<T> operator()(const Tensor<T>& x, bool training) { return relu(bn_(conv_(x), training)); }

  Conv2d<T>& conv() { return conv_; }
  BatchNorm2d<T>& bn() { return bn_; }

 private:
  Conv2d<T> conv_;
  BatchNorm2d<T> bn_;
};

}  // namespace mugen::nn
