#pragma once

#include <algorithm>
#include <string>

#include "mugen/errors.hpp"
#include "mugen/nn/layers.hpp"

namespace mugen {

enum class ChannelPooling { average, max };

/// Channel gate: global pool -> FC (C -> C/r) -> ReLU -> FC (-> C) -> sigmoid, then a
/// per-channel rescale of the input. Average pooling gives squeeze-and-excitation, max
/// pooling gives the channel-attention variant.
template <typename T>
class ChannelGate {
 public:
  ChannelGate() = default;
  ChannelGate(nn::ParameterStore<T>& store, const std::string& name, std::size_t channels,
              std::size_t reduction, ChannelPooling pooling)
      : fc1_(store, name + ".fc1", channels, std::max<std::size_t>(1, channels / reduction),
             nn::Init::kaiming(channels)),
        fc2_(store, name + ".fc2", std::max<std::size_t>(1, channels / reduction), channels,
             nn::Init::kaiming(std::max<std::size_t>(1, channels / reduction))),
        pooling_(pooling) {
    if (reduction == 0) throw ConfigError("channel gate reduction must be positive");
  }

  /// Gate values in (0, 1), shape [N, C].
  Tensor<T> weights(const Tensor<T>& x) const {
    auto pooled = pooling_ == ChannelPooling::average ? global_avg_pool(x) : global_max_pool(x);
    return sigmoid(fc2_(relu(fc1_(pooled))));
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto w = weights(x);
    return mul(x, reshape(w, {x.dim(0), x.dim(1), 1, 1}));
  }

  nn::Linear<T>& fc1() { return fc1_; }
  nn::Linear<T>& fc2() { return fc2_; }

 private:
  nn::Linear<T> fc1_, fc2_;
  ChannelPooling pooling_ = ChannelPooling::average;
};

/// Fuses a transformer feature t and a CNN feature r of equal shape [N, C, H, W]:
/// f = concat[SE(t), CA(r), t, r], y = ReLU(conv-BN-ReLU-conv-BN(f) + conv1x1(f)).
template <typename T>
class MugenFusion {
 public:
  MugenFusion() = default;
  MugenFusion(nn::ParameterStore<T>& store, const std::string& name, std::size_t channels,
              std::size_t out_channels, std::size_t reduction)
      : se_(store, name + ".se", channels, reduction, ChannelPooling::average),
        ca_(store, name + ".ca", channels, reduction, ChannelPooling::max),
        conv1_(store, name + ".conv1", 4 * channels, out_channels, 3, {1, 1, false}, false, nn::kNormedConvGain),
        bn1_(store, name + ".bn1", out_channels),
        conv2_(store, name + ".conv2", out_channels, out_channels, 3, {1, 1, false}, false,
               nn::kNormedConvGain),
        bn2_(store, name + ".bn2", out_channels),
        skip_(store, name + ".skip", 4 * channels, out_channels, 1, {1, 0, false}),
        channels_(channels) {}

  /// With `attention` off the gated copies are replaced by the raw inputs, i.e.
  /// f = concat[t, r, t, r].
  Tensor<T> operator()(const Tensor<T>& t, const Tensor<T>& r, bool training, bool attention = true) {
    if (t.dims() != r.dims()) {
      throw ShapeError("mugen_fuse: t " + shape_string(t.dims()) + " and r " + shape_string(r.dims()) +
                       " differ");
    }
    if (t.rank() != 4 || t.dim(1) != channels_) {
      throw ShapeError("mugen_fuse expects [N, " + std::to_string(channels_) + ", H, W], got " +
                       shape_string(t.dims()));
    }
    auto f = attention ? concat_channels<T>({se_(t), ca_(r), t, r}) : concat_channels<T>({t, r, t, r});
    auto main = bn2_(conv2_(relu(bn1_(conv1_(f), training))), training);
    return relu(add(main, skip_(f)));
  }

  ChannelGate<T>& se() { return se_; }
  ChannelGate<T>& ca() { return ca_; }
  nn::Conv2d<T>& skip() { return skip_; }

 private:
  ChannelGate<T> se_, ca_;
  nn::Conv2d<T> conv1_;
  nn::BatchNorm2d<T> bn1_;
  nn::Conv2d<T> conv2_;
  nn::BatchNorm2d<T> bn2_;
  nn::Conv2d<T> skip_;
  std::size_t channels_ = 0;
};

/// Optional single-channel readout of a fused map: conv3x3-BN-ReLU to D/2, then 1x1 to 1.
template <typename T>
class FusionHead {
 public:
  FusionHead() = default;
  FusionHead(nn::ParameterStore<T>& store, const std::string& name, std::size_t channels)
      : reduce_(store, name + ".reduce", channels, std::max<std::size_t>(1, channels / 2)),
        out_(store, name + ".out", std::max<std::size_t>(1, channels / 2), 1, 1, {1, 0, false}) {}

  Tensor<T> operator()(const Tensor<T>& y, bool training) { return out_(reduce_(y, training)); }

 private:
  nn::ConvBnRelu<T> reduce_;
  nn::Conv2d<T> out_;
};

}  // namespace mugen
