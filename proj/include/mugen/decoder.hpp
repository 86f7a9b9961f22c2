#pragma once

#include <algorithm>
#include <array>
#include <string>

#include "mugen/nn/layers.hpp"

namespace mugen {

/// Additive attention gate: alpha = sigmoid(psi(ReLU(W_g g + W_x x))), output alpha * x.
/// g and x must share spatial extent.
template <typename T>
class AttentionGate {
 public:
  AttentionGate() = default;
  AttentionGate(nn::ParameterStore<T>& store, const std::string& name, std::size_t gate_channels,
                std::size_t skip_channels)
      : wg_(store, name + ".wg", gate_channels, inter(skip_channels), 1, {1, 0, false}),
        wx_(store, name + ".wx", skip_channels, inter(skip_channels), 1, {1, 0, false}, false),
        psi_(store, name + ".psi", inter(skip_channels), 1, 1, {1, 0, false}) {}

  Tensor<T> operator()(const Tensor<T>& g, const Tensor<T>& x, Tensor<T>* alpha = nullptr) const {
    if (g.rank() != 4 || x.rank() != 4 || g.dim(0) != x.dim(0) || g.dim(2) != x.dim(2) ||
        g.dim(3) != x.dim(3)) {
      throw ShapeError("attention_gate: gate " + shape_string(g.dims()) + " and skip " +
                       shape_string(x.dims()) + " differ spatially");
    }
    auto a = sigmoid(psi_(relu(add(wg_(g), wx_(x)))));
    if (alpha) *alpha = a;
    return mul(x, a);
  }

  nn::Conv2d<T>& wg() { return wg_; }
  nn::Conv2d<T>& wx() { return wx_; }
  nn::Conv2d<T>& psi() { return psi_; }

 private:
  static std::size_t inter(std::size_t c) { return std::max<std::size_t>(1, c / 2); }

  nn::Conv2d<T> wg_, wx_, psi_;
};

template <typename T>
struct DecoderOutput {
  std::array<Tensor<T>, 3> z;      // 1/8, 1/4 and 1/2 scale
  std::array<Tensor<T>, 2> alpha;  // gates applied to y1 and y2
  Tensor<T> prediction;            // sigmoid map at full resolution
};

/// Progressive decoder over the fused pyramid y0 (1/16), y1 (1/8), y2 (1/4):
///   z0 = up(CBR(y0)), z1 = up(CBR(z0 + AG(z0, y1))), z2 = up(CBR(z1 + AG(z1, y2))),
///   S_z = sigmoid(conv3x3(up(z2))).
/// `widths` are the pyramid widths; z0 takes the width of y1 and z1 the width of y2 so the
/// skip sums line up.
template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(nn::ParameterStore<T>& store, const std::string& name, const std::array<std::size_t, 3>& widths,
          std::size_t final_width)
      : stage0_(store, name + ".stage0", widths[0], widths[1]),
        gate1_(store, name + ".gate1", widths[1], widths[1]),
        stage1_(store, name + ".stage1", widths[1], widths[2]),
        gate2_(store, name + ".gate2", widths[2], widths[2]),
        stage2_(store, name + ".stage2", widths[2], final_width),
        out_(store, name + ".out", final_width, 1, 3, {1, 1, false}) {}

  DecoderOutput<T> operator()(const std::array<Tensor<T>, 3>& y, bool training) {
    constexpr auto up = UpsampleMode::bilinear;
    DecoderOutput<T> out;
    out.z[0] = upsample2x(stage0_(y[0], training), up);
    out.z[1] = upsample2x(stage1_(add(out.z[0], gate1_(out.z[0], y[1], &out.alpha[0])), training), up);
    out.z[2] = upsample2x(stage2_(add(out.z[1], gate2_(out.z[1], y[2], &out.alpha[1])), training), up);
    out.prediction = sigmoid(out_(upsample2x(out.z[2], up)));
    return out;
  }

  AttentionGate<T>& gate1() { return gate1_; }
  AttentionGate<T>& gate2() { return gate2_; }
  nn::Conv2d<T>& output() { return out_; }

 private:
  nn::ConvBnRelu<T> stage0_;
  AttentionGate<T> gate1_;
  nn::ConvBnRelu<T> stage1_;
  AttentionGate<T> gate2_;
  nn::ConvBnRelu<T> stage2_;
  nn::Conv2d<T> out_;
};

}  // namespace mugen
