#pragma once

#include <array>
#include <string>
#include <vector>

#include "mugen/errors.hpp"
#include "mugen/nn/layers.hpp"
#include "mugen/vit_branch.hpp"

namespace mugen {

enum class StemKind { compact, classic };

/// ResNet-style backbone layout. `compact` is a 3x3 stride-1 stem; `classic` is the
/// usual 7x7 stride-2 conv followed by a 3x3 stride-2 max pool.
struct ResNetConfig {
  StemKind stem = StemKind::compact;
  std::size_t stem_width = 16;
  std::vector<std::size_t> widths{16, 32, 64, 64};
  std::vector<std::size_t> blocks{2, 2, 2, 2};
  std::vector<std::size_t> strides{2, 2, 2, 2};

  static ResNetConfig resnet34_trunk() {
    return {StemKind::classic, 64, {64, 128, 256}, {3, 4, 6}, {1, 2, 2}};
  }

  std::size_t total_stride() const {
    std::size_t s = stem == StemKind::classic ? 4 : 1;
    for (auto v : strides) s *= v;
    return s;
  }

  void validate() const {
    if (widths.empty() || widths.size() != blocks.size() || widths.size() != strides.size()) {
      throw ConfigError("resnet widths, blocks and strides must have the same nonzero length");
    }
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (widths[i] == 0 || blocks[i] == 0) throw ConfigError("resnet stage with zero width or blocks");
      if (strides[i] != 1 && strides[i] != 2) throw ConfigError("resnet stage stride must be 1 or 2");
    }
    if (stem_width == 0) throw ConfigError("resnet stem width must be positive");
    if (total_stride() != 16) {
      throw ConfigError("resnet total stride must be 16, got " + std::to_string(total_stride()));
    }
  }
};

enum class Shortcut { automatic, identity };

/// Two 3x3 conv-BN layers with a residual connection. The shortcut is the identity when
/// shapes allow it, otherwise a strided 1x1 conv + BN.
template <typename T>
class BasicBlock {
 public:
  BasicBlock() = default;
  BasicBlock(nn::ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
             std::size_t stride, Shortcut shortcut = Shortcut::automatic)
      : conv1_(store, name + ".conv1", in, out, 3, {stride, 1, true}, false, nn::kNormedConvGain),
        bn1_(store, name + ".bn1", out),
        conv2_(store, name + ".conv2", out, out, 3, {1, 1, false}, false, nn::kNormedConvGain),
        bn2_(store, name + ".bn2", out) {
    const bool needs_projection = in != out || stride != 1;
    if (needs_projection && shortcut == Shortcut::identity) {
      throw ShapeError("basic_block: identity shortcut cannot map " + std::to_string(in) + " channels / stride " +
                       std::to_string(stride) + " to " + std::to_string(out) + " channels");
    }
    if (needs_projection) {
      proj_ = nn::Conv2d<T>(store, name + ".down", in, out, 1, {stride, 0, true}, false, nn::kNormedConvGain);
      proj_bn_ = nn::BatchNorm2d<T>(store, name + ".down_bn", out);
    }
  }

  Tensor<T> operator()(const Tensor<T>& x, bool training) {
    auto h = relu(bn1_(conv1_(x), training));
    h = bn2_(conv2_(h), training);
    auto skip = proj_.weight().defined() ? proj_bn_(proj_(x), training) : x;
    if (skip.dims() != h.dims()) {
      throw ShapeError("basic_block: residual " + shape_string(skip.dims()) + " vs " + shape_string(h.dims()));
    }
    return relu(add(h, skip));
  }

  nn::Conv2d<T>& conv1() { return conv1_; }
  nn::Conv2d<T>& conv2() { return conv2_; }

 private:
  nn::Conv2d<T> conv1_;
  nn::BatchNorm2d<T> bn1_;
  nn::Conv2d<T> conv2_;
  nn::BatchNorm2d<T> bn2_;
  nn::Conv2d<T> proj_;
  nn::BatchNorm2d<T> proj_bn_;
};

/// CNN branch: backbone down to 1/16 scale, a 1x1 projection to the first pyramid width
/// (r0), two learned upsampling stages (r1, r2), and a one-channel prediction S_r.
template <typename T>
class CnnBranch {
 public:
  CnnBranch() = default;
  CnnBranch(nn::ParameterStore<T>& store, const std::string& name, std::size_t in_channels,
            std::size_t height, std::size_t width, const ResNetConfig& cfg,
            const std::array<std::size_t, 3>& widths)
      : cfg_(cfg), height_(height), width_(width) {
    cfg.validate();
    if (height % 16 != 0 || width % 16 != 0) throw ShapeError("cnn branch needs image dims divisible by 16");
    if (cfg.stem == StemKind::classic) {
      stem_ = nn::ConvBnRelu<T>(store, name + ".stem", in_channels, cfg.stem_width, 7, {2, 3, true});
    } else {
      stem_ = nn::ConvBnRelu<T>(store, name + ".stem", in_channels, cfg.stem_width, 3, {1, 1, false});
    }
    std::size_t ch = cfg.stem_width;
    for (std::size_t s = 0; s < cfg.widths.size(); ++s) {
      for (std::size_t b = 0; b < cfg.blocks[s]; ++b) {
        const std::size_t stride = b == 0 ? cfg.strides[s] : 1;
        blocks_.emplace_back(store, name + ".layer" + std::to_string(s + 1) + "." + std::to_string(b), ch,
                             cfg.widths[s], stride);
        ch = cfg.widths[s];
      }
    }
    project_ = nn::ConvBnRelu<T>(store, name + ".project", ch, widths[0], 1, {1, 0, false});
    up1_ = UpStage<T>(store, name + ".up1", widths[0], widths[1]);
    up2_ = UpStage<T>(store, name + ".up2", widths[1], widths[2]);
    head_ = PredictionHead<T>(store, name + ".head", widths[2]);
  }

  /// Deepest backbone features at 1/16 scale, before projection.
  Tensor<T> backbone(const Tensor<T>& image, bool training) {
    auto x = stem_(image, training);
    if (cfg_.stem == StemKind::classic) x = max_pool2d(x, 3, {2, 1, true});
    for (auto& block : blocks_) x = block(x, training);
    return x;
  }

  BranchOutput<T> operator()(const Tensor<T>& image, bool training) {
    BranchOutput<T> out;
    out.pyramid[0] = project_(backbone(image, training), training);
    out.pyramid[1] = up1_(out.pyramid[0], training);
    out.pyramid[2] = up2_(out.pyramid[1], training);
    out.prediction = head_(out.pyramid[2], height_, width_);
    return out;
  }

  std::vector<BasicBlock<T>>& blocks() { return blocks_; }
  nn::ConvBnRelu<T>& stem() { return stem_; }

 private:
  ResNetConfig cfg_;
  std::size_t height_ = 0, width_ = 0;
  nn::ConvBnRelu<T> stem_;
  std::vector<BasicBlock<T>> blocks_;
  nn::ConvBnRelu<T> project_;
  UpStage<T> up1_, up2_;
  PredictionHead<T> head_;
};

}  // namespace mugen
