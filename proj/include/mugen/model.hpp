#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mugen/cnn_branch.hpp"
#include "mugen/decoder.hpp"
#include "mugen/errors.hpp"
#include "mugen/mugen_fusion.hpp"
#include "mugen/nn/parameters.hpp"
#include "mugen/vit_branch.hpp"

namespace mugen {

struct Ablation {
  bool transformer_branch = true;
  bool cnn_branch = true;
  bool mugen_module = true;
};

struct ModelConfig {
  std::size_t width = 64;
  std::size_t height = 48;
  std::size_t in_channels = 3;
  VitConfig vit;
  ResNetConfig cnn;
  std::array<std::size_t, 3> pyramid{64, 64, 64};
  std::size_t decoder_width = 32;
  std::size_t reduction = 16;
  Ablation ablation;
  std::uint64_t seed = 0;

  /// 64x48 input, P = 4, 16..64 channel widths.
  static ModelConfig desk() { return {}; }

  /// 256x192 input, P = 16, DeiT-small-like encoder and a ResNet-34 trunk.
  static ModelConfig paper() {
    ModelConfig c;
    c.width = 256;
    c.height = 192;
    c.vit = {16, 384, 6, 12, 4, true};
    c.cnn = ResNetConfig::resnet34_trunk();
    c.pyramid = {384, 384, 384};
    c.decoder_width = 64;
    return c;
  }

  void validate() const {
    if (!ablation.transformer_branch && !ablation.cnn_branch) {
      throw ConfigError("at least one of the transformer and CNN branches must be enabled");
    }
    if (width == 0 || height == 0 || width % 16 != 0 || height % 16 != 0) {
      throw ConfigError("resolution " + std::to_string(width) + "x" + std::to_string(height) +
                        " must be a positive multiple of 16");
    }
    if (in_channels == 0) throw ConfigError("in_channels must be positive");
    for (auto d : pyramid) {
      if (d == 0) throw ConfigError("pyramid widths must be positive");
      if (reduction == 0 || d % reduction != 0) {
        throw ConfigError("pyramid width " + std::to_string(d) + " not divisible by reduction " +
                          std::to_string(reduction));
      }
    }
    if (decoder_width == 0) throw ConfigError("decoder width must be positive");
    try {
      vit.validate(height, width);
    } catch (const ShapeError& e) {
      throw ConfigError(e.what());
    }
    cnn.validate();
  }
};

template <typename T>
struct ModelOutputs {
  BranchOutput<T> transformer;
  BranchOutput<T> cnn;
  std::array<Tensor<T>, 3> fused;
  DecoderOutput<T> decoder;

  const Tensor<T>& s_t() const { return transformer.prediction; }
  const Tensor<T>& s_r() const { return cnn.prediction; }
  const Tensor<T>& s_z() const { return decoder.prediction; }
};

/// Hybrid transformer + CNN segmentation network. Both branches yield a three-scale
/// pyramid; each scale is fused by a Mugen module and the fused pyramid is decoded by an
/// attention-gated upsampling path.
///
/// A disabled branch is replaced by a learned constant pyramid (one [1, D, h, w] parameter
/// per scale, tiled over the batch) feeding its own prediction head, so every downstream
/// shape is unchanged.
template <typename T>
class MugenNet {
 public:
  explicit MugenNet(const ModelConfig& cfg) : cfg_(cfg), store_(cfg.seed) {
    cfg_.validate();
    const auto& w = cfg_.pyramid;
    const std::array<std::size_t, 3> divisor{16, 8, 4};
    if (cfg_.ablation.transformer_branch) {
      vit_.emplace(store_, "vit", cfg_.in_channels, cfg_.height, cfg_.width, cfg_.vit, w);
    } else {
      for (std::size_t i = 0; i < 3; ++i) {
        t_const_[i] = store_.parameter("vit_const.t" + std::to_string(i),
                                       {1, w[i], cfg_.height / divisor[i], cfg_.width / divisor[i]},
                                       nn::Init::zeros());
      }
      t_head_ = PredictionHead<T>(store_, "vit_const.head", w[2]);
    }
    if (cfg_.ablation.cnn_branch) {
      cnn_.emplace(store_, "cnn", cfg_.in_channels, cfg_.height, cfg_.width, cfg_.cnn, w);
    } else {
      for (std::size_t i = 0; i < 3; ++i) {
        r_const_[i] = store_.parameter("cnn_const.r" + std::to_string(i),
                                       {1, w[i], cfg_.height / divisor[i], cfg_.width / divisor[i]},
                                       nn::Init::zeros());
      }
      r_head_ = PredictionHead<T>(store_, "cnn_const.head", w[2]);
    }
    for (std::size_t i = 0; i < 3; ++i) {
      fusion_[i] = MugenFusion<T>(store_, "mugen" + std::to_string(i), w[i], w[i], cfg_.reduction);
    }
    decoder_ = Decoder<T>(store_, "decoder", w, cfg_.decoder_width);
  }

  MugenNet(const MugenNet&) = delete;
  MugenNet& operator=(const MugenNet&) = delete;
  MugenNet(MugenNet&&) = default;
  MugenNet& operator=(MugenNet&&) = default;

  /// images: [N, C, H, W] with values in [0, 1].
  ModelOutputs<T> forward(const Tensor<T>& images, bool training) {
    if (images.rank() != 4 || images.dim(1) != cfg_.in_channels || images.dim(2) != cfg_.height ||
        images.dim(3) != cfg_.width) {
      throw ShapeError("model expects [N, " + std::to_string(cfg_.in_channels) + ", " +
                       std::to_string(cfg_.height) + ", " + std::to_string(cfg_.width) + "], got " +
                       shape_string(images.dims()));
    }
    const std::size_t n = images.dim(0);
    ModelOutputs<T> out;
    out.transformer = vit_ ? (*vit_)(images, training) : constant_stream(t_const_, t_head_, n);
    out.cnn = cnn_ ? (*cnn_)(images, training) : constant_stream(r_const_, r_head_, n);
    for (std::size_t i = 0; i < 3; ++i) {
      out.fused[i] = fusion_[i](out.transformer.pyramid[i], out.cnn.pyramid[i], training,
                                cfg_.ablation.mugen_module);
    }
    out.decoder = decoder_(out.fused, training);
    return out;
  }

  nn::ParameterStore<T>& store() { return store_; }
  const ModelConfig& config() const { return cfg_; }
  std::optional<VitBranch<T>>& transformer() { return vit_; }
  std::optional<CnnBranch<T>>& cnn() { return cnn_; }
  std::array<MugenFusion<T>, 3>& fusion() { return fusion_; }
  Decoder<T>& decoder() { return decoder_; }

 private:
  BranchOutput<T> constant_stream(const std::array<Tensor<T>, 3>& maps, const PredictionHead<T>& head,
                                  std::size_t n) const {
    BranchOutput<T> out;
    for (std::size_t i = 0; i < 3; ++i) out.pyramid[i] = repeat_batch(maps[i], n);
    out.prediction = head(out.pyramid[2], cfg_.height, cfg_.width);
    return out;
  }

  ModelConfig cfg_;
  nn::ParameterStore<T> store_;
  std::optional<VitBranch<T>> vit_;
  std::optional<CnnBranch<T>> cnn_;
  std::array<Tensor<T>, 3> t_const_, r_const_;
  PredictionHead<T> t_head_, r_head_;
  std::array<MugenFusion<T>, 3> fusion_;
  Decoder<T> decoder_;
};

}  // namespace mugen
