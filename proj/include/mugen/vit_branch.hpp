#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "mugen/core/ops.hpp"
#include "mugen/errors.hpp"
#include "mugen/nn/layers.hpp"

namespace mugen {

struct VitConfig {
  std::size_t patch_size = 4;
  std::size_t embed_dim = 64;
  std::size_t num_heads = 4;
  std::size_t num_layers = 2;
  std::size_t mlp_ratio = 4;
  bool positional_encoding = true;

  std::size_t head_dim() const { return embed_dim / num_heads; }

  void validate(std::size_t height, std::size_t width) const {
    if (patch_size == 0 || height % patch_size != 0 || width % patch_size != 0) {
      throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) +
                       " is not divisible by patch size " + std::to_string(patch_size));
    }
    if (16 % patch_size != 0) {
      throw ConfigError("patch size must divide 16, got " + std::to_string(patch_size));
    }
    if (num_heads == 0 || embed_dim % num_heads != 0) {
      throw ConfigError("embed_dim " + std::to_string(embed_dim) + " not divisible by " +
                        std::to_string(num_heads) + " heads");
    }
    if (num_layers == 0 || mlp_ratio == 0) throw ConfigError("vit needs >= 1 layer and mlp_ratio");
  }
};

/// Three feature maps at 1/16, 1/8, 1/4 scale plus a full-resolution sigmoid prediction.
template <typename T>
struct BranchOutput {
  std::array<Tensor<T>, 3> pyramid;
  Tensor<T> prediction;
};

/// Non-overlapping P x P patches projected to D-dimensional tokens, plus a learned,
/// zero-initialized positional encoding.
template <typename T>
class PatchEmbedding {
 public:
  PatchEmbedding() = default;
  PatchEmbedding(nn::ParameterStore<T>& store, const std::string& name, std::size_t in_channels,
                 std::size_t height, std::size_t width, const VitConfig& cfg)
      : proj_(store, name + ".proj", in_channels, cfg.embed_dim, cfg.patch_size,
              {cfg.patch_size, 0, false}),
        patch_(cfg.patch_size),
        grid_h_(height / cfg.patch_size),
        grid_w_(width / cfg.patch_size),
        dim_(cfg.embed_dim) {
    cfg.validate(height, width);
    if (cfg.positional_encoding) {
      position_ = store.parameter(name + ".position", {1, grid_h_ * grid_w_, dim_}, nn::Init::zeros());
    }
  }

  /// [N, C, H, W] -> [N, (H/P)(W/P), D]
  Tensor<T> operator()(const Tensor<T>& image) const {
    if (image.dim(2) % patch_ != 0 || image.dim(3) % patch_ != 0) {
      throw ShapeError("patch_embed: " + shape_string(image.dims()) + " not divisible by patch " +
                       std::to_string(patch_));
    }
    auto grid = proj_(image);  // [N, D, H/P, W/P]
    const std::size_t n = grid.dim(0), tokens = grid.dim(2) * grid.dim(3);
    auto seq = permute(reshape(grid, {n, dim_, tokens}), {0, 2, 1});
    if (position_.defined()) {
      if (tokens != position_.dim(1)) {
        throw ShapeError("patch_embed: positional encoding sized for " +
                         std::to_string(position_.dim(1)) + " tokens, got " + std::to_string(tokens));
      }
      seq = add(seq, position_);
    }
    return seq;
  }

  std::size_t grid_height() const { return grid_h_; }
  std::size_t grid_width() const { return grid_w_; }
  nn::Conv2d<T>& projection() { return proj_; }
  Tensor<T>& position() { return position_; }

 private:
  nn::Conv2d<T> proj_;
  Tensor<T> position_;
  std::size_t patch_ = 1, grid_h_ = 1, grid_w_ = 1, dim_ = 1;
};

/// Multi-head self-attention: per head softmax(q k^T / sqrt(D_h)) v, heads concatenated
/// and linearly projected.
template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(nn::ParameterStore<T>& store, const std::string& name, std::size_t dim,
                     std::size_t heads)
      : q_(store, name + ".q", dim, dim, nn::Init::truncated_normal(0.02)),
        k_(store, name + ".k", dim, dim, nn::Init::truncated_normal(0.02)),
        v_(store, name + ".v", dim, dim, nn::Init::truncated_normal(0.02)),
        proj_(store, name + ".proj", dim, dim, nn::Init::truncated_normal(0.02)),
        dim_(dim),
        heads_(heads) {
    if (heads == 0 || dim % heads != 0) throw ConfigError("attention dim not divisible by heads");
  }

  /// x: [N, L, D]. When `attention` is given it receives the [N*h, L, L] weights.
  Tensor<T> operator()(const Tensor<T>& x, Tensor<T>* attention = nullptr) const {
    if (x.rank() != 3 || x.dim(2) != dim_) {
      throw ShapeError("msa expects [N, L, " + std::to_string(dim_) + "], got " + shape_string(x.dims()));
    }
    const std::size_t n = x.dim(0), len = x.dim(1), hd = dim_ / heads_;
    auto split = [&](const Tensor<T>& t) {
      return reshape(permute(reshape(t, {n, len, heads_, hd}), {0, 2, 1, 3}), {n * heads_, len, hd});
    };
    auto q = split(q_(x));
    auto k = split(k_(x));
    auto v = split(v_(x));
    auto scores = scale(batched_matmul(q, k, false, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd))));
    auto weights = softmax_rows(scores);
    if (attention) *attention = weights;
    auto mixed = batched_matmul(weights, v);  // [N*h, L, hd]
    auto merged = reshape(permute(reshape(mixed, {n, heads_, len, hd}), {0, 2, 1, 3}), {n, len, dim_});
    return proj_(merged);
  }

  nn::Linear<T>& query() { return q_; }
  nn::Linear<T>& key() { return k_; }
  nn::Linear<T>& value() { return v_; }
  nn::Linear<T>& output() { return proj_; }

 private:
  nn::Linear<T> q_, k_, v_, proj_;
  std::size_t dim_ = 1, heads_ = 1;
};

/// linear(D -> ratio*D) -> GELU -> linear(-> D)
template <typename T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(nn::ParameterStore<T>& store, const std::string& name, std::size_t dim, std::size_t ratio)
      : fc1_(store, name + ".fc1", dim, dim * ratio, nn::Init::truncated_normal(0.02)),
        fc2_(store, name + ".fc2", dim * ratio, dim, nn::Init::truncated_normal(0.02)) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return fc2_(gelu(fc1_(x))); }

  nn::Linear<T>& fc1() { return fc1_; }
  nn::Linear<T>& fc2() { return fc2_; }

 private:
  nn::Linear<T> fc1_, fc2_;
};

/// Pre-LN encoder block: x + MSA(LN(x)), then + MLP(LN(.)).
template <typename T>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(nn::ParameterStore<T>& store, const std::string& name, const VitConfig& cfg)
      : ln1_(store, name + ".ln1", cfg.embed_dim),
        attn_(store, name + ".attn", cfg.embed_dim, cfg.num_heads),
        ln2_(store, name + ".ln2", cfg.embed_dim),
        mlp_(store, name + ".mlp", cfg.embed_dim, cfg.mlp_ratio) {}

  Tensor<T> operator()(const Tensor<T>& x, Tensor<T>* attention = nullptr) const {
    auto h = add(x, attn_(ln1_(x), attention));
    return add(h, mlp_(ln2_(h)));
  }

  MultiHeadAttention<T>& attention() { return attn_; }
  Mlp<T>& mlp() { return mlp_; }

 private:
  nn::LayerNorm<T> ln1_;
  MultiHeadAttention<T> attn_;
  nn::LayerNorm<T> ln2_;
  Mlp<T> mlp_;
};

/// upsample x2 (bilinear) -> conv3x3 -> BN -> ReLU
template <typename T>
class UpStage {
 public:
  UpStage() = default;
  UpStage(nn::ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out)
      : block_(store, name, in, out, 3, {1, 1, false}) {}

  Tensor<T> operator()(const Tensor<T>& x, bool training) {
    return block_(upsample2x(x, UpsampleMode::bilinear), training);
  }

 private:
  nn::ConvBnRelu<T> block_;
};

/// 1x1 conv to one channel, bilinear x2 steps up to the target size, sigmoid.
template <typename T>
class PredictionHead {
 public:
  PredictionHead() = default;
  PredictionHead(nn::ParameterStore<T>& store, const std::string& name, std::size_t in)
      : conv_(store, name, in, 1, 1, {1, 0, false}) {}

  Tensor<T> operator()(const Tensor<T>& x, std::size_t height, std::size_t width) const {
    auto y = conv_(x);
    while (y.dim(2) < height) y = upsample2x(y, UpsampleMode::bilinear);
    if (y.dim(2) != height || y.dim(3) != width) {
      throw ShapeError("prediction head cannot reach " + std::to_string(height) + "x" +
                       std::to_string(width) + " from " + shape_string(x.dims()));
    }
    return sigmoid(y);
  }

  nn::Conv2d<T>& conv() { return conv_; }

 private:
  nn::Conv2d<T> conv_;
};

/// Transformer branch: patch tokens -> L encoder blocks -> spatial map at 1/16 scale (t0),
/// two learned upsampling stages (t1, t2), and a one-channel prediction S_t.
template <typename T>
class VitBranch {
 public:
  VitBranch() = default;
  VitBranch(nn::ParameterStore<T>& store, const std::string& name, std::size_t in_channels,
            std::size_t height, std::size_t width, const VitConfig& cfg,
            const std::array<std::size_t, 3>& widths)
      : cfg_(cfg), height_(height), width_(width) {
    cfg.validate(height, width);
    if (height % 16 != 0 || width % 16 != 0) {
      throw ShapeError("vit branch needs image dims divisible by 16");
    }
    embed_ = PatchEmbedding<T>(store, name + ".embed", in_channels, height, width, cfg);
    for (std::size_t i = 0; i < cfg.num_layers; ++i) {
      blocks_.emplace_back(store, name + ".block" + std::to_string(i), cfg);
    }
    norm_ = nn::LayerNorm<T>(store, name + ".norm", cfg.embed_dim);
    if (cfg.embed_dim != widths[0]) {
      reduce_ = nn::Conv2d<T>(store, name + ".reduce", cfg.embed_dim, widths[0], 1, {1, 0, false});
    }
    up1_ = UpStage<T>(store, name + ".up1", widths[0], widths[1]);
    up2_ = UpStage<T>(store, name + ".up2", widths[1], widths[2]);
    head_ = PredictionHead<T>(store, name + ".head", widths[2]);
  }

  /// Token sequence after the encoder blocks and final norm: [N, L, D].
  Tensor<T> encode(const Tensor<T>& image, std::vector<Tensor<T>>* attention = nullptr) const {
    auto x = embed_(image);
    for (const auto& block : blocks_) {
      Tensor<T> weights;
      x = block(x, attention ? &weights : nullptr);
      if (attention) attention->push_back(weights);
    }
    return norm_(x);
  }

  BranchOutput<T> operator()(const Tensor<T>& image, bool training,
                             std::vector<Tensor<T>>* attention = nullptr) {
    auto tokens = encode(image, attention);
    const std::size_t n = tokens.dim(0);
    auto grid = reshape(permute(tokens, {0, 2, 1}),
                        {n, cfg_.embed_dim, embed_.grid_height(), embed_.grid_width()});
    if (cfg_.patch_size < 16) grid = avg_pool2d(grid, 16 / cfg_.patch_size);
    if (reduce_.weight().defined()) grid = reduce_(grid);
    BranchOutput<T> out;
    out.pyramid[0] = grid;
    out.pyramid[1] = up1_(out.pyramid[0], training);
    out.pyramid[2] = up2_(out.pyramid[1], training);
    out.prediction = head_(out.pyramid[2], height_, width_);
    return out;
  }

  PatchEmbedding<T>& embedding() { return embed_; }
  std::vector<TransformerBlock<T>>& blocks() { return blocks_; }

 private:
  VitConfig cfg_;
  std::size_t height_ = 0, width_ = 0;
  PatchEmbedding<T> embed_;
  std::vector<TransformerBlock<T>> blocks_;
  nn::LayerNorm<T> norm_;
  nn::Conv2d<T> reduce_;
  UpStage<T> up1_, up2_;
  PredictionHead<T> head_;
};

}  // namespace mugen
