#pragma once

#include <array>
#include <cstdint>
#include <string>

#include <torch/torch.h>

#include "json.hpp"

namespace realdesc {

struct VisionConfig {
  int64_t image_size = 224;
  int64_t patch_size = 32;
  int64_t width = 768;
  int64_t layers = 12;
  int64_t heads = 12;
  int64_t mlp_dim = 3072;

  int64_t grid() const { return image_size / patch_size; }
  /// Token count including CLS: 1 + (side / patch)^2.
  int64_t num_tokens() const { return 1 + grid() * grid(); }
};

struct TextConfig {
  int64_t vocab_size = 49408;
  int64_t context_length = 77;
  int64_t width = 512;
  int64_t layers = 12;
  int64_t heads = 8;
  int64_t mlp_dim = 2048;
};

/// Image preprocessing as declared by the checkpoint: shortest side resized to
/// resize_side, centre-cropped to crop_side, then normalized per channel.
struct Preprocessing {
  int64_t resize_side = 224;
  int64_t crop_side = 224;
  std::array<float, 3> mean{0.48145466f, 0.4578275f, 0.40821073f};
  std::array<float, 3> std{0.26862954f, 0.26130258f, 0.27577711f};
};

struct ClipConfig {
  VisionConfig vision;
  TextConfig text;
  int64_t embed_dim = 512;
  double logit_scale_init = 2.6592;  // ln(1 / 0.07)
  std::string hidden_act = "quick_gelu";
  double layer_norm_eps = 1e-5;
  Preprocessing preprocessing;

  nlohmann::json to_json() const;
  static ClipConfig from_json(const nlohmann::json& j);
  /// Reads a Hugging Face CLIPModel config.json (vision_config/text_config).
  static ClipConfig from_hf_config(const nlohmann::json& j);
};

class AttentionImpl : public torch::nn::Module {
 public:
  AttentionImpl(int64_t width, int64_t heads);
  /// x: [B, L, W]; mask: optional additive [L, L].
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& mask = {});

  torch::nn::Linear q_proj{nullptr}, k_proj{nullptr}, v_proj{nullptr}, out_proj{nullptr};

 private:
  int64_t heads_;
  int64_t head_dim_;
};
TORCH_MODULE(Attention);

class MlpImpl : public torch::nn::Module {
 public:
  MlpImpl(int64_t width, int64_t hidden, bool quick_gelu);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};

 private:
  bool quick_gelu_;
};
TORCH_MODULE(Mlp);

/// Pre-norm transformer block: x + attn(ln1(x)), then x + mlp(ln2(x)).
class EncoderLayerImpl : public torch::nn::Module {
 public:
  EncoderLayerImpl(int64_t width, int64_t heads, int64_t mlp_dim, bool quick_gelu, double eps);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& mask = {});

  torch::nn::LayerNorm layer_norm1{nullptr};
  Attention self_attn{nullptr};
  torch::nn::LayerNorm layer_norm2{nullptr};
  Mlp mlp{nullptr};
};
TORCH_MODULE(EncoderLayer);

class EncoderImpl : public torch::nn::Module {
 public:
  EncoderImpl(int64_t width, int64_t layers, int64_t heads, int64_t mlp_dim, bool quick_gelu, double eps);
  /// Runs the first `num_layers` blocks (all when negative).
  torch::Tensor forward(torch::Tensor x, const torch::Tensor& mask = {}, int64_t num_layers = -1);
  EncoderLayer layer(int64_t i) const;
  int64_t size() const { return static_cast<int64_t>(layers->size()); }

  torch::nn::ModuleList layers{nullptr};
};
TORCH_MODULE(Encoder);

class VisionEmbeddingsImpl : public torch::nn::Module {
 public:
  explicit VisionEmbeddingsImpl(const VisionConfig& cfg);
  /// pixels: [B, 3, S, S] -> tokens [B, P, W] with CLS at index 0.
  torch::Tensor forward(const torch::Tensor& pixels);

  torch::Tensor class_embedding;
  torch::nn::Conv2d patch_embedding{nullptr};
  torch::nn::Embedding position_embedding{nullptr};
};
TORCH_MODULE(VisionEmbeddings);

class VisionTransformerImpl : public torch::nn::Module {
 public:
  VisionTransformerImpl(const VisionConfig& cfg, bool quick_gelu, double eps);
  /// Hidden states after `num_layers` blocks, before the final layer norm.
  torch::Tensor hidden_states(const torch::Tensor& pixels, int64_t num_layers = -1);

  VisionEmbeddings embeddings{nullptr};
  torch::nn::LayerNorm pre_layrnorm{nullptr};
  Encoder encoder{nullptr};
  torch::nn::LayerNorm post_layernorm{nullptr};
};
TORCH_MODULE(VisionTransformer);

class TextEmbeddingsImpl : public torch::nn::Module {
 public:
  explicit TextEmbeddingsImpl(const TextConfig& cfg);
  torch::Tensor forward(const torch::Tensor& ids);

  torch::nn::Embedding token_embedding{nullptr};
  torch::nn::Embedding position_embedding{nullptr};
};
TORCH_MODULE(TextEmbeddings);

class TextTransformerImpl : public torch::nn::Module {
 public:
  TextTransformerImpl(const TextConfig& cfg, bool quick_gelu, double eps);
  /// ids: [B, L]; eos_positions: [B]. Returns the normalized end-token state [B, W].
  torch::Tensor forward(const torch::Tensor& ids, const torch::Tensor& eos_positions);

  TextEmbeddings embeddings{nullptr};
  Encoder encoder{nullptr};
  torch::nn::LayerNorm final_layer_norm{nullptr};
};
TORCH_MODULE(TextTransformer);

class ClipModelImpl : public torch::nn::Module {
 public:
  explicit ClipModelImpl(const ClipConfig& cfg);

  /// pixels [B, 3, S, S] -> image embeddings [B, embed_dim] (not normalized).
  torch::Tensor encode_pixels(const torch::Tensor& pixels);
  torch::Tensor encode_tokens(const torch::Tensor& ids, const torch::Tensor& eos_positions);
  /// Maps a CLS hidden state [B, W] through the post layer norm and the
  /// visual projection, i.e. the backbone's own image-embedding head.
  torch::Tensor vision_head(const torch::Tensor& cls_hidden);

  const ClipConfig& config() const { return cfg_; }

  VisionTransformer vision_model{nullptr};
  TextTransformer text_model{nullptr};
  torch::nn::Linear visual_projection{nullptr};
  torch::nn::Linear text_projection{nullptr};
  torch::Tensor logit_scale;

 private:
  ClipConfig cfg_;
};
TORCH_MODULE(ClipModel);

}  // namespace realdesc
