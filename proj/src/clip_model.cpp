#include "realdesc/clip_model.hpp"

#include <cmath>

#include "realdesc/errors.hpp"

namespace realdesc {

namespace nn = torch::nn;
using json = nlohmann::json;

json ClipConfig::to_json() const {
  return {
      {"vision",
       {{"image_size", vision.image_size},
        {"patch_size", vision.patch_size},
        {"width", vision.width},
        {"layers", vision.layers},
        {"heads", vision.heads},
        {"mlp_dim", vision.mlp_dim}}},
      {"text",
       {{"vocab_size", text.vocab_size},
        {"context_length", text.context_length},
        {"width", text.width},
        {"layers", text.layers},
        {"heads", text.heads},
        {"mlp_dim", text.mlp_dim}}},
      {"embed_dim", embed_dim},
      {"logit_scale_init", logit_scale_init},
      {"hidden_act", hidden_act},
      {"layer_norm_eps", layer_norm_eps},
      {"preprocessing",
       {{"resize_side", preprocessing.resize_side},
        {"crop_side", preprocessing.crop_side},
        {"mean", preprocessing.mean},
        {"std", preprocessing.std}}},
  };
}

ClipConfig ClipConfig::from_json(const json& j) {
  ClipConfig c;
  const auto& v = j.at("vision");
  c.vision = {v.at("image_size"), v.at("patch_size"), v.at("width"), v.at("layers"), v.at("heads"), v.at("mlp_dim")};
  const auto& t = j.at("text");
  c.text = {t.at("vocab_size"), t.at("context_length"), t.at("width"), t.at("layers"), t.at("heads"), t.at("mlp_dim")};
  c.embed_dim = j.at("embed_dim");
  c.logit_scale_init = j.value("logit_scale_init", 2.6592);
  c.hidden_act = j.value("hidden_act", std::string("quick_gelu"));
  c.layer_norm_eps = j.value("layer_norm_eps", 1e-5);
  if (j.contains("preprocessing")) {
    const auto& p = j.at("preprocessing");
    c.preprocessing.resize_side = p.at("resize_side");
    c.preprocessing.crop_side = p.at("crop_side");
    c.preprocessing.mean = p.at("mean").get<std::array<float, 3>>();
    c.preprocessing.std = p.at("std").get<std::array<float, 3>>();
  }
  return c;
}

ClipConfig ClipConfig::from_hf_config(const json& j) {
  ClipConfig c;
  const auto& v = j.at("vision_config");
  c.vision.image_size = v.value("image_size", 224);
  c.vision.patch_size = v.value("patch_size", 32);
  c.vision.width = v.value("hidden_size", 768);
  c.vision.layers = v.value("num_hidden_layers", 12);
  c.vision.heads = v.value("num_attention_heads", 12);
  c.vision.mlp_dim = v.value("intermediate_size", 3072);
  const auto& t = j.at("text_config");
  c.text.vocab_size = t.value("vocab_size", 49408);
  c.text.context_length = t.value("max_position_embeddings", 77);
  c.text.width = t.value("hidden_size", 512);
  c.text.layers = t.value("num_hidden_layers", 12);
  c.text.heads = t.value("num_attention_heads", 8);
  c.text.mlp_dim = t.value("intermediate_size", 2048);
  c.embed_dim = j.value("projection_dim", 512);
  c.logit_scale_init = j.value("logit_scale_init_value", 2.6592);
  c.hidden_act = v.value("hidden_act", std::string("quick_gelu"));
  c.layer_norm_eps = v.value("layer_norm_eps", 1e-5);
  c.preprocessing.resize_side = c.vision.image_size;
  c.preprocessing.crop_side = c.vision.image_size;
  return c;
}

AttentionImpl::AttentionImpl(int64_t width, int64_t heads) : heads_(heads), head_dim_(width / heads) {
  if (width % heads != 0) throw ValidationError("attention width not divisible by head count");
  q_proj = register_module("q_proj", nn::Linear(width, width));
  k_proj = register_module("k_proj", nn::Linear(width, width));
  v_proj = register_module("v_proj", nn::Linear(width, width));
  out_proj = register_module("out_proj", nn::Linear(width, width));
}

torch::Tensor AttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& mask) {
  const auto b = x.size(0);
  const auto l = x.size(1);
  auto shape = [&](const torch::Tensor& t) { return t.view({b, l, heads_, head_dim_}).transpose(1, 2); };
  auto q = shape(q_proj->forward(x)) * (1.0 / std::sqrt(static_cast<double>(head_dim_)));
  auto k = shape(k_proj->forward(x));
  auto v = shape(v_proj->forward(x));
  auto scores = torch::matmul(q, k.transpose(-2, -1));
  if (mask.defined()) scores = scores + mask;
  auto attn = torch::softmax(scores, -1);
  auto out = torch::matmul(attn, v).transpose(1, 2).reshape({b, l, heads_ * head_dim_});
  return out_proj->forward(out);
}

MlpImpl::MlpImpl(int64_t width, int64_t hidden, bool quick_gelu) : quick_gelu_(quick_gelu) {
  fc1 = register_module("fc1", nn::Linear(width, hidden));
  fc2 = register_module("fc2", nn::Linear(hidden, width));
}

torch::Tensor MlpImpl::forward(const torch::Tensor& x) {
  auto h = fc1->forward(x);
  h = quick_gelu_ ? h * torch::sigmoid(1.702 * h) : torch::gelu(h);
  return fc2->forward(h);
}

EncoderLayerImpl::EncoderLayerImpl(int64_t width, int64_t heads, int64_t mlp_dim, bool quick_gelu, double eps) {
  layer_norm1 = register_module("layer_norm1", nn::LayerNorm(nn::LayerNormOptions({width}).eps(eps)));
  self_attn = register_module("self_attn", Attention(width, heads));
  layer_norm2 = register_module("layer_norm2", nn::LayerNorm(nn::LayerNormOptions({width}).eps(eps)));
  mlp = register_module("mlp", Mlp(width, mlp_dim, quick_gelu));
}

torch::Tensor EncoderLayerImpl::forward(const torch::Tensor& x, const torch::Tensor& mask) {
  auto h = x + self_attn->forward(layer_norm1->forward(x), mask);
  return h + mlp->forward(layer_norm2->forward(h));
}

EncoderImpl::EncoderImpl(int64_t width, int64_t layers_count, int64_t heads, int64_t mlp_dim, bool quick_gelu,
                         double eps) {
  layers = register_module("layers", nn::ModuleList());
  for (int64_t i = 0; i < layers_count; ++i) layers->push_back(EncoderLayer(width, heads, mlp_dim, quick_gelu, eps));
}

torch::Tensor EncoderImpl::forward(torch::Tensor x, const torch::Tensor& mask, int64_t num_layers) {
  const int64_t n = num_layers < 0 ? size() : std::min(num_layers, size());
  for (int64_t i = 0; i < n; ++i) x = layer(i)->forward(x, mask);
  return x;
}

EncoderLayer EncoderImpl::layer(int64_t i) const { return EncoderLayer(layers->ptr<EncoderLayerImpl>(i)); }

VisionEmbeddingsImpl::VisionEmbeddingsImpl(const VisionConfig& cfg) {
  class_embedding = register_parameter("class_embedding", torch::randn({cfg.width}) * 0.02);
  patch_embedding = register_module(
      "patch_embedding", nn::Conv2d(nn::Conv2dOptions(3, cfg.width, cfg.patch_size).stride(cfg.patch_size).bias(false)));
  position_embedding = register_module("position_embedding", nn::Embedding(cfg.num_tokens(), cfg.width));
  torch::NoGradGuard guard;
  position_embedding->weight.normal_(0, 0.01);
}

torch::Tensor VisionEmbeddingsImpl::forward(const torch::Tensor& pixels) {
  auto patches = patch_embedding->forward(pixels).flatten(2).transpose(1, 2);  // [B, G*G, W]
  auto cls = class_embedding.view({1, 1, -1}).expand({pixels.size(0), 1, class_embedding.size(0)});
  auto tokens = torch::cat({cls, patches}, 1);
  return tokens + position_embedding->weight.unsqueeze(0);
}

VisionTransformerImpl::VisionTransformerImpl(const VisionConfig& cfg, bool quick_gelu, double eps) {
  embeddings = register_module("embeddings", VisionEmbeddings(cfg));
  pre_layrnorm = register_module("pre_layrnorm", nn::LayerNorm(nn::LayerNormOptions({cfg.width}).eps(eps)));
  encoder = register_module("encoder", Encoder(cfg.width, cfg.layers, cfg.heads, cfg.mlp_dim, quick_gelu, eps));
  post_layernorm = register_module("post_layernorm", nn::LayerNorm(nn::LayerNormOptions({cfg.width}).eps(eps)));
}

torch::Tensor VisionTransformerImpl::hidden_states(const torch::Tensor& pixels, int64_t num_layers) {
  auto x = pre_layrnorm->forward(embeddings->forward(pixels));
  return encoder->forward(x, {}, num_layers);
}

TextEmbeddingsImpl::TextEmbeddingsImpl(const TextConfig& cfg) {
  token_embedding = register_module("token_embedding", nn::Embedding(cfg.vocab_size, cfg.width));
  position_embedding = register_module("position_embedding", nn::Embedding(cfg.context_length, cfg.width));
  torch::NoGradGuard guard;
  token_embedding->weight.normal_(0, 0.02);
  position_embedding->weight.normal_(0, 0.01);
}

torch::Tensor TextEmbeddingsImpl::forward(const torch::Tensor& ids) {
  const auto l = ids.size(1);
  return token_embedding->forward(ids) + position_embedding->weight.slice(0, 0, l).unsqueeze(0);
}

TextTransformerImpl::TextTransformerImpl(const TextConfig& cfg, bool quick_gelu, double eps) {
  embeddings = register_module("embeddings", TextEmbeddings(cfg));
  encoder = register_module("encoder", Encoder(cfg.width, cfg.layers, cfg.heads, cfg.mlp_dim, quick_gelu, eps));
  final_layer_norm = register_module("final_layer_norm", nn::LayerNorm(nn::LayerNormOptions({cfg.width}).eps(eps)));
}

torch::Tensor TextTransformerImpl::forward(const torch::Tensor& ids, const torch::Tensor& eos_positions) {
  const auto l = ids.size(1);
  auto x = embeddings->forward(ids);
  auto mask = torch::full({l, l}, -std::numeric_limits<float>::infinity(), x.options()).triu(1);
  x = final_layer_norm->forward(encoder->forward(x, mask));
  auto rows = torch::arange(ids.size(0), torch::TensorOptions().dtype(torch::kLong));
  return x.index({rows, eos_positions});
}

ClipModelImpl::ClipModelImpl(const ClipConfig& cfg) : cfg_(cfg) {
  const bool quick = cfg.hidden_act == "quick_gelu";
  vision_model = register_module("vision_model", VisionTransformer(cfg.vision, quick, cfg.layer_norm_eps));
  text_model = register_module("text_model", TextTransformer(cfg.text, quick, cfg.layer_norm_eps));
  visual_projection =
      register_module("visual_projection", nn::Linear(nn::LinearOptions(cfg.vision.width, cfg.embed_dim).bias(false)));
  text_projection =
      register_module("text_projection", nn::Linear(nn::LinearOptions(cfg.text.width, cfg.embed_dim).bias(false)));
  logit_scale = register_parameter("logit_scale", torch::full({}, cfg.logit_scale_init));
}

torch::Tensor ClipModelImpl::vision_head(const torch::Tensor& cls_hidden) {
  return visual_projection->forward(vision_model->post_layernorm->forward(cls_hidden));
}

torch::Tensor ClipModelImpl::encode_pixels(const torch::Tensor& pixels) {
  auto hidden = vision_model->hidden_states(pixels);
  return vision_head(hidden.select(1, 0));
}

torch::Tensor ClipModelImpl::encode_tokens(const torch::Tensor& ids, const torch::Tensor& eos_positions) {
  return text_projection->forward(text_model->forward(ids, eos_positions));
}

}  // namespace realdesc
