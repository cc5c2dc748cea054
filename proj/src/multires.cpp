#include "realdesc/multires.hpp"

#include "realdesc/errors.hpp"
#include "realdesc/image_io.hpp"
#include "realdesc/safetensors.hpp"
#include "realdesc/util.hpp"

namespace realdesc {
namespace fs = std::filesystem;
using json = nlohmann::json;

void MultiResConfig::validate() const {
  if (scale < 2) throw ValidationError("multires scale must be at least 2, got " + std::to_string(scale));
  if (base_side < 1) throw ValidationError("multires base_side must be positive");
  if (alpha_init < 0.0 || alpha_init > 1.0) throw ValidationError("multires alpha_init must lie in [0, 1]");
  if (alpha_lr < 0.0) throw ValidationError("multires alpha_lr must be non-negative");
}

json MultiResConfig::to_json() const {
  return {{"base_side", base_side},
          {"scale", scale},
          {"alpha_init", alpha_init},
          {"alpha_lr", alpha_lr},
          {"spatial_remap", spatial_remap},
          {"use_position_embedding", use_position_embedding}};
}

MultiResConfig MultiResConfig::from_json(const json& j) {
  MultiResConfig c;
  c.base_side = j.value("base_side", c.base_side);
  c.scale = j.value("scale", c.scale);
  c.alpha_init = j.value("alpha_init", c.alpha_init);
  c.alpha_lr = j.value("alpha_lr", c.alpha_lr);
  c.spatial_remap = j.value("spatial_remap", c.spatial_remap);
  c.use_position_embedding = j.value("use_position_embedding", c.use_position_embedding);
  c.validate();
  return c;
}

std::vector<ImageTensor> slice_image(const ImageTensor& image, const MultiResConfig& cfg) {
  const int64_t side = image.side();
  if (side % cfg.base_side != 0 || side / cfg.base_side != cfg.scale)
    throw ShapeError("image side " + std::to_string(side) + " is not " + std::to_string(cfg.scale) + " x " +
                     std::to_string(cfg.base_side));
  std::vector<ImageTensor> out;
  const int64_t b = cfg.base_side;
  for (int64_t r = 0; r < cfg.scale; ++r)
    for (int64_t c = 0; c < cfg.scale; ++c)
      out.emplace_back(image.pixels().slice(1, r * b, (r + 1) * b).slice(2, c * b, (c + 1) * b).contiguous());
  return out;
}

ImageTensor tile_slices(const std::vector<ImageTensor>& slices, int64_t scale) {
  if (static_cast<int64_t>(slices.size()) != scale * scale)
    throw ShapeError("need " + std::to_string(scale * scale) + " slices, got " + std::to_string(slices.size()));
  std::vector<torch::Tensor> rows;
  for (int64_t r = 0; r < scale; ++r) {
    std::vector<torch::Tensor> row;
    for (int64_t c = 0; c < scale; ++c) row.push_back(slices[static_cast<std::size_t>(r * scale + c)].pixels());
    rows.push_back(torch::cat(row, 2));
  }
  return ImageTensor(torch::cat(rows, 1));
}

torch::Tensor slice_batch(const torch::Tensor& pixels, int64_t scale) {
  const int64_t b = pixels.size(0), side = pixels.size(2);
  if (pixels.dim() != 4 || side % scale != 0 || pixels.size(3) != side)
    throw ShapeError("slice_batch expects [B, 3, sS, sS] with side divisible by the scale");
  const int64_t s = side / scale;
  return pixels.view({b, 3, scale, s, scale, s}).permute({0, 2, 4, 1, 3, 5}).reshape({b * scale * scale, 3, s, s});
}

torch::Tensor average_slice_patches(const std::vector<PatchFeatureMap>& maps) {
  if (maps.empty()) throw ShapeError("no slice feature maps to average");
  std::vector<torch::Tensor> stacked;
  for (const auto& m : maps) {
    if (m.tokens().sizes() != maps[0].tokens().sizes()) throw ShapeError("slice feature maps differ in shape");
    stacked.push_back(m.tokens());
  }
  return average_slice_tokens(torch::stack(stacked).unsqueeze(0))[0];
}

torch::Tensor average_slice_patches_remapped(const std::vector<PatchFeatureMap>& maps, int64_t scale) {
  if (static_cast<int64_t>(maps.size()) != scale * scale) throw ShapeError("slice count does not match scale");
  std::vector<torch::Tensor> stacked;
  for (const auto& m : maps) {
    if (m.tokens().sizes() != maps[0].tokens().sizes()) throw ShapeError("slice feature maps differ in shape");
    stacked.push_back(m.tokens());
  }
  return average_slice_tokens_remapped(torch::stack(stacked).unsqueeze(0), scale)[0];
}

torch::Tensor average_slice_tokens(const torch::Tensor& slice_tokens) {
  if (slice_tokens.dim() != 4) throw ShapeError("slice tokens must be [B, N, P, W]");
  return slice_tokens.slice(2, 1).mean(1);
}

torch::Tensor average_slice_tokens_remapped(const torch::Tensor& slice_tokens, int64_t scale) {
  if (slice_tokens.dim() != 4 || slice_tokens.size(1) != scale * scale) throw ShapeError("slice tokens must be [B, s^2, P, W]");
  const int64_t b = slice_tokens.size(0), w = slice_tokens.size(3);
  const int64_t patches = slice_tokens.size(2) - 1;
  const auto g = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(patches))));
  if (g * g != patches) throw ShapeError("patch count is not a square grid");
  // [B, s, s, g, g, W] -> global [B, s*g, s*g, W]
  auto grid = slice_tokens.slice(2, 1).reshape({b, scale, scale, g, g, w}).permute({0, 1, 3, 2, 4, 5}).reshape(
      {b, scale * g, scale * g, w});
  auto pooled = torch::nn::functional::avg_pool2d(grid.permute({0, 3, 1, 2}),
                                                  torch::nn::functional::AvgPool2dFuncOptions(scale).stride(scale));
  return pooled.permute({0, 2, 3, 1}).reshape({b, g * g, w});
}

ExtraLayerStateImpl::ExtraLayerStateImpl(int64_t width, int64_t heads, int64_t mlp_dim, int64_t num_tokens,
                                         bool quick_gelu, double eps, double alpha_init) {
  projection = register_module("projection", torch::nn::Linear(2 * width, width));
  vit_layer = register_module("vit_layer", EncoderLayer(width, heads, mlp_dim, quick_gelu, eps));
  position_embedding = register_buffer("position_embedding", torch::zeros({num_tokens, width}));
  alpha = register_parameter("alpha", torch::full({}, alpha_init));
  torch::NoGradGuard ng;
  projection->weight.zero_();
  projection->weight.slice(1, width).copy_(torch::eye(width));
  projection->bias.zero_();
}

torch::Tensor ExtraLayerStateImpl::concat_and_project(const torch::Tensor& avg_in, const torch::Tensor& origin_in) {
  auto avg = avg_in.dim() == 2 ? avg_in.unsqueeze(0) : avg_in;
  auto origin = origin_in.dim() == 2 ? origin_in.unsqueeze(0) : origin_in;
  if (origin.dim() != 3 || avg.dim() != 3 || avg.size(0) != origin.size(0) || avg.size(1) + 1 != origin.size(1) ||
      avg.size(2) != origin.size(2) || origin.size(2) * 2 != projection->weight.size(1))
    throw ShapeError("concat_and_project: averaged patches and origin map do not align");
  auto first = torch::cat({origin.slice(1, 0, 1), avg}, 1);
  return projection->forward(torch::cat({first, origin}, 2));
}

torch::Tensor ExtraLayerStateImpl::layer_forward(const torch::Tensor& fused_in, bool use_position_embedding) {
  auto fused = fused_in.dim() == 2 ? fused_in.unsqueeze(0) : fused_in;
  if (fused.size(1) != position_embedding.size(0) || fused.size(2) != position_embedding.size(1))
    throw ShapeError("fused map must be [B, " + std::to_string(position_embedding.size(0)) + ", " +
                     std::to_string(position_embedding.size(1)) + "]");
  auto x = use_position_embedding ? fused + position_embedding.unsqueeze(0) : fused;
  return vit_layer->forward(x).select(1, 0);
}

void ExtraLayerStateImpl::clamp_alpha() {
  torch::NoGradGuard ng;
  alpha.clamp_(0.0, 1.0);
}

ExtraLayerState init_extra_layer(const Backbone& backbone, const MultiResConfig& cfg) {
  cfg.validate();
  const auto& vc = backbone.config().vision;
  auto& vision = *backbone.model().vision_model;
  if (vision.encoder->size() < 1) throw InitError("backbone has no vision block to copy");
  if (cfg.base_side != vc.image_size)
    throw InitError("multires base_side " + std::to_string(cfg.base_side) + " differs from the backbone resolution " +
                    std::to_string(vc.image_size));
  ExtraLayerState state(vc.width, vc.heads, vc.mlp_dim, vc.num_tokens(), backbone.config().hidden_act == "quick_gelu",
                        backbone.config().layer_norm_eps, cfg.alpha_init);
  auto last = vision.encoder->layer(vision.encoder->size() - 1);
  auto src = last->named_parameters(true);
  torch::NoGradGuard ng;
  for (auto& p : state->vit_layer->named_parameters(true)) {
    const auto* s = src.find(p.key());
    if (s == nullptr || s->sizes() != p.value().sizes())
      throw InitError("extra layer parameter " + p.key() + " has no counterpart in the final block");
    p.value().copy_(*s);
  }
  state->position_embedding.copy_(vision.embeddings->position_embedding->weight);
  state->to(backbone.dtype());
  return state;
}

torch::Tensor blend(const torch::Tensor& base, const torch::Tensor& enriched, const torch::Tensor& alpha) {
  if (base.sizes() != enriched.sizes()) throw ShapeError("blend operands differ in shape");
  return (1 - alpha) * base + alpha * enriched;
}

torch::Tensor blend(const torch::Tensor& base, const torch::Tensor& enriched, double alpha) {
  if (base.sizes() != enriched.sizes()) throw ShapeError("blend operands differ in shape");
  return (1.0 - alpha) * base + alpha * enriched;
}

PatchFeatureMap concat_and_project(const torch::Tensor& avg, const PatchFeatureMap& origin, ExtraLayerStateImpl& state) {
  return PatchFeatureMap(state.concat_and_project(avg, origin.tokens())[0]);
}

torch::Tensor extra_layer_forward(const PatchFeatureMap& fused, ExtraLayerStateImpl& state, const Backbone& backbone,
                                  bool use_position_embedding) {
  auto cls = state.layer_forward(fused.tokens(), use_position_embedding);
  return backbone.model().vision_head(cls)[0];
}

MultiResEncoder::MultiResEncoder(const Backbone& backbone, ExtraLayerState state, MultiResConfig cfg)
    : backbone_(backbone), state_(std::move(state)), cfg_(cfg) {
  cfg_.validate();
  if (cfg_.base_side != backbone.image_size())
    throw ShapeError("multires base_side " + std::to_string(cfg_.base_side) + " differs from the backbone resolution " +
                     std::to_string(backbone.image_size()));
}

torch::Tensor MultiResEncoder::downscale(const torch::Tensor& pixels) const {
  if (pixels.dim() != 4 || pixels.size(2) != cfg_.input_side() || pixels.size(3) != cfg_.input_side())
    throw ShapeError("multires input must be [B, 3, " + std::to_string(cfg_.input_side()) + ", " +
                     std::to_string(cfg_.input_side()) + "]");
  return torch::nn::functional::avg_pool2d(
      pixels, torch::nn::functional::AvgPool2dFuncOptions(cfg_.scale).stride(cfg_.scale));
}

torch::Tensor MultiResEncoder::base_embedding(const torch::Tensor& pixels) const {
  return backbone_.model().encode_pixels(downscale(pixels));
}

std::pair<torch::Tensor, torch::Tensor> MultiResEncoder::branches(const torch::Tensor& pixels) const {
  auto& model = backbone_.model();
  auto& vision = *model.vision_model;
  const int64_t b = pixels.size(0);
  auto origin = vision.hidden_states(downscale(pixels));
  auto slice_tokens = vision.hidden_states(slice_batch(pixels, cfg_.scale));
  slice_tokens = slice_tokens.view({b, cfg_.num_slices(), slice_tokens.size(1), slice_tokens.size(2)});
  auto avg = cfg_.spatial_remap ? average_slice_tokens_remapped(slice_tokens, cfg_.scale) : average_slice_tokens(slice_tokens);
  auto fused = state_.ptr()->concat_and_project(avg, origin);
  auto enriched = model.vision_head(state_.ptr()->layer_forward(fused, cfg_.use_position_embedding));
  auto base = model.vision_head(origin.select(1, 0));
  return {base, enriched};
}

torch::Tensor MultiResEncoder::enriched_embedding(const torch::Tensor& pixels) const { return branches(pixels).second; }

torch::Tensor MultiResEncoder::forward(const torch::Tensor& pixels) const {
  auto [base, enriched] = branches(pixels);
  return blend(base, enriched, state_->alpha);
}

torch::Tensor MultiResEncoder::encode(std::span<const ImageTensor> images) const {
  torch::NoGradGuard ng;
  std::vector<torch::Tensor> px;
  for (const auto& im : images) px.push_back(im.pixels());
  if (px.empty()) return torch::empty({0, backbone_.embed_dim()});
  return forward(torch::stack(px).to(backbone_.dtype()));
}

Preprocessing MultiResEncoder::preprocessing() const { return with_side(backbone_.preprocessing(), cfg_.input_side()); }

std::string MultiResEncoder::cache_tag() const {
  std::uint64_t h = fnv1a64(cfg_.to_json().dump());
  for (const auto& p : state_->named_parameters(true)) {
    auto t = p.value().detach().to(torch::kFloat32).contiguous();
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(t.data_ptr<float>()), t.numel() * sizeof(float)), h);
  }
  return weights_tag(backbone_) + "+multires@" + to_hex(h);
}

void save_extras(const fs::path& stem, ExtraLayerStateImpl& state, const ExtrasCheckpoint& meta) {
  std::map<std::string, torch::Tensor> tensors;
  for (const auto& p : state.named_parameters(true)) tensors[p.key()] = p.value().detach();
  for (const auto& b : state.named_buffers(true)) tensors[b.key()] = b.value().detach();
  const std::string base = stem.string();
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  safetensors::save(base + ".safetensors", tensors, {{"format", "realdesc-extras"}});
  json side = {{"backbone_id", meta.backbone_id},
               {"scale", meta.config.scale},
               {"alpha", meta.alpha},
               {"step", meta.step},
               {"multires", meta.config.to_json()}};
  write_file(base + ".json", side.dump(2) + "\n");
}

ExtrasCheckpoint load_extras(const fs::path& stem, ExtraLayerStateImpl& state) {
  const std::string base = stem.string();
  json side;
  try {
    side = json::parse(read_file(base + ".json"));
  } catch (const json::exception& e) {
    throw IntegrityError("bad extras sidecar " + base + ".json: " + e.what());
  }
  auto tensors = safetensors::load(base + ".safetensors");
  torch::NoGradGuard ng;
  auto assign = [&](const std::string& key, torch::Tensor& dst) {
    auto it = tensors.find(key);
    if (it == tensors.end()) throw IntegrityError("extras checkpoint lacks " + key);
    if (it->second.sizes() != dst.sizes()) throw IntegrityError("extras tensor " + key + " has the wrong shape");
    dst.copy_(it->second);
  };
  for (auto& p : state.named_parameters(true)) assign(p.key(), p.value());
  for (auto& b : state.named_buffers(true)) assign(b.key(), b.value());
  ExtrasCheckpoint meta;
  meta.backbone_id = side.value("backbone_id", "");
  meta.alpha = side.value("alpha", state.alpha_value());
  meta.step = side.value("step", 0);
  meta.config = side.contains("multires") ? MultiResConfig::from_json(side["multires"]) : MultiResConfig{};
  return meta;
}

std::pair<ExtraLayerState, ExtrasCheckpoint> load_extras_for(const fs::path& stem, const Backbone& backbone) {
  json side;
  try {
    side = json::parse(read_file(stem.string() + ".json"));
  } catch (const json::exception& e) {
    throw IntegrityError("bad extras sidecar: " + std::string(e.what()));
  }
  auto cfg = side.contains("multires") ? MultiResConfig::from_json(side["multires"]) : MultiResConfig{};
  cfg.base_side = backbone.image_size();
  auto state = init_extra_layer(backbone, cfg);
  auto meta = load_extras(stem, *state);
  return {state, meta};
}

}  // namespace realdesc
