#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"
#include "realdesc/backbone.hpp"
#include "realdesc/clip_model.hpp"
#include "realdesc/zeroshot.hpp"

namespace realdesc {

struct MultiResConfig {
  int64_t base_side = 224;
  /// Input side is scale * base_side, giving scale^2 slices.
  int64_t scale = 2;
  double alpha_init = 0.01;
  double alpha_lr = 1e-4;
  /// Average slice patches after placing them on the global grid instead
  /// of index-wise.
  bool spatial_remap = false;
  /// Add the copied position embeddings before the extra layer.
  bool use_position_embedding = true;

  int64_t input_side() const { return base_side * scale; }
  int64_t num_slices() const { return scale * scale; }
  void validate() const;
  nlohmann::json to_json() const;
  static MultiResConfig from_json(const nlohmann::json& j);
};

/// Row-major s x s grid of base_side crops of a (s * base_side) image.
std::vector<ImageTensor> slice_image(const ImageTensor& image, const MultiResConfig& cfg);
/// Inverse of slice_image.
ImageTensor tile_slices(const std::vector<ImageTensor>& slices, int64_t scale);
/// [B, 3, sS, sS] -> [B * s^2, 3, S, S], slices of each image contiguous and row-major.
torch::Tensor slice_batch(const torch::Tensor& pixels, int64_t scale);

/// Drops the CLS rows and averages the slice maps at each patch index,
/// giving a (P-1) x width matrix.
torch::Tensor average_slice_patches(const std::vector<PatchFeatureMap>& maps);
/// Variant that assembles the slice grids into one (s*g) x (s*g) grid and
/// average-pools it back to g x g.
torch::Tensor average_slice_patches_remapped(const std::vector<PatchFeatureMap>& maps, int64_t scale);

/// Batched forms over [B, N, P, W] slice hidden states, returning [B, P-1, W].
torch::Tensor average_slice_tokens(const torch::Tensor& slice_tokens);
torch::Tensor average_slice_tokens_remapped(const torch::Tensor& slice_tokens, int64_t scale);

/// The trainable additions: projection (2W -> W), one transformer block and alpha.
class ExtraLayerStateImpl : public torch::nn::Module {
 public:
  ExtraLayerStateImpl(int64_t width, int64_t heads, int64_t mlp_dim, int64_t num_tokens, bool quick_gelu, double eps,
                      double alpha_init);

  /// avg [B, P-1, W] (or [P-1, W]) and origin [B, P, W] -> fused [B, P, W].
  /// CLS is paired with itself.
  torch::Tensor concat_and_project(const torch::Tensor& avg, const torch::Tensor& origin);
  /// Runs the extra block over fused tokens and returns the CLS hidden state [B, W].
  torch::Tensor layer_forward(const torch::Tensor& fused, bool use_position_embedding = true);
  /// alpha restricted to [0, 1].
  void clamp_alpha();
  double alpha_value() const { return alpha.item<double>(); }

  torch::nn::Linear projection{nullptr};
  EncoderLayer vit_layer{nullptr};
  torch::Tensor position_embedding;  // buffer, [P, W]
  torch::Tensor alpha;
};
TORCH_MODULE(ExtraLayerState);

/// Copies the backbone's final vision block and position embeddings, sets the
/// projection to pass the origin half through, and alpha to cfg.alpha_init.
ExtraLayerState init_extra_layer(const Backbone& backbone, const MultiResConfig& cfg);

/// (1 - alpha) * base + alpha * enriched.
torch::Tensor blend(const torch::Tensor& base, const torch::Tensor& enriched, const torch::Tensor& alpha);
torch::Tensor blend(const torch::Tensor& base, const torch::Tensor& enriched, double alpha);

/// Single-image building blocks.
PatchFeatureMap concat_and_project(const torch::Tensor& avg, const PatchFeatureMap& origin, ExtraLayerStateImpl& state);
/// Extra block over a fused map, then the backbone's own image head: an e_d vector.
torch::Tensor extra_layer_forward(const PatchFeatureMap& fused, ExtraLayerStateImpl& state, const Backbone& backbone,
                                  bool use_position_embedding = true);

/// The fused encoder. forward() is differentiable; encode() runs without
/// autograd for evaluation.
class MultiResEncoder final : public ImageEncoder {
 public:
  MultiResEncoder(const Backbone& backbone, ExtraLayerState state, MultiResConfig cfg);

  /// pixels [B, 3, sS, sS] -> blended embeddings [B, e_d].
  torch::Tensor forward(const torch::Tensor& pixels) const;
  torch::Tensor encode(std::span<const ImageTensor> images) const override;
  Preprocessing preprocessing() const override;
  std::string cache_tag() const override;

  /// Base path alone: the high-res batch downscaled to base_side.
  torch::Tensor base_embedding(const torch::Tensor& pixels) const;
  /// Enriched CLS embedding before blending.
  torch::Tensor enriched_embedding(const torch::Tensor& pixels) const;

  const MultiResConfig& config() const { return cfg_; }
  ExtraLayerState& state() { return state_; }
  const ExtraLayerState& state() const { return state_; }
  const Backbone& backbone() const { return backbone_; }

 private:
  torch::Tensor downscale(const torch::Tensor& pixels) const;
  std::pair<torch::Tensor, torch::Tensor> branches(const torch::Tensor& pixels) const;

  const Backbone& backbone_;
  ExtraLayerState state_;
  MultiResConfig cfg_;
};

struct ExtrasCheckpoint {
  std::string backbone_id;
  MultiResConfig config;
  double alpha = 0.0;
  int64_t step = 0;
};

/// Writes <stem>.safetensors and <stem>.json.
void save_extras(const std::filesystem::path& stem, ExtraLayerStateImpl& state, const ExtrasCheckpoint& meta);
/// Restores weights into `state`; returns the sidecar.
ExtrasCheckpoint load_extras(const std::filesystem::path& stem, ExtraLayerStateImpl& state);
/// Builds a state shaped for `backbone` and restores a checkpoint into it.
std::pair<ExtraLayerState, ExtrasCheckpoint> load_extras_for(const std::filesystem::path& stem,
                                                             const Backbone& backbone);

}  // namespace realdesc
