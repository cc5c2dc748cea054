#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "realdesc/clip_model.hpp"
#include "realdesc/tokenizer.hpp"

namespace realdesc {

/// A preprocessed square RGB image, [3, side, side] float.
class ImageTensor {
 public:
  explicit ImageTensor(torch::Tensor pixels);

  const torch::Tensor& pixels() const { return pixels_; }
  int64_t side() const { return pixels_.size(1); }

 private:
  torch::Tensor pixels_;
};

/// Transformer token grid of one image, [P, width]; row 0 is the CLS token.
class PatchFeatureMap {
 public:
  explicit PatchFeatureMap(torch::Tensor tokens);

  const torch::Tensor& tokens() const { return tokens_; }
  int64_t num_tokens() const { return tokens_.size(0); }
  int64_t width() const { return tokens_.size(1); }
  torch::Tensor cls() const { return tokens_[0]; }
  /// Rows 1..P-1.
  torch::Tensor patches() const { return tokens_.slice(0, 1); }

 private:
  torch::Tensor tokens_;
};

/// Which vision transformer blocks receive gradients.
struct ImageLayers {
  enum class Kind { kNone, kLastK, kAll };
  Kind kind = Kind::kNone;
  int64_t k = 0;

  static ImageLayers none() { return {Kind::kNone, 0}; }
  static ImageLayers last_k(int64_t k) { return {Kind::kLastK, k}; }
  static ImageLayers all() { return {Kind::kAll, 0}; }
  /// "none", "all", "last_k(2)" or "last_2".
  static ImageLayers parse(const std::string& text);
  std::string to_string() const;
};

struct FreezePolicy {
  bool text_encoder_trainable = true;
  ImageLayers image = ImageLayers::last_k(2);
  /// Multi-resolution projection, extra layer and alpha.
  bool extras_trainable = false;
};

struct ParameterGroupReport {
  std::string group;
  int64_t trainable = 0;
  int64_t total = 0;
};

struct TrainableReport {
  std::vector<ParameterGroupReport> groups;

  int64_t trainable_parameters() const;
  std::vector<std::string> trainable_groups() const;
};

class Backbone;

/// Parameter group of a backbone parameter name, e.g. "text",
/// "vision.layers.11", "vision.embeddings", "vision.head", "logit_scale".
std::string parameter_group(const std::string& name);

/// Sets requires_grad on every backbone (and optional extras) parameter.
/// Extras parameters are grouped under "extras.<child>" plus "extras.alpha".
TrainableReport apply_freeze_policy(Backbone& backbone, const FreezePolicy& policy,
                                    torch::nn::Module* extras = nullptr);

/// Handle over a pretrained contrastive vision-text model.
///
/// Inference calls are const and may be issued from several threads at once;
/// anything that mutates parameters (freezing, training, loading) needs
/// exclusive access.
class Backbone {
 public:
  /// Resolves `identifier` as a local checkpoint directory, a built-in
  /// checkpoint, or a registry identifier (see ModelRegistry).
  static Backbone load(const std::string& identifier);
  /// Randomly initialized model with the given architecture.
  static Backbone from_config(std::string id, const ClipConfig& config, std::shared_ptr<const Tokenizer> tokenizer,
                              std::uint64_t seed);

  Backbone(Backbone&&) noexcept = default;
  Backbone& operator=(Backbone&&) noexcept = default;
  Backbone(const Backbone&) = delete;
  Backbone& operator=(const Backbone&) = delete;

  const std::string& id() const { return id_; }
  const ClipConfig& config() const { return model_->config(); }
  int64_t embed_dim() const { return config().embed_dim; }
  int64_t patch_size() const { return config().vision.patch_size; }
  int64_t image_size() const { return config().vision.image_size; }
  int64_t vision_width() const { return config().vision.width; }
  int64_t vision_layers() const { return config().vision.layers; }
  const Preprocessing& preprocessing() const { return config().preprocessing; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }
  const Tokenizer& tokenizer() const { return *tokenizer_; }
  std::shared_ptr<const Tokenizer> shared_tokenizer() const { return tokenizer_; }

  torch::Tensor encode_image(const ImageTensor& image) const;
  /// [n, embed_dim], identical (up to float reassociation) to n single calls.
  torch::Tensor encode_images(std::span<const ImageTensor> images) const;
  torch::Tensor encode_text(const std::string& text) const;
  torch::Tensor encode_texts(const std::vector<std::string>& texts) const;
  torch::Tensor encode_token_seqs(const std::vector<TextTokenSeq>& seqs) const;

  /// Hidden states after the last vision block, before the final layer norm
  /// and the projection head. `num_layers` selects an earlier block output.
  PatchFeatureMap patch_features(const ImageTensor& image, int64_t num_layers = -1) const;
  torch::Tensor patch_features_batch(std::span<const ImageTensor> images, int64_t num_layers = -1) const;

  /// Stacks images into [n, 3, S, S] after checking they match the base resolution.
  torch::Tensor pixel_batch(std::span<const ImageTensor> images) const;
  /// Padded token ids [n, context] and end-token positions [n].
  std::pair<torch::Tensor, torch::Tensor> token_batch(const std::vector<std::string>& texts) const;
  std::pair<torch::Tensor, torch::Tensor> token_batch(const std::vector<TextTokenSeq>& seqs) const;

  ClipModelImpl& model() const { return *model_; }
  std::shared_ptr<ClipModelImpl> shared_model() const { return model_; }
  void to(torch::Dtype dtype);
  torch::Dtype dtype() const;

  /// Named parameter snapshot (detached copies).
  std::map<std::string, torch::Tensor> state() const;
  void load_state(const std::map<std::string, torch::Tensor>& tensors, bool strict = true);
  /// Writes model.safetensors and realdesc.json so load() can reopen it.
  void save(const std::filesystem::path& dir) const;

 private:
  Backbone(std::string id, std::shared_ptr<ClipModelImpl> model, std::shared_ptr<const Tokenizer> tokenizer,
           nlohmann::json tokenizer_spec);

  std::string id_;
  std::shared_ptr<ClipModelImpl> model_;
  std::shared_ptr<const Tokenizer> tokenizer_;
  nlohmann::json tokenizer_spec_;
  std::map<std::string, std::string> metadata_;
};

}  // namespace realdesc
