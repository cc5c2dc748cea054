#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"
#include "realdesc/backbone.hpp"
#include "realdesc/descriptions.hpp"
#include "realdesc/multires.hpp"

namespace realdesc {

struct TrainingPair {
  std::string image_ref;
  std::string text;
  int64_t class_id = 0;
  std::string class_name;
};

struct CorpusManifest {
  std::vector<TrainingPair> pairs;
  std::vector<std::string> class_names;
  /// Classes per super-category placeholder.
  std::map<std::string, int64_t> supercategory_counts;

  std::vector<int64_t> class_ids() const;
  std::string to_jsonl() const;
  static CorpusManifest from_jsonl(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static CorpusManifest load(const std::filesystem::path& path);
  std::string hash() const;
};

/// Where curation finds images: class names and the image refs of each.
class ImageCatalog {
 public:
  virtual ~ImageCatalog() = default;
  virtual std::vector<std::string> classes() const = 0;
  virtual std::vector<std::string> images(const std::string& class_name) const = 0;
};

/// <root>/<class>/<image files>.
class FolderCatalog final : public ImageCatalog {
 public:
  explicit FolderCatalog(std::filesystem::path root);
  std::vector<std::string> classes() const override;
  std::vector<std::string> images(const std::string& class_name) const override;

 private:
  std::filesystem::path root_;
};

struct CurationSpec {
  int64_t n_classes = 4700;
  int64_t k_images = 50;
  int64_t n_sentences = 10;
  /// Explicit class selection; empty means sample n_classes from the catalog.
  std::vector<std::string> classes;
  std::set<std::string> excluded_classes;
  DescriptionStyle style = DescriptionStyle::kOxford;
  bool name_free = true;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
};

/// Lowercased, separator-collapsed form used for exclusion matching.
std::string normalize_class_key(const std::string& name);

/// Builds k_images x n_sentences pairs per selected class. Explicitly listed
/// classes that appear in the exclusion set raise CurationError; sampled
/// classes are drawn from the non-excluded remainder.
CorpusManifest curate(const CurationSpec& spec, const DescriptionFile& descriptions, const ImageCatalog& images);

enum class OptimizerKind { kAdam, kAdamW };

struct ScheduleSpec {
  double lr = 1e-5;
  OptimizerKind optimizer = OptimizerKind::kAdamW;
  double weight_decay = 0.1;
  int64_t batch_size = 64;
  int64_t warmup_steps = 10000;
  int64_t total_steps = 100000;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  double alpha_lr = 1e-4;
  int64_t checkpoint_every = 0;

  /// Multiplier on the base rates: linear warmup, then cosine decay to zero.
  double lr_factor(int64_t step) const;
  void validate() const;
  nlohmann::json to_json() const;
  static ScheduleSpec from_json(const nlohmann::json& j);
};

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& text);

using ImageResolver = std::function<ImageTensor(const std::string& ref, const Preprocessing& prep)>;
/// Decodes refs as file paths.
ImageResolver file_image_resolver();

struct FinetuneOptions {
  /// Run directory; empty keeps everything in memory.
  std::filesystem::path run_dir;
  nlohmann::json resolved_config = nlohmann::json::object();
  ImageResolver resolver;
  std::uint64_t seed = 0;
  bool resume = false;
  /// Keep decoded images in memory across steps.
  bool cache_images = false;
  /// Record the largest absolute gradient seen on frozen backbone parameters.
  bool track_frozen_gradients = false;
  /// Write backbone weights in checkpoints (extras are always written).
  bool save_backbone = true;
  std::function<void(int64_t step, double loss)> on_step;
};

struct RunArtifact {
  std::vector<double> losses;
  std::vector<double> lrs;
  std::vector<double> alphas;
  int64_t start_step = 0;
  int64_t steps_completed = 0;
  TrainableReport trainable;
  /// Names of the optimizer parameter groups and the parameter groups they hold.
  std::map<std::string, std::vector<std::string>> optimizer_groups;
  double max_frozen_gradient = 0.0;
  std::filesystem::path run_dir;

  /// Mean of the first and last `window` losses.
  double head_mean(std::size_t window) const;
  double tail_mean(std::size_t window) const;
};

/// Contrastive fine-tuning with unique-class batches. When `extras` is given
/// the image side runs through the multi-resolution encoder and alpha gets its
/// own optimizer group at schedule.alpha_lr.
RunArtifact finetune(Backbone& backbone, ExtraLayerState* extras, const MultiResConfig* multires,
                     const CorpusManifest& manifest, const ScheduleSpec& schedule, const FreezePolicy& freeze,
                     const FinetuneOptions& options);

struct CaptionPair {
  std::string image_ref;
  std::string caption;
};

/// Trains only the multi-resolution additions on an image-caption corpus with
/// the backbone frozen.
RunArtifact pretrain_extras(ExtraLayerState& extras, Backbone& backbone, const MultiResConfig& multires,
                            const std::vector<CaptionPair>& corpus, const ScheduleSpec& schedule,
                            const FinetuneOptions& options);

/// Reads "image<TAB>caption" lines; relative image paths resolve against the file's directory.
std::vector<CaptionPair> load_caption_corpus(const std::filesystem::path& path);

}  // namespace realdesc
