#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"
#include "realdesc/backbone.hpp"
#include "realdesc/descriptions.hpp"
#include "realdesc/embedding_cache.hpp"

namespace realdesc {

enum class EvalMode { kOnlyName, kWithName, kNoName };

std::string to_string(EvalMode mode);
EvalMode parse_mode(const std::string& text);

/// "a photo of a {class}."
std::string only_name_prompt(const std::string& class_name);

/// The sentences a class contributes in a given mode.
std::vector<std::string> mode_sentences(const ClassDescriptions& c, EvalMode mode);

struct PrototypeIndex {
  std::vector<std::string> classes;
  /// [n_classes, embed_dim]
  torch::Tensor prototypes;
  EvalMode mode = EvalMode::kWithName;
  std::vector<int64_t> k_per_class;

  int64_t size() const { return static_cast<int64_t>(classes.size()); }
  int64_t dim() const { return prototypes.size(1); }
  int64_t index_of(const std::string& class_name) const;
};

struct PrototypeOptions {
  /// Unit-normalize each sentence embedding before averaging and the mean
  /// after. False gives the plain arithmetic mean of raw embeddings.
  bool normalize_before_mean = true;
  const EmbeddingCache* cache = nullptr;
};

/// Row i = mean of sentence_embeddings[i] ([k_i, e_d]) under the options.
PrototypeIndex prototypes_from_embeddings(const std::vector<std::string>& classes,
                                          const std::vector<torch::Tensor>& sentence_embeddings, EvalMode mode,
                                          bool normalize_before_mean = true);

PrototypeIndex build_prototypes(const DescriptionFile& file, EvalMode mode, const Backbone& backbone,
                                const PrototypeOptions& options = {});
/// Only-name prototypes straight from a class list; no description file needed.
PrototypeIndex build_only_name_prototypes(const std::vector<std::string>& classes, const Backbone& backbone);

/// Cosine similarities, [n_images, n_classes].
torch::Tensor score_matrix(const torch::Tensor& image_embeddings, const PrototypeIndex& index);

struct Prediction {
  int64_t index = 0;
  std::string class_name;
  /// Cosine similarity to every prototype.
  torch::Tensor scores;
};

/// Argmax of cosine similarity; ties go to the lowest class index.
Prediction classify(const torch::Tensor& image_embedding, const PrototypeIndex& index);
/// Lowest index among the maxima of a score vector.
int64_t argmax_lowest(const torch::Tensor& scores);
/// Position of `target` in the score ordering, ties ranked by class index.
int64_t rank_of(const torch::Tensor& scores, int64_t target);

/// Anything that turns preprocessed images into embeddings.
class ImageEncoder {
 public:
  virtual ~ImageEncoder() = default;
  virtual torch::Tensor encode(std::span<const ImageTensor> images) const = 0;
  /// Preprocessing the encoder expects its input images to have gone through.
  virtual Preprocessing preprocessing() const = 0;
  /// Identifies the encoder weights for caching.
  virtual std::string cache_tag() const = 0;
};

class BackboneImageEncoder final : public ImageEncoder {
 public:
  explicit BackboneImageEncoder(const Backbone& backbone) : backbone_(backbone) {}
  torch::Tensor encode(std::span<const ImageTensor> images) const override { return backbone_.encode_images(images); }
  Preprocessing preprocessing() const override { return backbone_.preprocessing(); }
  std::string cache_tag() const override;

 private:
  const Backbone& backbone_;
  mutable std::string tag_;
};

/// Checkpoint id plus a digest of the current parameter values.
std::string weights_tag(const Backbone& backbone);

/// A labelled test split.
class LabeledImageSource {
 public:
  virtual ~LabeledImageSource() = default;
  virtual std::size_t size() const = 0;
  virtual std::string label(std::size_t i) const = 0;
  /// Stable identifier of image i (path or synthetic id), used for caching.
  virtual std::string key(std::size_t i) const = 0;
  virtual ImageTensor load(std::size_t i, const Preprocessing& prep) const = 0;
};

struct ConfusedPair {
  std::string true_class;
  std::string predicted_class;
  int64_t count = 0;
};

struct ClassificationReport {
  EvalMode mode = EvalMode::kWithName;
  double top1 = 0.0;
  double top5 = 0.0;
  std::map<std::string, double> per_class_accuracy;
  std::map<std::string, int64_t> per_class_count;
  std::vector<ConfusedPair> confusion_topline;
  int64_t n_images = 0;

  nlohmann::ordered_json to_json() const;
  void write_json(const std::filesystem::path& path) const;
  /// One row per class: class,n_images,accuracy.
  void write_per_class_csv(const std::filesystem::path& path) const;
};

struct EvalOptions {
  int64_t batch_size = 32;
  std::size_t confusion_pairs = 10;
  const EmbeddingCache* cache = nullptr;
};

/// Encodes every image of the source, [n, embed_dim], reusing cached rows.
torch::Tensor encode_source(const LabeledImageSource& source, const ImageEncoder& encoder,
                            const EvalOptions& options = {});

/// Scores precomputed image embeddings against an index.
ClassificationReport evaluate_embeddings(const torch::Tensor& image_embeddings, const std::vector<std::string>& labels,
                                         const PrototypeIndex& index, std::size_t confusion_pairs = 10);

/// DataError, listing offenders, when a source label has no prototype.
void check_labels(const LabeledImageSource& source, const PrototypeIndex& index);

ClassificationReport evaluate_dataset(const LabeledImageSource& source, const PrototypeIndex& index,
                                      const ImageEncoder& encoder, const EvalOptions& options = {});

struct GapReport {
  ClassificationReport only_name;
  ClassificationReport with_name;
  ClassificationReport no_name;

  /// with_name top-1 minus no_name top-1, in percentage points.
  double gap_points() const { return 100.0 * (with_name.top1 - no_name.top1); }
  nlohmann::ordered_json to_json() const;
};

/// Evaluates all three modes on one set of image embeddings.
GapReport compare_modes(const LabeledImageSource& source, const DescriptionFile& file, const Backbone& text_backbone,
                        const ImageEncoder& encoder, const EvalOptions& options = {},
                        const PrototypeOptions& prototype_options = {});

}  // namespace realdesc
