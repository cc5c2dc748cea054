#pragma once

#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "realdesc/backbone.hpp"
#include "realdesc/training.hpp"
#include "realdesc/zeroshot.hpp"

namespace realdesc {

/// Similarity of one image to each of several sentences.
class ImageTextScorer {
 public:
  virtual ~ImageTextScorer() = default;
  virtual std::vector<double> score(const std::string& image_ref, const std::vector<std::string>& texts) const = 0;
};

class FunctionScorer final : public ImageTextScorer {
 public:
  using Fn = std::function<std::vector<double>(const std::string&, const std::vector<std::string>&)>;
  explicit FunctionScorer(Fn fn) : fn_(std::move(fn)) {}
  std::vector<double> score(const std::string& image_ref, const std::vector<std::string>& texts) const override {
    return fn_(image_ref, texts);
  }

 private:
  Fn fn_;
};

/// Cosine similarity between an image encoder and the backbone's text tower,
/// memoizing image and sentence embeddings.
class ClipScorer final : public ImageTextScorer {
 public:
  ClipScorer(const Backbone& text_backbone, const ImageEncoder& encoder, ImageResolver resolver);
  std::vector<double> score(const std::string& image_ref, const std::vector<std::string>& texts) const override;

 private:
  torch::Tensor image_embedding(const std::string& ref) const;
  torch::Tensor text_embedding(const std::string& text) const;

  const Backbone& text_backbone_;
  const ImageEncoder& encoder_;
  ImageResolver resolver_;
  mutable std::mutex mu_;
  mutable std::map<std::string, torch::Tensor> images_;
  mutable std::map<std::string, torch::Tensor> texts_;
};

}  // namespace realdesc
