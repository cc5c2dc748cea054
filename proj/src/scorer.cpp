#include "realdesc/scorer.hpp"

namespace realdesc {

ClipScorer::ClipScorer(const Backbone& text_backbone, const ImageEncoder& encoder, ImageResolver resolver)
    : text_backbone_(text_backbone), encoder_(encoder), resolver_(std::move(resolver)) {
  if (!resolver_) resolver_ = file_image_resolver();
}

torch::Tensor ClipScorer::image_embedding(const std::string& ref) const {
  {
    std::lock_guard lock(mu_);
    auto it = images_.find(ref);
    if (it != images_.end()) return it->second;
  }
  std::vector<ImageTensor> one{resolver_(ref, encoder_.preprocessing())};
  auto e = encoder_.encode(one)[0];
  e = e / e.norm();
  std::lock_guard lock(mu_);
  images_[ref] = e;
  return e;
}

torch::Tensor ClipScorer::text_embedding(const std::string& text) const {
  {
    std::lock_guard lock(mu_);
    auto it = texts_.find(text);
    if (it != texts_.end()) return it->second;
  }
  auto e = text_backbone_.encode_text(text);
  e = e / e.norm();
  std::lock_guard lock(mu_);
  texts_[text] = e;
  return e;
}

std::vector<double> ClipScorer::score(const std::string& image_ref, const std::vector<std::string>& texts) const {
  auto img = image_embedding(image_ref);
  std::vector<double> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(torch::dot(img, text_embedding(t)).item<double>());
  return out;
}

}  // namespace realdesc
