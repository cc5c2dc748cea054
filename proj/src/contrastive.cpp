#include "realdesc/contrastive.hpp"

#include <string>

#include "realdesc/errors.hpp"

namespace realdesc {

torch::Tensor contrastive_loss_scaled(const torch::Tensor& image_embeds, const torch::Tensor& text_embeds,
                                      const torch::Tensor& logit_multiplier) {
  if (image_embeds.dim() != 2 || image_embeds.sizes() != text_embeds.sizes())
    throw ShapeError("contrastive loss needs two [n, d] matrices of equal shape");
  const int64_t n = image_embeds.size(0);
  if (n < 2) throw ValidationError("contrastive loss needs at least 2 pairs, got " + std::to_string(n));
  auto logits = logit_multiplier * torch::matmul(image_embeds, text_embeds.t());
  auto diag = logits.diagonal();
  // -log softmax at the matching entry, per row (image -> text) and per column (text -> image).
  auto image_to_text = (torch::logsumexp(logits, 1) - diag).mean();
  auto text_to_image = (torch::logsumexp(logits, 0) - diag).mean();
  return 0.5 * (image_to_text + text_to_image);
}

torch::Tensor contrastive_loss(const torch::Tensor& image_embeds, const torch::Tensor& text_embeds, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
  return contrastive_loss_scaled(image_embeds, text_embeds,
                                 torch::full({}, 1.0 / temperature, image_embeds.options()));
}

}  // namespace realdesc
