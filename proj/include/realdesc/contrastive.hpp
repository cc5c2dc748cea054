#pragma once

#include <torch/torch.h>

namespace realdesc {

/// Symmetric image-text cross-entropy over the n x n cosine-similarity
/// matrix divided by `temperature`, averaged over both directions. Rows are
/// expected to be unit-normalized; row i of both inputs is a matching pair.
torch::Tensor contrastive_loss(const torch::Tensor& image_embeds, const torch::Tensor& text_embeds, double temperature);
/// Same objective with a (possibly learnable) logit multiplier, i.e. 1 / temperature.
torch::Tensor contrastive_loss_scaled(const torch::Tensor& image_embeds, const torch::Tensor& text_embeds,
                                      const torch::Tensor& logit_multiplier);

}  // namespace realdesc
