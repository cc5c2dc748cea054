#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace realdesc {

/// Content-addressed store of float tensors on disk. Readers take a shared
/// lock and writers an exclusive one on <root>/.lock, so several processes
/// can share one cache directory.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::filesystem::path root);
  /// Cache rooted at $REALDESC_CACHE/embeddings, or nullopt when unset.
  static std::optional<EmbeddingCache> from_env();

  /// Stable key from an ordered list of parts.
  static std::string key(const std::vector<std::string>& parts);

  std::optional<torch::Tensor> get(const std::string& key) const;
  void put(const std::string& key, const torch::Tensor& value) const;
  bool contains(const std::string& key) const;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path file_for(const std::string& key) const;

  std::filesystem::path root_;
};

}  // namespace realdesc
