#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "realdesc/clip_model.hpp"

namespace realdesc {

/// Architecture facts for a checkpoint identifier known to the registry.
struct KnownCheckpoint {
  std::string id;
  ClipConfig config;
  /// Built-in checkpoints are generated from a seed and need no files.
  bool builtin = false;
  std::uint64_t seed = 0;
};

/// Resolves checkpoint identifiers to local directories.
///
/// Remote checkpoints are cached under REALDESC_MODEL_CACHE (default
/// ~/.cache/realdesc/models), one directory per identifier with '/' replaced by
/// "--". A cache miss triggers a download of the standard Hugging Face files
/// unless REALDESC_OFFLINE is set. Short aliases (vit-b-32, vit-b-16,
/// vit-l-14, tiny) map to canonical identifiers.
class ModelRegistry {
 public:
  static constexpr const char* kTiny = "realdesc/tiny";

  static std::string canonical_id(const std::string& identifier);
  static std::optional<KnownCheckpoint> known(const std::string& identifier);
  static std::vector<std::string> known_ids();

  static std::filesystem::path cache_dir();
  static std::filesystem::path local_dir(const std::string& canonical);

  /// Returns a directory holding model.safetensors and tokenizer assets,
  /// downloading on a cache miss. Throws RegistryError when the identifier
  /// cannot be resolved.
  static std::filesystem::path fetch(const std::string& identifier);

  static const std::vector<std::string>& required_files();
};

}  // namespace realdesc
