#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

#include "realdesc/backbone.hpp"

namespace realdesc {

/// Decodes an image file and applies the checkpoint preprocessing:
/// shortest-side bicubic resize, centre crop, per-channel normalization.
ImageTensor load_image(const std::filesystem::path& path, const Preprocessing& prep);

/// Same pipeline for an interleaved RGB8 buffer of height x width pixels.
ImageTensor preprocess_rgb(std::span<const std::uint8_t> rgb, int height, int width, const Preprocessing& prep);

/// Writes an RGB8 buffer (height x width x 3) to disk; format from extension.
void save_rgb(const std::filesystem::path& path, std::span<const std::uint8_t> rgb, int height, int width);

/// Copy of `prep` targeting a different final side (resize and crop scaled together).
Preprocessing with_side(const Preprocessing& prep, int64_t side);

}  // namespace realdesc
