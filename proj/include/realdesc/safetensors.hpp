#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <torch/torch.h>

namespace realdesc::safetensors {

/// Reads every tensor of a .safetensors file, converted to float32 on CPU.
/// F32, F16, BF16, F64, I64 and I32 payloads are accepted. Any structural
/// problem (truncated header, offsets out of range, byte count disagreeing
/// with the declared shape) is an IntegrityError.
std::map<std::string, torch::Tensor> load(const std::filesystem::path& path);

/// Writes float32 tensors. Keys are emitted in sorted order, so the output is
/// byte-stable for identical inputs.
void save(const std::filesystem::path& path, const std::map<std::string, torch::Tensor>& tensors,
          const std::map<std::string, std::string>& metadata = {});

}  // namespace realdesc::safetensors
