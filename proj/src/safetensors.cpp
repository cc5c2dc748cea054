#include "realdesc/safetensors.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"
#include "realdesc/errors.hpp"
#include "realdesc/util.hpp"

namespace realdesc::safetensors {
namespace {

using json = nlohmann::json;

struct DtypeInfo {
  torch::ScalarType type;
  std::size_t bytes;
};

DtypeInfo dtype_info(const std::string& name) {
  if (name == "F32") return {torch::kFloat32, 4};
  if (name == "F16") return {torch::kFloat16, 2};
  if (name == "BF16") return {torch::kBFloat16, 2};
  if (name == "F64") return {torch::kFloat64, 8};
  if (name == "I64") return {torch::kInt64, 8};
  if (name == "I32") return {torch::kInt32, 4};
  throw IntegrityError("unsupported safetensors dtype " + name);
}

}  // namespace

std::map<std::string, torch::Tensor> load(const std::filesystem::path& path) {
  std::string blob = read_file(path);
  if (blob.size() < 8) throw IntegrityError(path.string() + ": file shorter than header length");
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, blob.data(), 8);
  if (header_len > blob.size() - 8) throw IntegrityError(path.string() + ": header length exceeds file size");
  json header;
  try {
    header = json::parse(blob.substr(8, header_len));
  } catch (const json::exception& e) {
    throw IntegrityError(path.string() + ": malformed header: " + e.what());
  }
  const std::size_t data_start = 8 + header_len;
  const std::size_t data_size = blob.size() - data_start;

  std::map<std::string, torch::Tensor> out;
  for (const auto& [key, entry] : header.items()) {
    if (key == "__metadata__") continue;
    auto info = dtype_info(entry.at("dtype").get<std::string>());
    std::vector<int64_t> shape = entry.at("shape").get<std::vector<int64_t>>();
    auto offsets = entry.at("data_offsets").get<std::vector<std::size_t>>();
    if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > data_size)
      throw IntegrityError(path.string() + ": bad offsets for " + key);
    std::size_t numel = 1;
    for (auto d : shape) numel *= static_cast<std::size_t>(d);
    if (numel * info.bytes != offsets[1] - offsets[0])
      throw IntegrityError(path.string() + ": byte count mismatch for " + key);
    auto raw = torch::empty(shape, torch::TensorOptions().dtype(info.type));
    if (numel > 0) std::memcpy(raw.data_ptr(), blob.data() + data_start + offsets[0], numel * info.bytes);
    out.emplace(key, raw.to(torch::kFloat32));
  }
  return out;
}

void save(const std::filesystem::path& path, const std::map<std::string, torch::Tensor>& tensors,
          const std::map<std::string, std::string>& metadata) {
  json header = json::object();
  if (!metadata.empty()) header["__metadata__"] = metadata;
  std::size_t offset = 0;
  std::vector<torch::Tensor> contiguous;
  for (const auto& [key, t] : tensors) {
    auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    std::size_t bytes = static_cast<std::size_t>(c.numel()) * 4;
    header[key] = {{"dtype", "F32"}, {"shape", c.sizes().vec()}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
    contiguous.push_back(c);
  }
  std::string head = header.dump();
  // Pad the header so tensor data starts 8-byte aligned.
  while ((head.size() + 8) % 8 != 0) head.push_back(' ');
  std::string blob(8, '\0');
  std::uint64_t len = head.size();
  std::memcpy(blob.data(), &len, 8);
  blob += head;
  for (const auto& c : contiguous) {
    blob.append(static_cast<const char*>(c.data_ptr()), static_cast<std::size_t>(c.numel()) * 4);
  }
  write_file(path, blob);
}

}  // namespace realdesc::safetensors
