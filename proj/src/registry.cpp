#include "realdesc/registry.hpp"

#include "realdesc/log.hpp"

#include "realdesc/errors.hpp"
#include "realdesc/http_client.hpp"
#include "realdesc/util.hpp"

namespace realdesc {
namespace {

ClipConfig vit_base(int64_t patch) {
  ClipConfig c;
  c.vision = {224, patch, 768, 12, 12, 3072};
  c.text = {49408, 77, 512, 12, 8, 2048};
  c.embed_dim = 512;
  return c;
}

ClipConfig vit_large_14() {
  ClipConfig c;
  c.vision = {224, 14, 1024, 24, 16, 4096};
  c.text = {49408, 77, 768, 12, 12, 3072};
  c.embed_dim = 768;
  return c;
}

ClipConfig tiny() {
  ClipConfig c;
  c.vision = {32, 8, 64, 2, 4, 128};
  c.text = {4096, 77, 64, 2, 4, 128};
  c.embed_dim = 32;
  c.hidden_act = "quick_gelu";
  c.preprocessing.resize_side = 32;
  c.preprocessing.crop_side = 32;
  c.preprocessing.mean = {0.5f, 0.5f, 0.5f};
  c.preprocessing.std = {0.5f, 0.5f, 0.5f};
  return c;
}

const std::vector<KnownCheckpoint>& table() {
  static const std::vector<KnownCheckpoint> kTable = {
      {"openai/clip-vit-base-patch32", vit_base(32), false, 0},
      {"openai/clip-vit-base-patch16", vit_base(16), false, 0},
      {"openai/clip-vit-large-patch14", vit_large_14(), false, 0},
      {ModelRegistry::kTiny, tiny(), true, 0},
  };
  return kTable;
}

bool has_all(const std::filesystem::path& dir) {
  for (const auto& f : ModelRegistry::required_files())
    if (!std::filesystem::exists(dir / f)) return false;
  return true;
}

}  // namespace

std::string ModelRegistry::canonical_id(const std::string& identifier) {
  const std::string id = to_lower(trim(identifier));
  if (id == "vit-b-32" || id == "vit-b/32" || id == "clip-vit-b-32") return "openai/clip-vit-base-patch32";
  if (id == "vit-b-16" || id == "vit-b/16" || id == "clip-vit-b-16") return "openai/clip-vit-base-patch16";
  if (id == "vit-l-14" || id == "vit-l/14" || id == "clip-vit-l-14") return "openai/clip-vit-large-patch14";
  if (id == "tiny") return kTiny;
  return trim(identifier);
}

std::optional<KnownCheckpoint> ModelRegistry::known(const std::string& identifier) {
  const auto id = canonical_id(identifier);
  for (const auto& k : table())
    if (k.id == id) return k;
  return std::nullopt;
}

std::vector<std::string> ModelRegistry::known_ids() {
  std::vector<std::string> ids;
  for (const auto& k : table()) ids.push_back(k.id);
  return ids;
}

const std::vector<std::string>& ModelRegistry::required_files() {
  static const std::vector<std::string> kFiles = {"config.json", "model.safetensors", "vocab.json", "merges.txt",
                                                  "preprocessor_config.json"};
  return kFiles;
}

std::filesystem::path ModelRegistry::cache_dir() {
  if (auto v = env("REALDESC_MODEL_CACHE")) return *v;
  if (auto home = env("HOME")) return std::filesystem::path(*home) / ".cache" / "realdesc" / "models";
  return std::filesystem::temp_directory_path() / "realdesc-models";
}

std::filesystem::path ModelRegistry::local_dir(const std::string& canonical) {
  std::string name = canonical;
  for (std::size_t pos; (pos = name.find('/')) != std::string::npos;) name.replace(pos, 1, "--");
  return cache_dir() / name;
}

std::filesystem::path ModelRegistry::fetch(const std::string& identifier) {
  const auto id = canonical_id(identifier);
  if (id.empty()) throw RegistryError("empty checkpoint identifier");
  const auto dir = local_dir(id);
  if (has_all(dir)) return dir;
  if (env("REALDESC_OFFLINE"))
    throw RegistryError("checkpoint '" + id + "' not in cache " + dir.string() + " and REALDESC_OFFLINE is set");
  if (id.find('/') == std::string::npos) throw RegistryError("unknown checkpoint identifier '" + id + "'");

  const std::string base = env("REALDESC_HF_ENDPOINT").value_or("https://huggingface.co");
  for (const auto& file : required_files()) {
    if (std::filesystem::exists(dir / file)) continue;
    const std::string url = base + "/" + id + "/resolve/main/" + file;
    log::info("downloading " + url);
    auto res = http::get(url);
    if (res.status != 200) {
      throw RegistryError("cannot fetch " + url + " (status " + std::to_string(res.status) + ")" +
                          (known(id) ? "" : "; identifier is not a known checkpoint"));
    }
    // Write to a temp name first so an interrupted download never looks complete.
    auto tmp = dir / (file + ".part");
    write_file(tmp, res.body);
    std::filesystem::rename(tmp, dir / file);
  }
  return dir;
}

}  // namespace realdesc
