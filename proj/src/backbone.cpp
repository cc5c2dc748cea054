#include "realdesc/backbone.hpp"

#include "realdesc/log.hpp"

#include "realdesc/errors.hpp"
#include "realdesc/registry.hpp"
#include "realdesc/safetensors.hpp"
#include "realdesc/util.hpp"

namespace realdesc {
namespace fs = std::filesystem;
using json = nlohmann::json;

ImageTensor::ImageTensor(torch::Tensor pixels) : pixels_(std::move(pixels)) {
  if (pixels_.dim() != 3 || pixels_.size(0) != 3)
    throw ShapeError("image must be [3, H, W], got " + std::to_string(pixels_.dim()) + "-d tensor");
  if (pixels_.size(1) != pixels_.size(2))
    throw ShapeError("image must be square, got " + std::to_string(pixels_.size(1)) + "x" +
                     std::to_string(pixels_.size(2)));
  if (!pixels_.is_floating_point()) pixels_ = pixels_.to(torch::kFloat32);
}

PatchFeatureMap::PatchFeatureMap(torch::Tensor tokens) : tokens_(std::move(tokens)) {
  if (tokens_.dim() != 2 || tokens_.size(0) < 2) throw ShapeError("patch feature map must be [P >= 2, width]");
}

ImageLayers ImageLayers::parse(const std::string& text) {
  const auto t = to_lower(trim(text));
  if (t == "none") return none();
  if (t == "all") return all();
  std::string digits;
  if (t.rfind("last_k(", 0) == 0 && t.back() == ')') digits = t.substr(7, t.size() - 8);
  else if (t.rfind("last_", 0) == 0) digits = t.substr(5);
  if (!digits.empty() && digits.find_first_not_of("0123456789") == std::string::npos)
    return last_k(std::stoll(digits));
  throw ValidationError("bad image layer selector '" + text + "' (expected none, all or last_k(N))");
}

std::string ImageLayers::to_string() const {
  switch (kind) {
    case Kind::kNone: return "none";
    case Kind::kAll: return "all";
    case Kind::kLastK: return "last_k(" + std::to_string(k) + ")";
  }
  return "none";
}

int64_t TrainableReport::trainable_parameters() const {
  int64_t n = 0;
  for (const auto& g : groups) n += g.trainable;
  return n;
}

std::vector<std::string> TrainableReport::trainable_groups() const {
  std::vector<std::string> out;
  for (const auto& g : groups)
    if (g.trainable > 0) out.push_back(g.group);
  return out;
}

std::string parameter_group(const std::string& name) {
  if (name.rfind("text_model.", 0) == 0 || name.rfind("text_projection.", 0) == 0) return "text";
  if (name == "logit_scale") return "logit_scale";
  static const std::string kLayers = "vision_model.encoder.layers.";
  if (name.rfind(kLayers, 0) == 0) {
    auto end = name.find('.', kLayers.size());
    return "vision.layers." + name.substr(kLayers.size(), end - kLayers.size());
  }
  if (name.rfind("vision_model.post_layernorm.", 0) == 0 || name.rfind("visual_projection.", 0) == 0)
    return "vision.head";
  return "vision.embeddings";
}

TrainableReport apply_freeze_policy(Backbone& backbone, const FreezePolicy& policy, torch::nn::Module* extras) {
  const int64_t layers = backbone.vision_layers();
  if (policy.image.kind == ImageLayers::Kind::kLastK && (policy.image.k < 1 || policy.image.k > layers))
    throw ValidationError("last_k(" + std::to_string(policy.image.k) + ") outside [1, " + std::to_string(layers) +
                          "] vision layers");

  auto vision_trainable = [&](const std::string& group) {
    switch (policy.image.kind) {
      case ImageLayers::Kind::kNone: return false;
      case ImageLayers::Kind::kAll: return true;
      case ImageLayers::Kind::kLastK: {
        static const std::string kPrefix = "vision.layers.";
        if (group.rfind(kPrefix, 0) != 0) return false;
        return std::stoll(group.substr(kPrefix.size())) >= layers - policy.image.k;
      }
    }
    return false;
  };

  std::map<std::string, ParameterGroupReport> groups;
  std::vector<std::string> order;
  auto account = [&](const std::string& group, torch::Tensor& p, bool trainable) {
    p.set_requires_grad(trainable);
    if (!groups.count(group)) order.push_back(group);
    auto& g = groups[group];
    g.group = group;
    g.total += p.numel();
    if (trainable) g.trainable += p.numel();
  };

  for (auto& item : backbone.model().named_parameters(true)) {
    const auto group = parameter_group(item.key());
    bool trainable = false;
    if (group == "text" || group == "logit_scale") trainable = policy.text_encoder_trainable;
    else trainable = vision_trainable(group);
    account(group, item.value(), trainable);
  }
  if (extras != nullptr) {
    for (auto& item : extras->named_parameters(true)) {
      const auto& key = item.key();
      auto dot = key.find('.');
      const std::string group = "extras." + (dot == std::string::npos ? key : key.substr(0, dot));
      account(group, item.value(), policy.extras_trainable);
    }
  }

  TrainableReport report;
  for (const auto& g : order) report.groups.push_back(groups[g]);
  if (report.trainable_parameters() == 0)
    throw ValidationError("freeze policy leaves no parameter group trainable");
  return report;
}

Backbone::Backbone(std::string id, std::shared_ptr<ClipModelImpl> model, std::shared_ptr<const Tokenizer> tokenizer,
                   json tokenizer_spec)
    : id_(std::move(id)), model_(std::move(model)), tokenizer_(std::move(tokenizer)),
      tokenizer_spec_(std::move(tokenizer_spec)) {
  model_->eval();
  metadata_["checkpoint"] = id_;
  metadata_["embed_dim"] = std::to_string(config().embed_dim);
  metadata_["patch_size"] = std::to_string(config().vision.patch_size);
  metadata_["image_size"] = std::to_string(config().vision.image_size);
  metadata_["vision_width"] = std::to_string(config().vision.width);
  metadata_["tokenizer"] = tokenizer_->name();
  metadata_["patch_features"] = "last_block_hidden_states:pre_layernorm:pre_projection";
}

Backbone Backbone::from_config(std::string id, const ClipConfig& config, std::shared_ptr<const Tokenizer> tokenizer,
                               std::uint64_t seed) {
  torch::manual_seed(seed);
  auto model = std::make_shared<ClipModelImpl>(config);
  json spec = {{"kind", tokenizer->name()}, {"vocab_size", tokenizer->vocab_size()}};
  return Backbone(std::move(id), std::move(model), std::move(tokenizer), std::move(spec));
}

namespace {

Preprocessing read_preprocessor_config(const fs::path& file, Preprocessing p) {
  auto j = json::parse(read_file(file));
  auto side = [](const json& v, int64_t fallback) -> int64_t {
    if (v.is_number()) return v.get<int64_t>();
    if (v.is_object()) {
      if (v.contains("shortest_edge")) return v["shortest_edge"];
      if (v.contains("height")) return v["height"];
    }
    return fallback;
  };
  if (j.contains("size")) p.resize_side = side(j["size"], p.resize_side);
  if (j.contains("crop_size")) p.crop_side = side(j["crop_size"], p.crop_side);
  if (j.contains("image_mean")) p.mean = j["image_mean"].get<std::array<float, 3>>();
  if (j.contains("image_std")) p.std = j["image_std"].get<std::array<float, 3>>();
  return p;
}

}  // namespace

Backbone Backbone::load(const std::string& identifier) {
  fs::path dir;
  std::string id = identifier;
  if (!identifier.empty() && fs::is_directory(identifier)) {
    dir = identifier;
  } else {
    auto known = ModelRegistry::known(identifier);
    if (known && known->builtin) {
      auto tok = std::make_shared<HashTokenizer>(known->config.text.vocab_size,
                                                 static_cast<int>(known->config.text.context_length));
      return from_config(known->id, known->config, std::move(tok), known->seed);
    }
    id = ModelRegistry::canonical_id(identifier);
    dir = ModelRegistry::fetch(identifier);
  }

  ClipConfig config;
  std::shared_ptr<const Tokenizer> tokenizer;
  json tokenizer_spec;
  try {
    if (fs::exists(dir / "realdesc.json")) {
      auto meta = json::parse(read_file(dir / "realdesc.json"));
      id = meta.value("id", id);
      config = ClipConfig::from_json(meta.at("config"));
      tokenizer_spec = meta.at("tokenizer");
    } else if (fs::exists(dir / "config.json")) {
      config = ClipConfig::from_hf_config(json::parse(read_file(dir / "config.json")));
      if (fs::exists(dir / "preprocessor_config.json"))
        config.preprocessing = read_preprocessor_config(dir / "preprocessor_config.json", config.preprocessing);
      tokenizer_spec = {{"kind", "clip-bpe"}};
    } else {
      throw IntegrityError(dir.string() + " has neither realdesc.json nor config.json");
    }
  } catch (const json::exception& e) {
    throw IntegrityError(dir.string() + ": bad checkpoint metadata: " + e.what());
  }

  const int ctx = static_cast<int>(config.text.context_length);
  if (tokenizer_spec.value("kind", std::string()) == "word-hash") {
    tokenizer = std::make_shared<HashTokenizer>(tokenizer_spec.value("vocab_size", config.text.vocab_size), ctx);
  } else {
    tokenizer = BpeTokenizer::from_files(dir / "vocab.json", dir / "merges.txt", ctx);
  }

  auto model = std::make_shared<ClipModelImpl>(config);
  Backbone b(id, std::move(model), std::move(tokenizer), std::move(tokenizer_spec));
  b.load_state(safetensors::load(dir / "model.safetensors"), true);
  b.metadata_["source"] = dir.string();
  log::info("loaded checkpoint " + id + " from " + dir.string());
  return b;
}

void Backbone::load_state(const std::map<std::string, torch::Tensor>& tensors, bool strict) {
  torch::NoGradGuard guard;
  auto params = model_->named_parameters(true);
  std::size_t assigned = 0;
  for (const auto& [key, value] : tensors) {
    if (key.size() >= 13 && key.compare(key.size() - 13, 13, ".position_ids") == 0) continue;
    auto* p = params.find(key);
    if (p == nullptr) {
      if (strict) log::warn("ignoring unexpected checkpoint tensor " + key);
      continue;
    }
    if (p->sizes() != value.sizes())
      throw IntegrityError("shape mismatch for " + key + ": checkpoint " + c10::str(value.sizes()) + " vs model " +
                           c10::str(p->sizes()));
    p->copy_(value);
    ++assigned;
  }
  if (strict && assigned != params.size()) {
    std::string missing;
    for (const auto& item : params)
      if (!tensors.count(item.key())) missing += " " + item.key();
    throw IntegrityError("checkpoint is missing parameters:" + missing);
  }
}

std::map<std::string, torch::Tensor> Backbone::state() const {
  std::map<std::string, torch::Tensor> out;
  for (const auto& item : model_->named_parameters(true)) out.emplace(item.key(), item.value().detach().clone());
  return out;
}

void Backbone::save(const fs::path& dir) const {
  fs::create_directories(dir);
  safetensors::save(dir / "model.safetensors", state());
  json meta = {{"id", id_}, {"config", config().to_json()}, {"tokenizer", tokenizer_spec_}};
  write_file(dir / "realdesc.json", meta.dump(2));
  if (tokenizer_spec_.value("kind", std::string()) == "clip-bpe") {
    auto src = metadata_.find("source");
    if (src != metadata_.end()) {
      for (const char* f : {"vocab.json", "merges.txt"})
        fs::copy_file(fs::path(src->second) / f, dir / f, fs::copy_options::overwrite_existing);
    }
  }
}

void Backbone::to(torch::Dtype dtype) { model_->to(dtype); }

torch::Dtype Backbone::dtype() const { return model_->logit_scale.scalar_type(); }

torch::Tensor Backbone::pixel_batch(std::span<const ImageTensor> images) const {
  if (images.empty()) throw ValidationError("empty image batch");
  std::vector<torch::Tensor> px;
  px.reserve(images.size());
  for (const auto& img : images) {
    if (img.side() != image_size())
      throw ShapeError("image side " + std::to_string(img.side()) + " does not match checkpoint resolution " +
                       std::to_string(image_size()));
    px.push_back(img.pixels());
  }
  return torch::stack(px).to(dtype());
}

std::pair<torch::Tensor, torch::Tensor> Backbone::token_batch(const std::vector<TextTokenSeq>& seqs) const {
  const int64_t ctx = config().text.context_length;
  auto ids = torch::zeros({static_cast<int64_t>(seqs.size()), ctx}, torch::kLong);
  auto eos = torch::zeros({static_cast<int64_t>(seqs.size())}, torch::kLong);
  auto ids_a = ids.accessor<int64_t, 2>();
  auto eos_a = eos.accessor<int64_t, 1>();
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto& s = seqs[i].ids;
    if (static_cast<int64_t>(s.size()) > ctx) throw ShapeError("token sequence longer than context");
    for (std::size_t j = 0; j < s.size(); ++j) ids_a[i][j] = s[j];
    eos_a[i] = static_cast<int64_t>(s.size()) - 1;
  }
  return {ids, eos};
}

std::pair<torch::Tensor, torch::Tensor> Backbone::token_batch(const std::vector<std::string>& texts) const {
  std::vector<TextTokenSeq> seqs;
  seqs.reserve(texts.size());
  for (const auto& t : texts) {
    if (trim(t).empty()) throw ValidationError("cannot encode empty text");
    seqs.push_back(tokenizer_->encode(t));
  }
  return token_batch(seqs);
}

torch::Tensor Backbone::encode_images(std::span<const ImageTensor> images) const {
  torch::NoGradGuard guard;
  return model_->encode_pixels(pixel_batch(images));
}

torch::Tensor Backbone::encode_image(const ImageTensor& image) const {
  return encode_images(std::span<const ImageTensor>(&image, 1))[0];
}

torch::Tensor Backbone::encode_token_seqs(const std::vector<TextTokenSeq>& seqs) const {
  torch::NoGradGuard guard;
  auto [ids, eos] = token_batch(seqs);
  return model_->encode_tokens(ids, eos);
}

torch::Tensor Backbone::encode_texts(const std::vector<std::string>& texts) const {
  if (texts.empty()) throw ValidationError("empty text batch");
  torch::NoGradGuard guard;
  auto [ids, eos] = token_batch(texts);
  return model_->encode_tokens(ids, eos);
}

torch::Tensor Backbone::encode_text(const std::string& text) const { return encode_texts({text})[0]; }

torch::Tensor Backbone::patch_features_batch(std::span<const ImageTensor> images, int64_t num_layers) const {
  torch::NoGradGuard guard;
  return model_->vision_model->hidden_states(pixel_batch(images), num_layers);
}

PatchFeatureMap Backbone::patch_features(const ImageTensor& image, int64_t num_layers) const {
  return PatchFeatureMap(patch_features_batch(std::span<const ImageTensor>(&image, 1), num_layers)[0]);
}

}  // namespace realdesc
