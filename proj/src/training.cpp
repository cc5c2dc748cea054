#include "realdesc/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "realdesc/batching.hpp"
#include "realdesc/contrastive.hpp"
#include "realdesc/errors.hpp"
#include "realdesc/image_io.hpp"
#include "realdesc/log.hpp"
#include "realdesc/safetensors.hpp"
#include "realdesc/util.hpp"

namespace realdesc {
namespace fs = std::filesystem;
using json = nlohmann::json;

std::vector<int64_t> CorpusManifest::class_ids() const {
  std::vector<int64_t> ids;
  ids.reserve(pairs.size());
  for (const auto& p : pairs) ids.push_back(p.class_id);
  return ids;
}

std::string CorpusManifest::to_jsonl() const {
  std::string out;
  for (const auto& p : pairs) {
    json j = {{"image", p.image_ref}, {"text", p.text}, {"class_id", p.class_id}, {"class", p.class_name}};
    out += j.dump() + "\n";
  }
  return out;
}

CorpusManifest CorpusManifest::from_jsonl(const std::string& text) {
  CorpusManifest m;
  std::map<int64_t, std::string> names;
  for (const auto& line : split(text, '\n')) {
    if (trim(line).empty()) continue;
    try {
      auto j = json::parse(line);
      TrainingPair p{j.at("image").get<std::string>(), j.at("text").get<std::string>(), j.at("class_id").get<int64_t>(),
                     j.value("class", "")};
      names[p.class_id] = p.class_name;
      m.pairs.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw DataError(std::string("bad manifest line: ") + e.what());
    }
  }
  for (const auto& [id, name] : names) {
    if (id != static_cast<int64_t>(m.class_names.size())) throw DataError("manifest class ids are not contiguous");
    m.class_names.push_back(name);
  }
  return m;
}

void CorpusManifest::save(const fs::path& path) const { write_file(path, to_jsonl()); }
CorpusManifest CorpusManifest::load(const fs::path& path) { return from_jsonl(read_file(path)); }
std::string CorpusManifest::hash() const { return to_hex(fnv1a64(to_jsonl())); }

FolderCatalog::FolderCatalog(fs::path root) : root_(std::move(root)) {
  if (!fs::is_directory(root_)) throw DataError("image catalog root " + root_.string() + " is not a directory");
}

std::vector<std::string> FolderCatalog::classes() const {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(root_))
    if (e.is_directory()) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> FolderCatalog::images(const std::string& class_name) const {
  std::vector<std::string> out;
  const auto dir = root_ / class_name;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    auto ext = to_lower(e.path().extension().string());
    if (e.is_regular_file() && (ext == ".jpg" || ext == ".jpeg" || ext == ".png" || ext == ".bmp" || ext == ".webp"))
      out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

json CurationSpec::to_json() const {
  return {{"n_classes", n_classes},
          {"k_images", k_images},
          {"n_sentences", n_sentences},
          {"classes", classes},
          {"excluded_classes", std::vector<std::string>(excluded_classes.begin(), excluded_classes.end())},
          {"style", to_string(style)},
          {"name_free", name_free},
          {"seed", seed}};
}

std::string normalize_class_key(const std::string& name) {
  std::string out;
  bool sep = false;
  for (unsigned char c : to_lower(trim(name))) {
    if (c == ' ' || c == '-' || c == '_' || c == '\t') {
      sep = true;
      continue;
    }
    if (sep && !out.empty()) out += ' ';
    sep = false;
    out += static_cast<char>(c);
  }
  return out;
}

CorpusManifest curate(const CurationSpec& spec, const DescriptionFile& descriptions, const ImageCatalog& images) {
  if (spec.k_images < 1 || spec.n_sentences < 1) throw ValidationError("k_images and n_sentences must be positive");
  if (spec.name_free && !descriptions.filtered())
    throw PreconditionError("curation with name_free needs a name-filtered description file");
  std::set<std::string> excluded;
  for (const auto& e : spec.excluded_classes) excluded.insert(normalize_class_key(e));

  Rng rng(spec.seed);
  std::vector<std::string> selected;
  if (!spec.classes.empty()) {
    std::vector<std::string> offenders;
    for (const auto& c : spec.classes)
      if (excluded.count(normalize_class_key(c))) offenders.push_back(c);
    if (!offenders.empty()) throw CurationError("classes overlap the benchmark exclusion list: " + join(offenders, ", "));
    selected = spec.classes;
  } else {
    std::vector<std::string> candidates;
    for (const auto& c : images.classes())
      if (descriptions.find(c) && !excluded.count(normalize_class_key(c))) candidates.push_back(c);
    std::sort(candidates.begin(), candidates.end());
    rng.shuffle(candidates);
    if (static_cast<int64_t>(candidates.size()) < spec.n_classes)
      log::warn("only " + std::to_string(candidates.size()) + " eligible classes for the requested " +
                std::to_string(spec.n_classes));
    candidates.resize(std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(spec.n_classes)));
    std::sort(candidates.begin(), candidates.end());
    selected = std::move(candidates);
  }

  CorpusManifest m;
  for (const auto& name : selected) {
    const auto* d = descriptions.find(name);
    if (!d) throw CurationError("no descriptions for class '" + name + "'");
    auto sentences = spec.name_free ? d->name_free_sentences : d->sentences;
    if (static_cast<int64_t>(sentences.size()) < spec.n_sentences)
      log::warn("class '" + name + "' has " + std::to_string(sentences.size()) + " sentences, wanted " +
                std::to_string(spec.n_sentences));
    sentences.resize(std::min<std::size_t>(sentences.size(), static_cast<std::size_t>(spec.n_sentences)));
    auto imgs = images.images(name);
    rng.shuffle(imgs);
    if (static_cast<int64_t>(imgs.size()) < spec.k_images)
      log::warn("class '" + name + "' has " + std::to_string(imgs.size()) + " images, taking all");
    imgs.resize(std::min<std::size_t>(imgs.size(), static_cast<std::size_t>(spec.k_images)));
    std::sort(imgs.begin(), imgs.end());
    if (imgs.empty() || sentences.empty()) {
      log::warn("class '" + name + "' contributes no pairs");
      continue;
    }
    const auto id = static_cast<int64_t>(m.class_names.size());
    m.class_names.push_back(name);
    m.supercategory_counts[d->placeholder] += 1;
    for (const auto& img : imgs)
      for (const auto& s : sentences) m.pairs.push_back({img, s, id, name});
  }
  return m;
}

double ScheduleSpec::lr_factor(int64_t step) const {
  if (step < warmup_steps) return static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const double span = static_cast<double>(std::max<int64_t>(1, total_steps - warmup_steps));
  const double progress = std::min(1.0, static_cast<double>(step - warmup_steps) / span);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void ScheduleSpec::validate() const {
  if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
  if (batch_size < 2) throw ValidationError("batch size must be at least 2 for a contrastive loss");
  if (total_steps < 1) throw ValidationError("total_steps must be positive");
  if (warmup_steps < 0 || warmup_steps > total_steps) throw ValidationError("warmup_steps must lie in [0, total_steps]");
  if (weight_decay < 0.0) throw ValidationError("weight decay must be non-negative");
  if (alpha_lr < 0.0) throw ValidationError("alpha_lr must be non-negative");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kAdam ? "adam" : "adamw"; }

OptimizerKind parse_optimizer(const std::string& text) {
  const auto t = to_lower(trim(text));
  if (t == "adam") return OptimizerKind::kAdam;
  if (t == "adamw") return OptimizerKind::kAdamW;
  throw ValidationError("unknown optimizer '" + text + "' (expected adam or adamw)");
}

json ScheduleSpec::to_json() const {
  return {{"lr", lr},
          {"optimizer", to_string(optimizer)},
          {"weight_decay", weight_decay},
          {"batch_size", batch_size},
          {"warmup_steps", warmup_steps},
          {"total_steps", total_steps},
          {"decay", "cosine"},
          {"seeds", seeds},
          {"alpha_lr", alpha_lr},
          {"checkpoint_every", checkpoint_every}};
}

ScheduleSpec ScheduleSpec::from_json(const json& j) {
  ScheduleSpec s;
  s.lr = j.value("lr", s.lr);
  if (j.contains("optimizer")) s.optimizer = parse_optimizer(j["optimizer"].get<std::string>());
  s.weight_decay = j.value("weight_decay", s.optimizer == OptimizerKind::kAdamW ? s.weight_decay : 0.0);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.warmup_steps = j.value("warmup_steps", s.warmup_steps);
  s.total_steps = j.value("total_steps", s.total_steps);
  s.seeds = j.value("seeds", s.seeds);
  s.alpha_lr = j.value("alpha_lr", s.alpha_lr);
  s.checkpoint_every = j.value("checkpoint_every", s.checkpoint_every);
  if (j.contains("decay") && j["decay"] != "cosine") throw ValidationError("only cosine decay is supported");
  return s;
}

ImageResolver file_image_resolver() {
  return [](const std::string& ref, const Preprocessing& prep) { return load_image(ref, prep); };
}

double RunArtifact::head_mean(std::size_t window) const {
  const std::size_t n = std::min(window, losses.size());
  if (n == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += losses[i];
  return s / static_cast<double>(n);
}

double RunArtifact::tail_mean(std::size_t window) const {
  const std::size_t n = std::min(window, losses.size());
  if (n == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = losses.size() - n; i < losses.size(); ++i) s += losses[i];
  return s / static_cast<double>(n);
}

namespace {

fs::path checkpoint_dir(const fs::path& run_dir, int64_t step) {
  return run_dir / "checkpoints" / ("step_" + std::to_string(step));
}

std::optional<int64_t> latest_checkpoint(const fs::path& run_dir) {
  const auto dir = run_dir / "checkpoints";
  if (!fs::is_directory(dir)) return std::nullopt;
  std::optional<int64_t> best;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("step_", 0) != 0 || !fs::exists(e.path() / "state.json")) continue;
    const auto step = std::stoll(name.substr(5));
    if (!best || step > *best) best = step;
  }
  return best;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

struct ParamSet {
  std::vector<torch::Tensor> main;
  std::vector<torch::Tensor> alpha;
  std::vector<std::string> main_groups;
};

}  // namespace

RunArtifact finetune(Backbone& backbone, ExtraLayerState* extras, const MultiResConfig* multires,
                     const CorpusManifest& manifest, const ScheduleSpec& schedule, const FreezePolicy& freeze,
                     const FinetuneOptions& options) {
  schedule.validate();
  if (manifest.pairs.empty()) throw ValidationError("training corpus is empty");
  if (extras != nullptr && multires == nullptr) throw ValidationError("extras given without a multires config");
  torch::manual_seed(options.seed);

  RunArtifact run;
  run.run_dir = options.run_dir;
  run.trainable = apply_freeze_policy(backbone, freeze, extras ? extras->get() : nullptr);

  ParamSet params;
  std::set<std::string> main_groups;
  for (auto& item : backbone.model().named_parameters(true)) {
    if (!item.value().requires_grad()) continue;
    params.main.push_back(item.value());
    main_groups.insert(parameter_group(item.key()));
  }
  if (extras != nullptr) {
    for (auto& item : (*extras)->named_parameters(true)) {
      if (!item.value().requires_grad()) continue;
      if (item.key() == "alpha") {
        params.alpha.push_back(item.value());
      } else {
        params.main.push_back(item.value());
        main_groups.insert("extras." + item.key().substr(0, item.key().find('.')));
      }
    }
  }
  run.optimizer_groups["main"] = std::vector<std::string>(main_groups.begin(), main_groups.end());
  if (!params.alpha.empty()) run.optimizer_groups["alpha"] = {"extras.alpha"};

  std::vector<torch::optim::OptimizerParamGroup> groups;
  std::unique_ptr<torch::optim::Optimizer> opt;
  if (schedule.optimizer == OptimizerKind::kAdamW) {
    if (!params.main.empty())
      groups.emplace_back(params.main, std::make_unique<torch::optim::AdamWOptions>(
                                           torch::optim::AdamWOptions(schedule.lr).weight_decay(schedule.weight_decay)));
    if (!params.alpha.empty())
      groups.emplace_back(params.alpha, std::make_unique<torch::optim::AdamWOptions>(
                                            torch::optim::AdamWOptions(schedule.alpha_lr).weight_decay(0.0)));
    opt = std::make_unique<torch::optim::AdamW>(groups, torch::optim::AdamWOptions(schedule.lr));
  } else {
    if (!params.main.empty())
      groups.emplace_back(params.main, std::make_unique<torch::optim::AdamOptions>(
                                           torch::optim::AdamOptions(schedule.lr).weight_decay(schedule.weight_decay)));
    if (!params.alpha.empty())
      groups.emplace_back(params.alpha, std::make_unique<torch::optim::AdamOptions>(
                                            torch::optim::AdamOptions(schedule.alpha_lr).weight_decay(0.0)));
    opt = std::make_unique<torch::optim::Adam>(groups, torch::optim::AdamOptions(schedule.lr));
  }
  std::vector<double> base_lrs;
  if (!params.main.empty()) base_lrs.push_back(schedule.lr);
  if (!params.alpha.empty()) base_lrs.push_back(schedule.alpha_lr);

  std::optional<MultiResEncoder> mr_encoder;
  Preprocessing prep = backbone.preprocessing();
  if (extras != nullptr) {
    mr_encoder.emplace(backbone, *extras, *multires);
    prep = mr_encoder->preprocessing();
  }
  ImageResolver resolver = options.resolver ? options.resolver : file_image_resolver();
  std::map<std::string, ImageTensor> image_cache;
  auto fetch = [&](const std::string& ref) -> ImageTensor {
    if (!options.cache_images) return resolver(ref, prep);
    auto it = image_cache.find(ref);
    if (it == image_cache.end()) it = image_cache.emplace(ref, resolver(ref, prep)).first;
    return it->second;
  };

  const bool persist = !options.run_dir.empty();
  int64_t start = 0;
  if (persist) {
    fs::create_directories(options.run_dir / "checkpoints");
    if (options.resume) {
      if (auto last = latest_checkpoint(options.run_dir)) {
        const auto dir = checkpoint_dir(options.run_dir, *last);
        if (fs::exists(dir / "model.safetensors"))
          backbone.load_state(safetensors::load(dir / "model.safetensors"), false);
        if (extras != nullptr) load_extras(dir / "extras", **extras);
        torch::serialize::InputArchive archive;
        archive.load_from((dir / "optimizer.pt").string());
        opt->load(archive);
        start = *last;
        log::info("resuming " + options.run_dir.string() + " from step " + std::to_string(start));
      }
    }
    json config = options.resolved_config;
    config["schedule"] = schedule.to_json();
    config["freeze"] = {{"text_encoder_trainable", freeze.text_encoder_trainable},
                        {"image_trainable_layers", freeze.image.to_string()},
                        {"extras_trainable", freeze.extras_trainable}};
    config["seed"] = options.seed;
    config["backbone"] = backbone.id();
    config["manifest_hash"] = manifest.hash();
    if (multires != nullptr && extras != nullptr) config["multires"] = multires->to_json();
    write_file(options.run_dir / "config.json", config.dump(2) + "\n");
    manifest.save(options.run_dir / "manifest.jsonl");
    const auto metrics = options.run_dir / "metrics.csv";
    std::string kept = "step,loss,lr,alpha\n";
    if (start > 0 && fs::exists(metrics)) {
      auto lines = split(read_file(metrics), '\n');
      for (std::size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        if (std::stoll(split(lines[i], ',')[0]) < start) kept += lines[i] + "\n";
      }
    }
    write_file(metrics, kept);
  }
  run.start_step = start;

  auto save_checkpoint = [&](int64_t step) {
    if (!persist) return;
    const auto dir = checkpoint_dir(options.run_dir, step);
    fs::create_directories(dir);
    if (options.save_backbone) backbone.save(dir);
    if (extras != nullptr)
      save_extras(dir / "extras", **extras,
                  {backbone.id(), *multires, (*extras)->alpha_value(), step});
    torch::serialize::OutputArchive archive;
    opt->save(archive);
    archive.save_to((dir / "optimizer.pt").string());
    write_file(dir / "state.json", json({{"step", step}, {"seed", options.seed}}).dump() + "\n");
  };

  UniqueClassBatcher batcher(manifest.class_ids(), schedule.batch_size, options.seed);
  batcher.skip(start);
  std::ofstream metrics_out;
  if (persist) metrics_out.open(options.run_dir / "metrics.csv", std::ios::app);

  auto& model = backbone.model();
  for (int64_t step = start; step < schedule.total_steps; ++step) {
    const double factor = schedule.lr_factor(step);
    for (std::size_t g = 0; g < opt->param_groups().size(); ++g)
      opt->param_groups()[g].options().set_lr(base_lrs[g] * factor);

    const auto batch = batcher.next();
    std::vector<ImageTensor> images;
    std::vector<std::string> texts;
    for (auto i : batch) {
      images.push_back(fetch(manifest.pairs[i].image_ref));
      texts.push_back(manifest.pairs[i].text);
    }
    std::vector<torch::Tensor> px;
    for (const auto& im : images) px.push_back(im.pixels());
    auto pixels = torch::stack(px).to(backbone.dtype());
    auto img = mr_encoder ? mr_encoder->forward(pixels) : model.encode_pixels(pixels);
    auto [ids, eos] = backbone.token_batch(texts);
    auto txt = model.encode_tokens(ids, eos);
    img = img / img.norm(2, 1, true);
    txt = txt / txt.norm(2, 1, true);
    auto scale = model.logit_scale.exp().clamp_max(100.0);
    auto loss = contrastive_loss_scaled(img, txt, scale);
    const double loss_value = loss.item<double>();
    if (!std::isfinite(loss_value)) {
      if (persist) {
        json diag = {{"step", step},
                     {"lr", schedule.lr * factor},
                     {"loss", std::to_string(loss_value)},
                     {"recent_losses", std::vector<double>(run.losses.end() - std::min<std::ptrdiff_t>(20, run.losses.size()),
                                                           run.losses.end())},
                     {"batch", batch}};
        if (extras != nullptr) diag["alpha"] = (*extras)->alpha_value();
        write_file(options.run_dir / "divergence.json", diag.dump(2) + "\n");
      }
      throw DivergenceError("loss became non-finite at step " + std::to_string(step));
    }
    opt->zero_grad();
    loss.backward();
    if (options.track_frozen_gradients) {
      for (const auto& p : model.parameters()) {
        if (p.requires_grad() || !p.grad().defined()) continue;
        run.max_frozen_gradient = std::max(run.max_frozen_gradient, p.grad().abs().max().item<double>());
      }
    }
    opt->step();
    if (extras != nullptr) (*extras)->clamp_alpha();

    const double alpha = extras != nullptr ? (*extras)->alpha_value() : std::nan("");
    run.losses.push_back(loss_value);
    run.lrs.push_back(schedule.lr * factor);
    run.alphas.push_back(alpha);
    run.steps_completed = step + 1;
    if (persist) {
      metrics_out << step << ',' << format_double(loss_value) << ',' << format_double(schedule.lr * factor) << ','
                  << (extras != nullptr ? format_double(alpha) : std::string()) << '\n';
      metrics_out.flush();
    }
    if (options.on_step) options.on_step(step, loss_value);
    if (schedule.checkpoint_every > 0 && (step + 1) % schedule.checkpoint_every == 0 && step + 1 < schedule.total_steps)
      save_checkpoint(step + 1);
  }
  save_checkpoint(schedule.total_steps);
  return run;
}

RunArtifact pretrain_extras(ExtraLayerState& extras, Backbone& backbone, const MultiResConfig& multires,
                            const std::vector<CaptionPair>& corpus, const ScheduleSpec& schedule,
                            const FinetuneOptions& options) {
  if (corpus.empty()) throw ValidationError("caption corpus is empty");
  CorpusManifest manifest;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto id = static_cast<int64_t>(i);
    manifest.class_names.push_back("caption_" + std::to_string(i));
    manifest.pairs.push_back({corpus[i].image_ref, corpus[i].caption, id, manifest.class_names.back()});
  }
  FreezePolicy freeze;
  freeze.text_encoder_trainable = false;
  freeze.image = ImageLayers::none();
  freeze.extras_trainable = true;
  auto opts = options;
  opts.save_backbone = false;
  return finetune(backbone, &extras, &multires, manifest, schedule, freeze, opts);
}

std::vector<CaptionPair> load_caption_corpus(const fs::path& path) {
  std::vector<CaptionPair> out;
  const auto base = path.parent_path();
  for (const auto& line : split(read_file(path), '\n')) {
    if (trim(line).empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("caption corpus line lacks a tab: " + line);
    std::string ref = trim(line.substr(0, tab));
    if (ref.find(':') == std::string::npos && fs::path(ref).is_relative()) ref = (base / ref).string();
    out.push_back({ref, trim(line.substr(tab + 1))});
  }
  return out;
}

}  // namespace realdesc
