#include "realdesc/zeroshot.hpp"

#include <algorithm>
#include <set>

#include "realdesc/errors.hpp"
#include "realdesc/log.hpp"
#include "realdesc/util.hpp"

namespace realdesc {
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string to_string(EvalMode mode) {
  switch (mode) {
    case EvalMode::kOnlyName: return "only_name";
    case EvalMode::kWithName: return "with_name";
    case EvalMode::kNoName: return "no_name";
  }
  return "unknown";
}

EvalMode parse_mode(const std::string& text) {
  const auto t = to_lower(trim(text));
  if (t == "only_name" || t == "only-name") return EvalMode::kOnlyName;
  if (t == "with_name" || t == "with-name") return EvalMode::kWithName;
  if (t == "no_name" || t == "no-name") return EvalMode::kNoName;
  throw ValidationError("unknown mode '" + text + "' (expected only_name, with_name or no_name)");
}

std::string only_name_prompt(const std::string& class_name) { return "a photo of a " + class_name + "."; }

std::vector<std::string> mode_sentences(const ClassDescriptions& c, EvalMode mode) {
  switch (mode) {
    case EvalMode::kOnlyName: return {only_name_prompt(c.class_name)};
    case EvalMode::kWithName: return c.sentences;
    case EvalMode::kNoName: return c.name_free_sentences;
  }
  return {};
}

int64_t PrototypeIndex::index_of(const std::string& class_name) const {
  auto it = std::find(classes.begin(), classes.end(), class_name);
  return it == classes.end() ? -1 : static_cast<int64_t>(it - classes.begin());
}

PrototypeIndex prototypes_from_embeddings(const std::vector<std::string>& classes,
                                          const std::vector<torch::Tensor>& sentence_embeddings, EvalMode mode,
                                          bool normalize_before_mean) {
  if (classes.size() != sentence_embeddings.size())
    throw ShapeError("prototype inputs: " + std::to_string(classes.size()) + " classes but " +
                     std::to_string(sentence_embeddings.size()) + " embedding sets");
  PrototypeIndex index;
  index.classes = classes;
  index.mode = mode;
  std::vector<torch::Tensor> rows;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    auto e = sentence_embeddings[i].to(torch::kFloat32);
    if (e.dim() != 2 || e.size(0) == 0) throw ValidationError("class '" + classes[i] + "' has no sentences in mode " + to_string(mode));
    if (normalize_before_mean) {
      e = e / e.norm(2, 1, true);
      auto m = e.mean(0);
      rows.push_back(m / m.norm());
    } else {
      rows.push_back(e.mean(0));
    }
    index.k_per_class.push_back(e.size(0));
  }
  index.prototypes = rows.empty() ? torch::empty({0, 0}) : torch::stack(rows);
  if (!torch::isfinite(index.prototypes).all().item<bool>()) throw ValidationError("non-finite prototype row");
  return index;
}

PrototypeIndex build_prototypes(const DescriptionFile& file, EvalMode mode, const Backbone& backbone,
                                const PrototypeOptions& options) {
  std::string cache_key;
  if (options.cache) {
    cache_key = EmbeddingCache::key({"prototypes", file.content_hash(), to_string(mode), weights_tag(backbone),
                                     options.normalize_before_mean ? "norm" : "raw"});
  }
  std::vector<std::string> classes;
  std::vector<std::vector<std::string>> sentences;
  std::vector<int64_t> counts;
  for (const auto& c : file.classes()) {
    auto s = mode_sentences(c, mode);
    if (s.empty()) throw ValidationError("class '" + c.class_name + "' has no sentences in mode " + to_string(mode));
    classes.push_back(c.class_name);
    counts.push_back(static_cast<int64_t>(s.size()));
    sentences.push_back(std::move(s));
  }
  if (options.cache) {
    if (auto hit = options.cache->get(cache_key)) {
      PrototypeIndex index{classes, *hit, mode, counts};
      return index;
    }
  }
  std::vector<torch::Tensor> embeds;
  embeds.reserve(sentences.size());
  for (const auto& s : sentences) embeds.push_back(backbone.encode_texts(s));
  auto index = prototypes_from_embeddings(classes, embeds, mode, options.normalize_before_mean);
  if (options.cache) options.cache->put(cache_key, index.prototypes);
  return index;
}

PrototypeIndex build_only_name_prototypes(const std::vector<std::string>& classes, const Backbone& backbone) {
  std::vector<std::string> prompts;
  for (const auto& c : classes) prompts.push_back(only_name_prompt(c));
  auto e = backbone.encode_texts(prompts);
  std::vector<torch::Tensor> rows;
  for (int64_t i = 0; i < e.size(0); ++i) rows.push_back(e.slice(0, i, i + 1));
  return prototypes_from_embeddings(classes, rows, EvalMode::kOnlyName);
}

torch::Tensor score_matrix(const torch::Tensor& image_embeddings, const PrototypeIndex& index) {
  auto img = image_embeddings.dim() == 1 ? image_embeddings.unsqueeze(0) : image_embeddings;
  if (img.size(1) != index.dim())
    throw ShapeError("embedding dimension " + std::to_string(img.size(1)) + " does not match index dimension " +
                     std::to_string(index.dim()));
  auto a = img.to(torch::kFloat32);
  a = a / a.norm(2, 1, true);
  auto p = index.prototypes / index.prototypes.norm(2, 1, true);
  return torch::matmul(a, p.t());
}

int64_t argmax_lowest(const torch::Tensor& scores) {
  auto s = scores.contiguous().to(torch::kFloat32);
  const float* d = s.data_ptr<float>();
  int64_t best = 0;
  for (int64_t i = 1; i < s.numel(); ++i)
    if (d[i] > d[best]) best = i;
  return best;
}

int64_t rank_of(const torch::Tensor& scores, int64_t target) {
  auto s = scores.contiguous().to(torch::kFloat32);
  const float* d = s.data_ptr<float>();
  int64_t rank = 0;
  for (int64_t i = 0; i < s.numel(); ++i)
    if (d[i] > d[target] || (d[i] == d[target] && i < target)) ++rank;
  return rank;
}

Prediction classify(const torch::Tensor& image_embedding, const PrototypeIndex& index) {
  if (index.size() == 0) throw ValidationError("empty prototype index");
  auto scores = score_matrix(image_embedding.reshape({1, -1}), index)[0];
  Prediction p;
  p.index = argmax_lowest(scores);
  p.class_name = index.classes[static_cast<std::size_t>(p.index)];
  p.scores = scores;
  return p;
}

std::string BackboneImageEncoder::cache_tag() const {
  if (tag_.empty()) tag_ = weights_tag(backbone_);
  return tag_;
}

std::string weights_tag(const Backbone& backbone) {
  std::uint64_t h = fnv1a64(backbone.id());
  for (const auto& p : backbone.model().named_parameters()) {
    auto t = p.value().detach().to(torch::kFloat32).contiguous();
    h = fnv1a64(p.key(), h);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(t.data_ptr<float>()), t.numel() * sizeof(float)), h);
  }
  return backbone.id() + "@" + to_hex(h);
}

ojson ClassificationReport::to_json() const {
  ojson confusions = ojson::array();
  for (const auto& c : confusion_topline)
    confusions.push_back({{"true", c.true_class}, {"predicted", c.predicted_class}, {"count", c.count}});
  ojson per_class = ojson::object();
  for (const auto& [k, v] : per_class_accuracy) per_class[k] = {{"accuracy", v}, {"n_images", per_class_count.at(k)}};
  return {{"mode", to_string(mode)},
          {"n_images", n_images},
          {"top1", top1},
          {"top5", top5},
          {"per_class", per_class},
          {"confusion_topline", confusions}};
}

void ClassificationReport::write_json(const fs::path& path) const { write_file(path, to_json().dump(2) + "\n"); }

void ClassificationReport::write_per_class_csv(const fs::path& path) const {
  std::string out = "class,n_images,accuracy\n";
  for (const auto& [k, v] : per_class_accuracy) {
    std::string name = k;
    if (name.find_first_of(",\"") != std::string::npos) {
      std::string q = "\"";
      for (char c : name) q += c == '"' ? std::string("\"\"") : std::string(1, c);
      name = q + "\"";
    }
    out += name + "," + std::to_string(per_class_count.at(k)) + "," + std::to_string(v) + "\n";
  }
  write_file(path, out);
}

torch::Tensor encode_source(const LabeledImageSource& source, const ImageEncoder& encoder, const EvalOptions& options) {
  const auto prep = encoder.preprocessing();
  const std::string tag = encoder.cache_tag();
  std::vector<torch::Tensor> rows(source.size());
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (options.cache) {
      if (auto hit = options.cache->get(EmbeddingCache::key({"image", tag, source.key(i)}))) {
        rows[i] = *hit;
        continue;
      }
    }
    pending.push_back(i);
  }
  const auto bs = static_cast<std::size_t>(std::max<int64_t>(1, options.batch_size));
  for (std::size_t start = 0; start < pending.size(); start += bs) {
    std::vector<ImageTensor> batch;
    const std::size_t end = std::min(pending.size(), start + bs);
    for (std::size_t j = start; j < end; ++j) batch.push_back(source.load(pending[j], prep));
    auto e = encoder.encode(batch);
    for (std::size_t j = start; j < end; ++j) {
      rows[pending[j]] = e[static_cast<int64_t>(j - start)].clone();
      if (options.cache) options.cache->put(EmbeddingCache::key({"image", tag, source.key(pending[j])}), rows[pending[j]]);
    }
  }
  if (rows.empty()) return torch::empty({0, 0});
  return torch::stack(rows);
}

ClassificationReport evaluate_embeddings(const torch::Tensor& image_embeddings, const std::vector<std::string>& labels,
                                         const PrototypeIndex& index, std::size_t confusion_pairs) {
  ClassificationReport r;
  r.mode = index.mode;
  r.n_images = static_cast<int64_t>(labels.size());
  if (labels.empty()) return r;
  auto scores = score_matrix(image_embeddings, index);
  std::map<std::string, int64_t> correct;
  std::map<std::pair<std::string, std::string>, int64_t> confusions;
  int64_t hit1 = 0, hit5 = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int64_t target = index.index_of(labels[i]);
    if (target < 0) throw DataError("label '" + labels[i] + "' is not in the prototype index");
    auto row = scores[static_cast<int64_t>(i)];
    const int64_t rank = rank_of(row, target);
    r.per_class_count[labels[i]] += 1;
    correct[labels[i]] += rank == 0 ? 1 : 0;
    if (rank == 0) ++hit1;
    if (rank < 5) ++hit5;
    if (rank != 0) confusions[{labels[i], index.classes[static_cast<std::size_t>(argmax_lowest(row))]}] += 1;
  }
  r.top1 = static_cast<double>(hit1) / static_cast<double>(labels.size());
  r.top5 = static_cast<double>(hit5) / static_cast<double>(labels.size());
  for (const auto& [k, n] : r.per_class_count) r.per_class_accuracy[k] = static_cast<double>(correct[k]) / static_cast<double>(n);
  for (const auto& [pair, n] : confusions) r.confusion_topline.push_back({pair.first, pair.second, n});
  std::stable_sort(r.confusion_topline.begin(), r.confusion_topline.end(),
                   [](const ConfusedPair& a, const ConfusedPair& b) { return a.count > b.count; });
  if (r.confusion_topline.size() > confusion_pairs) r.confusion_topline.resize(confusion_pairs);
  return r;
}

void check_labels(const LabeledImageSource& source, const PrototypeIndex& index) {
  std::set<std::string> known(index.classes.begin(), index.classes.end());
  std::set<std::string> offenders;
  for (std::size_t i = 0; i < source.size(); ++i) {
    auto l = source.label(i);
    if (!known.count(l)) offenders.insert(l);
  }
  if (!offenders.empty())
    throw DataError("dataset labels missing from the prototype index: " +
                    join(std::vector<std::string>(offenders.begin(), offenders.end()), ", "));
}

namespace {

std::vector<std::string> all_labels(const LabeledImageSource& source) {
  std::vector<std::string> labels;
  labels.reserve(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) labels.push_back(source.label(i));
  return labels;
}

}  // namespace

ClassificationReport evaluate_dataset(const LabeledImageSource& source, const PrototypeIndex& index,
                                      const ImageEncoder& encoder, const EvalOptions& options) {
  check_labels(source, index);
  auto embeds = encode_source(source, encoder, options);
  return evaluate_embeddings(embeds, all_labels(source), index, options.confusion_pairs);
}

ojson GapReport::to_json() const {
  return {{"only_name", only_name.to_json()},
          {"with_name", with_name.to_json()},
          {"no_name", no_name.to_json()},
          {"gap_points", gap_points()}};
}

GapReport compare_modes(const LabeledImageSource& source, const DescriptionFile& file, const Backbone& text_backbone,
                        const ImageEncoder& encoder, const EvalOptions& options,
                        const PrototypeOptions& prototype_options) {
  if (!file.filtered()) throw PreconditionError("compare_modes needs name-free sentences; run strip-names first");
  auto only = build_prototypes(file, EvalMode::kOnlyName, text_backbone, prototype_options);
  auto with = build_prototypes(file, EvalMode::kWithName, text_backbone, prototype_options);
  auto none = build_prototypes(file, EvalMode::kNoName, text_backbone, prototype_options);
  check_labels(source, with);
  auto embeds = encode_source(source, encoder, options);
  const auto labels = all_labels(source);
  GapReport g;
  g.only_name = evaluate_embeddings(embeds, labels, only, options.confusion_pairs);
  g.with_name = evaluate_embeddings(embeds, labels, with, options.confusion_pairs);
  g.no_name = evaluate_embeddings(embeds, labels, none, options.confusion_pairs);
  return g;
}

}  // namespace realdesc
