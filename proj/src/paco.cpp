#include "realdesc/paco.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "realdesc/errors.hpp"
#include "realdesc/log.hpp"
#include "realdesc/util.hpp"

namespace realdesc {
namespace fs = std::filesystem;
using json = nlohmann::json;

std::string to_string(AttributeType type) {
  switch (type) {
    case AttributeType::kMaterial: return "material";
    case AttributeType::kColor: return "color";
    case AttributeType::kPatternMarking: return "pattern_marking";
    case AttributeType::kReflectance: return "reflectance";
  }
  return "color";
}

AttributeType parse_attribute_type(const std::string& text) {
  auto t = to_lower(trim(text));
  std::replace(t.begin(), t.end(), '-', '_');
  if (t == "material") return AttributeType::kMaterial;
  if (t == "color" || t == "colour") return AttributeType::kColor;
  if (t == "pattern_marking" || t == "pattern_making" || t == "pattern") return AttributeType::kPatternMarking;
  if (t == "reflectance") return AttributeType::kReflectance;
  throw ValidationError("unknown attribute type '" + text + "'");
}

std::string attribute_type_phrase(AttributeType type) {
  static const json phrases = [] {
    const auto path = asset_dir() / "paco" / "attribute_phrases.json";
    return fs::exists(path) ? json::parse(read_file(path)).at("phrases") : json::object();
  }();
  const auto key = to_string(type);
  if (phrases.contains(key)) return phrases[key].get<std::string>();
  return type == AttributeType::kPatternMarking ? "pattern" : key;
}

json PacoRecord::to_json() const {
  return {{"image", image_ref},
          {"object", object},
          {"part", part},
          {"attribute_type", to_string(attribute_type)},
          {"positive_values", positive_values},
          {"candidate_values", candidate_values}};
}

PacoRecord PacoRecord::from_json(const json& j) {
  PacoRecord r;
  r.image_ref = j.value("image", "");
  r.object = j.at("object").get<std::string>();
  r.part = j.at("part").get<std::string>();
  r.attribute_type = parse_attribute_type(j.at("attribute_type").get<std::string>());
  r.positive_values = j.at("positive_values").get<std::vector<std::string>>();
  r.candidate_values = j.at("candidate_values").get<std::vector<std::string>>();
  for (const auto& v : r.positive_values)
    if (std::find(r.candidate_values.begin(), r.candidate_values.end(), v) == r.candidate_values.end())
      throw DataError("positive value '" + v + "' is not among the candidates");
  if (r.positive_values.empty()) throw DataError("PACO record without positive values");
  return r;
}

std::string paco_prompt(const PacoRecord& record, const std::string& value) {
  if (std::find(record.candidate_values.begin(), record.candidate_values.end(), value) == record.candidate_values.end())
    throw ValidationError("value '" + value + "' is not in the " + to_string(record.attribute_type) + " vocabulary");
  return "The " + record.part + " of the " + record.object + " has " + value + " " +
         attribute_type_phrase(record.attribute_type);
}

std::vector<std::size_t> top_k_indices(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

std::vector<std::string> paco_predict(const std::string& image_ref, const PacoRecord& record,
                                      const ImageTextScorer& scorer) {
  std::vector<std::string> prompts;
  for (const auto& v : record.candidate_values) prompts.push_back(paco_prompt(record, v));
  const auto scores = scorer.score(image_ref, prompts);
  if (scores.size() != prompts.size()) throw ShapeError("scorer returned the wrong number of scores");
  std::vector<std::string> out;
  for (auto i : top_k_indices(scores, record.k())) out.push_back(record.candidate_values[i]);
  return out;
}

std::string to_string(PacoProtocol protocol) {
  return protocol == PacoProtocol::kFilterMultival ? "filter_multival" : "topk_decompose";
}

PacoProtocol parse_protocol(const std::string& text) {
  auto t = to_lower(trim(text));
  std::replace(t.begin(), t.end(), '-', '_');
  if (t == "filter_multival") return PacoProtocol::kFilterMultival;
  if (t == "topk_decompose") return PacoProtocol::kTopkDecompose;
  throw ValidationError("unknown PACO protocol '" + text + "' (expected filter_multival or topk_decompose)");
}

nlohmann::ordered_json PacoReport::to_json() const {
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (const auto& [k, v] : per_attribute_type) per[k] = {{"accuracy", v}, {"n_instances", per_attribute_type_count.at(k)}};
  return {{"protocol", to_string(protocol)},
          {"mean_accuracy", mean_accuracy},
          {"n_instances", n_instances},
          {"n_filtered", n_filtered},
          {"per_attribute_type", per}};
}

std::string PacoReport::to_csv() const {
  std::string out = "protocol,attribute_type,n_instances,accuracy\n";
  for (const auto& [k, v] : per_attribute_type)
    out += to_string(protocol) + "," + k + "," + std::to_string(per_attribute_type_count.at(k)) + "," +
           std::to_string(v) + "\n";
  out += to_string(protocol) + ",all," + std::to_string(n_instances) + "," + std::to_string(mean_accuracy) + "\n";
  return out;
}

PacoReport paco_evaluate(const std::vector<PacoRecord>& records, const ImageTextScorer& scorer, PacoProtocol protocol) {
  if (records.empty()) throw ValidationError("no PACO records to evaluate");
  PacoReport r;
  r.protocol = protocol;
  std::map<std::string, double> sums;
  double total = 0.0;
  for (const auto& rec : records) {
    if (protocol == PacoProtocol::kFilterMultival && rec.k() > 1) {
      ++r.n_filtered;
      continue;
    }
    const auto pred = paco_predict(rec.image_ref, rec, scorer);
    double s = 0.0;
    if (protocol == PacoProtocol::kFilterMultival) {
      s = (!pred.empty() && pred[0] == rec.positive_values[0]) ? 1.0 : 0.0;
    } else {
      std::set<std::string> pos(rec.positive_values.begin(), rec.positive_values.end());
      std::size_t hit = 0;
      for (const auto& p : pred) hit += pos.count(p);
      s = static_cast<double>(hit) / static_cast<double>(rec.k());
    }
    const auto key = to_string(rec.attribute_type);
    sums[key] += s;
    r.per_attribute_type_count[key] += 1;
    total += s;
    ++r.n_instances;
  }
  if (r.n_instances == 0) throw ValidationError("every PACO record was filtered out");
  r.mean_accuracy = total / static_cast<double>(r.n_instances);
  for (const auto& [k, v] : sums) r.per_attribute_type[k] = v / static_cast<double>(r.per_attribute_type_count[k]);
  return r;
}

namespace {

std::string humanize(std::string s) {
  std::replace(s.begin(), s.end(), '_', ' ');
  return trim(s);
}

std::vector<std::string> split_values(const std::string& name) {
  std::vector<std::string> out;
  for (const auto& p : split(name, ',')) {
    auto v = humanize(p);
    if (!v.empty()) out.push_back(v);
  }
  return out;
}

}  // namespace

std::vector<PacoRecord> load_paco_annotations(const fs::path& path, const PacoIngestOptions& options) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw DataError("cannot parse PACO annotations " + path.string() + ": " + e.what());
  }
  std::map<int64_t, std::string> image_files;
  for (const auto& im : j.at("images")) image_files[im.at("id").get<int64_t>()] = im.at("file_name").get<std::string>();
  std::map<int64_t, std::string> category_names;
  for (const auto& c : j.at("categories")) category_names[c.at("id").get<int64_t>()] = c.at("name").get<std::string>();

  std::map<int64_t, std::string> attr_names;
  std::map<int64_t, AttributeType> attr_types;
  for (const auto& a : j.at("attributes")) {
    const auto id = a.at("id").get<int64_t>();
    attr_names[id] = a.at("name").get<std::string>();
    if (a.contains("type")) attr_types[id] = parse_attribute_type(a["type"].get<std::string>());
  }
  if (j.contains("attr_type_to_attr_idxs")) {
    for (const auto& [type, ids] : j["attr_type_to_attr_idxs"].items()) {
      const auto t = parse_attribute_type(type);
      for (const auto& id : ids) attr_types[id.get<int64_t>()] = t;
    }
  }
  std::map<AttributeType, std::vector<std::string>> vocab;
  for (const auto& [id, name] : attr_names) {
    auto t = attr_types.find(id);
    if (t == attr_types.end()) continue;
    for (const auto& v : split_values(name)) {
      auto& vs = vocab[t->second];
      if (std::find(vs.begin(), vs.end(), v) == vs.end()) vs.push_back(v);
    }
  }

  std::vector<PacoRecord> out;
  std::size_t dropped = 0;
  for (const auto& ann : j.at("annotations")) {
    const auto cat = category_names.find(ann.at("category_id").get<int64_t>());
    if (cat == category_names.end()) continue;
    const auto colon = cat->second.find(':');
    if (colon == std::string::npos) continue;
    if (ann.value("area", 0.0) < options.min_part_area) {
      ++dropped;
      continue;
    }
    std::map<AttributeType, std::vector<std::string>> positives;
    for (const auto& id : ann.value("attribute_ids", std::vector<int64_t>{})) {
      auto t = attr_types.find(id);
      if (t == attr_types.end()) continue;
      for (const auto& v : split_values(attr_names[id])) {
        auto& ps = positives[t->second];
        if (std::find(ps.begin(), ps.end(), v) == ps.end()) ps.push_back(v);
      }
    }
    const auto image_id = ann.at("image_id").get<int64_t>();
    const auto file = image_files.count(image_id) ? image_files[image_id] : std::to_string(image_id);
    for (auto& [type, values] : positives) {
      PacoRecord r;
      r.image_ref = options.image_root.empty() ? file : (options.image_root / file).string();
      r.object = humanize(cat->second.substr(0, colon));
      r.part = humanize(cat->second.substr(colon + 1));
      r.attribute_type = type;
      r.positive_values = values;
      r.candidate_values = vocab[type];
      out.push_back(std::move(r));
    }
  }
  if (dropped > 0) log::info("dropped " + std::to_string(dropped) + " PACO parts below the area threshold");
  return out;
}

std::vector<PacoRecord> load_paco_records(const fs::path& jsonl) {
  std::vector<PacoRecord> out;
  for (const auto& line : split(read_file(jsonl), '\n')) {
    if (trim(line).empty()) continue;
    try {
      out.push_back(PacoRecord::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError("bad PACO record line: " + std::string(e.what()));
    }
  }
  return out;
}

void save_paco_records(const fs::path& jsonl, const std::vector<PacoRecord>& records) {
  std::string out;
  for (const auto& r : records) out += r.to_json().dump() + "\n";
  write_file(jsonl, out);
}

}  // namespace realdesc
