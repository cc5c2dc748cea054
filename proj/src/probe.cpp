#include "realdesc/probe.hpp"

#include <algorithm>
#include <set>

#include "realdesc/errors.hpp"
#include "realdesc/log.hpp"
#include "realdesc/util.hpp"

namespace realdesc {
namespace fs = std::filesystem;
using json = nlohmann::json;

std::string to_string(AttributeKind kind) {
  switch (kind) {
    case AttributeKind::kColor: return "color";
    case AttributeKind::kShape: return "shape";
    case AttributeKind::kSize: return "size";
  }
  return "color";
}

AttributeKind parse_attribute_kind(const std::string& text) {
  const auto t = to_lower(trim(text));
  if (t == "color" || t == "colour") return AttributeKind::kColor;
  if (t == "shape") return AttributeKind::kShape;
  if (t == "size") return AttributeKind::kSize;
  throw ValidationError("unknown attribute kind '" + text + "' (expected color, shape or size)");
}

std::vector<std::string> ProbeRecord::candidates() const {
  std::vector<std::string> out{positive};
  out.insert(out.end(), negatives.begin(), negatives.end());
  return out;
}

json ProbeRecord::to_json() const {
  return {{"class", class_name}, {"element", element}, {"attribute_kind", to_string(kind)},
          {"positive", positive}, {"negatives", negatives},   {"images", image_set}};
}

ProbeRecord ProbeRecord::from_json(const json& j) {
  ProbeRecord r;
  r.class_name = j.at("class").get<std::string>();
  r.element = j.at("element").get<std::string>();
  r.kind = parse_attribute_kind(j.at("attribute_kind").get<std::string>());
  r.positive = j.at("positive").get<std::string>();
  r.negatives = j.at("negatives").get<std::vector<std::string>>();
  r.image_set = j.value("images", std::vector<std::string>{});
  return r;
}

std::vector<ProbeRecord> load_probe_records(const fs::path& jsonl) {
  std::vector<ProbeRecord> out;
  for (const auto& line : split(read_file(jsonl), '\n')) {
    if (trim(line).empty()) continue;
    try {
      out.push_back(ProbeRecord::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError("bad probe record line: " + std::string(e.what()));
    }
  }
  return out;
}

void save_probe_records(const fs::path& jsonl, const std::vector<ProbeRecord>& records) {
  std::string out;
  for (const auto& r : records) out += r.to_json().dump() + "\n";
  write_file(jsonl, out);
}

double ProbeReport::kind_average(AttributeKind kind) const {
  double s = 0.0;
  int n = 0;
  for (const auto& c : cells)
    if (c.kind == kind) {
      s += c.accuracy();
      ++n;
    }
  return n == 0 ? 0.0 : s / n;
}

double ProbeReport::overall() const {
  if (cells.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : cells) s += c.accuracy();
  return s / static_cast<double>(cells.size());
}

namespace {

std::string title(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string ProbeReport::to_csv(const std::string& label) const {
  std::string out = "Type,Element," + label + ",n_trials\n";
  for (auto kind : {AttributeKind::kColor, AttributeKind::kShape, AttributeKind::kSize}) {
    int64_t trials = 0;
    bool any = false;
    for (const auto& c : cells) {
      if (c.kind != kind) continue;
      any = true;
      trials += c.n_trials;
      out += title(to_string(kind)) + "," + title(c.element) + "," + fixed2(c.accuracy()) + "," +
             std::to_string(c.n_trials) + "\n";
    }
    if (any) out += title(to_string(kind)) + ",Average," + fixed2(kind_average(kind)) + "," + std::to_string(trials) + "\n";
  }
  return out;
}

nlohmann::ordered_json ProbeReport::to_json() const {
  nlohmann::ordered_json cells_json = nlohmann::ordered_json::array();
  for (const auto& c : cells)
    cells_json.push_back({{"type", to_string(c.kind)},
                          {"element", c.element},
                          {"accuracy", c.accuracy()},
                          {"n_trials", c.n_trials}});
  return {{"cells", cells_json},
          {"averages",
           {{"color", kind_average(AttributeKind::kColor)},
            {"shape", kind_average(AttributeKind::kShape)},
            {"size", kind_average(AttributeKind::kSize)}}},
          {"overall", overall()}};
}

ProbeReport probe_evaluate(const std::vector<ProbeRecord>& records, const ImageTextScorer& scorer) {
  ProbeReport report;
  std::map<std::pair<int, std::string>, std::size_t> where;
  for (const auto& r : records) {
    if (r.negatives.size() != kProbeNegatives)
      throw ValidationError("probe record for '" + r.class_name + "/" + r.element + "' has " +
                            std::to_string(r.negatives.size()) + " negatives, expected 5");
  }
  std::vector<ProbeCell> cells;
  for (const auto& r : records) {
    const auto key = std::make_pair(static_cast<int>(r.kind), to_lower(r.element));
    auto it = where.find(key);
    if (it == where.end()) {
      it = where.emplace(key, cells.size()).first;
      cells.push_back({r.kind, to_lower(r.element), 0, 0});
    }
    auto& cell = cells[it->second];
    const auto cands = r.candidates();
    for (const auto& img : r.image_set) {
      const auto s = scorer.score(img, cands);
      if (s.size() != cands.size()) throw ShapeError("scorer returned the wrong number of scores");
      bool strict = true;
      for (std::size_t i = 1; i < s.size(); ++i) strict = strict && s[0] > s[i];
      cell.n_trials += 1;
      cell.n_correct += strict ? 1 : 0;
    }
  }
  for (auto kind : {AttributeKind::kColor, AttributeKind::kShape, AttributeKind::kSize})
    for (const auto& c : cells)
      if (c.kind == kind) report.cells.push_back(c);
  return report;
}

const std::vector<std::string>& probe_values(AttributeKind kind) {
  static const std::map<AttributeKind, std::vector<std::string>> table = [] {
    std::map<AttributeKind, std::vector<std::string>> t;
    const auto j = json::parse(read_file(asset_dir() / "probe" / "values.json"));
    for (const auto& [k, v] : j.at("values").items()) t[parse_attribute_kind(k)] = v.get<std::vector<std::string>>();
    return t;
  }();
  auto it = table.find(kind);
  if (it == table.end() || it->second.size() < kProbeNegatives + 1)
    throw DataError("probe value list for " + to_string(kind) + " needs at least 6 entries");
  return it->second;
}

std::string probe_sentence(const std::string& placeholder, const std::string& value, const std::string& element) {
  const char first = placeholder.empty() ? 'x' : static_cast<char>(std::tolower(static_cast<unsigned char>(placeholder[0])));
  const std::string article = std::string_view("aeiou").find(first) != std::string_view::npos ? "An" : "A";
  return article + " " + placeholder + " with " + value + " " + element;
}

std::vector<ProbeRecord> generate_probe_records(const std::vector<std::string>& classes, TextGenerator& provider,
                                                TextGenerator& validator, const ProbeGenerationOptions& options) {
  std::vector<ProbeRecord> out;
  for (const auto& cls : classes) {
    LlmRequest ask;
    ask.task = LlmTask::kProbeAttributes;
    ask.class_name = cls;
    ask.placeholder = options.placeholder;
    ask.prompt = probe_attributes_prompt(cls);
    const auto answer = provider.complete(ask);
    if (options.log)
      options.log->append({{"task", "probe_attributes"}, {"class", cls}, {"prompt", ask.prompt}, {"response", answer}});
    std::size_t kept = 0;
    for (const auto& line : split(answer, '\n')) {
      auto parts = split(line, '|');
      if (parts.size() != 3) continue;
      AttributeKind kind;
      try {
        kind = parse_attribute_kind(parts[0]);
      } catch (const ValidationError&) {
        continue;
      }
      const auto element = to_lower(trim(parts[1]));
      const auto value = to_lower(trim(parts[2]));
      if (element.empty() || value.empty()) continue;

      LlmRequest check;
      check.task = LlmTask::kProbeValidate;
      check.class_name = cls;
      check.placeholder = options.placeholder;
      check.input = to_string(kind) + "|" + element + "|" + value;
      const auto statement = probe_sentence(options.placeholder, value, element);
      check.prompt = probe_validate_prompt(cls, statement);
      const auto verdict = to_lower(trim(validator.complete(check)));
      if (options.log)
        options.log->append({{"task", "probe_validate"}, {"class", cls}, {"prompt", check.prompt}, {"response", verdict}});
      if (verdict.rfind("yes", 0) != 0) {
        log::warn("dropping unvalidated attribute '" + check.input + "' for class '" + cls + "'");
        continue;
      }

      ProbeRecord r;
      r.class_name = cls;
      r.element = element;
      r.kind = kind;
      r.positive = statement;
      std::set<std::string> seen{to_lower(statement)};
      auto pool = probe_values(kind);
      Rng rng(fnv1a64(cls + "|" + element + "|" + value, options.seed + 0x9e3779b97f4a7c15ULL));
      rng.shuffle(pool);
      for (const auto& v : pool) {
        if (r.negatives.size() == kProbeNegatives) break;
        if (to_lower(v) == value) continue;
        auto neg = probe_sentence(options.placeholder, v, element);
        if (!seen.insert(to_lower(neg)).second) continue;
        r.negatives.push_back(std::move(neg));
      }
      if (r.negatives.size() != kProbeNegatives) {
        log::warn("not enough distinct contrast values for '" + check.input + "'");
        continue;
      }
      if (auto it = options.images.find(cls); it != options.images.end()) r.image_set = it->second;
      out.push_back(std::move(r));
      ++kept;
    }
    if (kept == 0) log::warn("class '" + cls + "' has no validated attributes");
  }
  return out;
}

}  // namespace realdesc
