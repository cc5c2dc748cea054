#include "realdesc/run_config.hpp"

#include "realdesc/errors.hpp"
#include "realdesc/util.hpp"

namespace realdesc {
using json = nlohmann::json;

json RunConfig::to_json() const {
  return {{"backbone", backbone},
          {"dataset", dataset},
          {"style", to_string(style)},
          {"mode", to_string(mode)},
          {"multires", {{"enabled", multires}, {"config", multires_config.to_json()}}},
          {"schedule", schedule.to_json()},
          {"freeze",
           {{"text_encoder_trainable", freeze.text_encoder_trainable},
            {"image_trainable_layers", freeze.image.to_string()},
            {"extras_trainable", freeze.extras_trainable}}},
          {"curation", curation.to_json()},
          {"paths", paths},
          {"seed", seed}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  try {
    c.backbone = j.value("backbone", c.backbone);
    c.dataset = j.value("dataset", c.dataset);
    if (j.contains("style")) c.style = parse_style(j["style"].get<std::string>());
    if (j.contains("mode")) c.mode = parse_mode(j["mode"].get<std::string>());
    if (j.contains("multires")) {
      const auto& m = j["multires"];
      c.multires = m.value("enabled", false);
      if (m.contains("config")) c.multires_config = MultiResConfig::from_json(m["config"]);
    }
    if (j.contains("schedule")) c.schedule = ScheduleSpec::from_json(j["schedule"]);
    if (j.contains("freeze")) {
      const auto& f = j["freeze"];
      c.freeze.text_encoder_trainable = f.value("text_encoder_trainable", c.freeze.text_encoder_trainable);
      if (f.contains("image_trainable_layers"))
        c.freeze.image = ImageLayers::parse(f["image_trainable_layers"].get<std::string>());
      c.freeze.extras_trainable = f.value("extras_trainable", c.freeze.extras_trainable);
    }
    if (j.contains("curation")) {
      const auto& s = j["curation"];
      c.curation.n_classes = s.value("n_classes", c.curation.n_classes);
      c.curation.k_images = s.value("k_images", c.curation.k_images);
      c.curation.n_sentences = s.value("n_sentences", c.curation.n_sentences);
      c.curation.classes = s.value("classes", c.curation.classes);
      auto excl = s.value("excluded_classes", std::vector<std::string>{});
      c.curation.excluded_classes.insert(excl.begin(), excl.end());
      if (s.contains("style")) c.curation.style = parse_style(s["style"].get<std::string>());
      c.curation.name_free = s.value("name_free", c.curation.name_free);
      c.curation.seed = s.value("seed", c.curation.seed);
    }
    if (j.contains("paths")) c.paths = j["paths"].get<std::map<std::string, std::string>>();
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return c;
}

std::string RunConfig::path(const std::string& key, const std::string& fallback) const {
  auto it = paths.find(key);
  return it == paths.end() || it->second.empty() ? fallback : it->second;
}

namespace {

std::string interpolate_string(const std::string& s) {
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '$' && i + 1 < s.size() && s[i + 1] == '{') {
      const auto end = s.find('}', i + 2);
      if (end == std::string::npos) throw ConfigError("unterminated ${ in config value '" + s + "'");
      std::string expr = s.substr(i + 2, end - i - 2);
      std::string name = expr;
      std::optional<std::string> fallback;
      if (auto d = expr.find(":-"); d != std::string::npos) {
        name = expr.substr(0, d);
        fallback = expr.substr(d + 2);
      }
      auto value = env(name.c_str());
      if (value && !value->empty()) out += *value;
      else if (fallback) out += *fallback;
      else throw ConfigError("config references unset environment variable " + name);
      i = end + 1;
    } else {
      out += s[i++];
    }
  }
  return out;
}

}  // namespace

json interpolate_env(const json& j) {
  if (j.is_string()) return interpolate_string(j.get<std::string>());
  if (j.is_array()) {
    json out = json::array();
    for (const auto& v : j) out.push_back(interpolate_env(v));
    return out;
  }
  if (j.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : j.items()) out[k] = interpolate_env(v);
    return out;
  }
  return j;
}

json load_config_file(const std::filesystem::path& path) {
  try {
    return interpolate_env(json::parse(read_file(path), nullptr, true, true));
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

RunConfig resolve_config(const json& file, const json& overrides) {
  json merged = RunConfig{}.to_json();
  if (!file.is_null()) merged.merge_patch(file);
  if (!overrides.is_null()) merged.merge_patch(overrides);
  auto config = RunConfig::from_json(merged);
  auto sets_decay = [](const json& j) {
    return j.is_object() && j.contains("schedule") && j["schedule"].contains("weight_decay");
  };
  if (config.schedule.optimizer == OptimizerKind::kAdam && !sets_decay(file) && !sets_decay(overrides))
    config.schedule.weight_decay = 0.0;
  return config;
}

}  // namespace realdesc
