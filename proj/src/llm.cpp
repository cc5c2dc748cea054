#include "realdesc/llm.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <thread>

#include "realdesc/log.hpp"

#include "realdesc/errors.hpp"
#include "realdesc/http_client.hpp"
#include "realdesc/util.hpp"

namespace realdesc {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string load_template(const std::string& name) {
  const auto path = asset_dir() / "prompts" / (name + ".txt");
  std::string out;
  for (const auto& line : split(read_file(path), '\n')) {
    if (!line.empty() && line[0] == '#') continue;
    out += line;
    out += '\n';
  }
  return trim(out);
}

std::string substitute(std::string text, const std::map<std::string, std::string>& values) {
  for (const auto& [key, value] : values) {
    const std::string token = "{" + key + "}";
    for (std::size_t pos = 0; (pos = text.find(token, pos)) != std::string::npos; pos += value.size())
      text.replace(pos, token.size(), value);
  }
  return text;
}

std::string article(const std::string& word) {
  if (word.empty()) return "a";
  return std::string_view("AEIOUaeiou").find(word[0]) != std::string_view::npos ? "an" : "a";
}

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

}  // namespace

std::string to_string(LlmTask task) {
  switch (task) {
    case LlmTask::kDescribe: return "describe";
    case LlmTask::kRewrite: return "rewrite";
    case LlmTask::kProbeAttributes: return "probe_attributes";
    case LlmTask::kProbeValidate: return "probe_validate";
  }
  return "unknown";
}

TranscriptLog::TranscriptLog(fs::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
}

void TranscriptLog::append(const json& record) {
  std::lock_guard lock(mu_);
  std::ofstream out(path_, std::ios::app);
  out << record.dump() << '\n';
}

std::string describe_prompt(const std::string& style, const std::string& class_name, int k) {
  return substitute(load_template(style + "_v1"), {{"class", class_name}, {"k", std::to_string(k)}});
}

std::string rewrite_prompt(const std::string& class_name, const std::string& sentence, const std::string& placeholder) {
  return substitute(load_template("rewrite_v1"),
                    {{"class", class_name}, {"sentence", sentence}, {"placeholder", placeholder}});
}

std::string probe_attributes_prompt(const std::string& class_name) {
  return substitute(load_template("probe_attributes_v1"), {{"class", class_name}});
}

std::string probe_validate_prompt(const std::string& class_name, const std::string& statement) {
  return substitute(load_template("probe_validate_v1"), {{"class", class_name}, {"statement", statement}});
}

RemoteLlmClient::RemoteLlmClient(Options options) : options_(std::move(options)) {
  if (options_.endpoint.empty() || options_.api_key.empty())
    throw ConfigError("remote LLM provider needs REALDESC_LLM_ENDPOINT and REALDESC_LLM_KEY");
}

std::unique_ptr<RemoteLlmClient> RemoteLlmClient::from_env(std::shared_ptr<TranscriptLog> log) {
  Options o;
  o.endpoint = env("REALDESC_LLM_ENDPOINT").value_or("");
  o.api_key = env("REALDESC_LLM_KEY").value_or("");
  if (auto m = env("REALDESC_LLM_MODEL")) o.model = *m;
  if (!log) {
    if (auto p = env("REALDESC_LLM_LOG")) log = std::make_shared<TranscriptLog>(*p);
  }
  o.log = std::move(log);
  return std::make_unique<RemoteLlmClient>(std::move(o));
}

std::string RemoteLlmClient::complete(const LlmRequest& request) {
  json body = {{"model", options_.model},
               {"temperature", options_.temperature},
               {"messages", json::array({{{"role", "user"}, {"content", request.prompt}}})}};
  http::Headers headers = {{"Authorization", "Bearer " + options_.api_key}};
  std::string last_error;
  for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(500 << attempt));
    auto res = http::post_json(options_.endpoint, body.dump(), headers);
    if (options_.log) {
      options_.log->append({{"time", utc_timestamp()},
                            {"task", to_string(request.task)},
                            {"class", request.class_name},
                            {"prompt", request.prompt},
                            {"status", res.status},
                            {"response", res.body}});
    }
    if (res.status == 200) {
      try {
        auto j = json::parse(res.body);
        if (j.contains("choices")) return j["choices"][0]["message"]["content"].get<std::string>();
        if (j.contains("text")) return j["text"].get<std::string>();
        if (j.contains("output")) return j["output"].get<std::string>();
        last_error = "unrecognized response shape";
      } catch (const json::exception& e) {
        last_error = e.what();
      }
      continue;
    }
    last_error = "HTTP " + std::to_string(res.status) + ": " + res.body.substr(0, 200);
    const bool retryable = res.status == 0 || res.status == 429 || res.status >= 500;
    if (!retryable) break;
  }
  throw GenerationError("LLM request for '" + request.class_name + "' failed: " + last_error);
}

FixtureProvider::FixtureProvider(fs::path fixture_dir) {
  if (fixture_dir.empty()) fixture_dir = asset_dir() / "fixtures";
  const auto attr_dir = fixture_dir / "attributes";
  if (fs::exists(attr_dir)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(attr_dir))
      if (e.path().extension() == ".tsv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      for (const auto& line : split(read_file(f), '\n')) {
        if (trim(line).empty() || line[0] == '#') continue;
        auto cols = split(line, '\t');
        if (cols.size() < 3) throw DataError("fixture line needs class, kind and phrases: " + line);
        Entry e;
        e.kind = trim(cols[1]);
        for (const auto& p : split(cols[2], '|'))
          if (!trim(p).empty()) e.phrases.push_back(trim(p));
        entries_[to_lower(trim(cols[0]))] = std::move(e);
      }
    }
  }
  const auto probe_file = fixture_dir / "probe" / "cub_probe_attributes.tsv";
  if (fs::exists(probe_file)) {
    for (const auto& line : split(read_file(probe_file), '\n')) {
      if (trim(line).empty() || line[0] == '#') continue;
      auto cols = split(line, '\t');
      if (cols.size() < 5) continue;
      probe_[to_lower(trim(cols[0]))].push_back({trim(cols[1]), trim(cols[2]), trim(cols[3]), trim(cols[4]) == "yes"});
    }
  }
}

bool FixtureProvider::knows(const std::string& class_name) const { return entries_.count(to_lower(class_name)) > 0; }

const std::vector<std::string>& FixtureProvider::phrases(const std::string& class_name) const {
  auto it = entries_.find(to_lower(class_name));
  if (it == entries_.end()) throw GenerationError("no fixture descriptions for class '" + class_name + "'");
  return it->second.phrases;
}

std::string FixtureProvider::describe(const LlmRequest& req) const {
  auto it = entries_.find(to_lower(req.class_name));
  if (it == entries_.end()) throw GenerationError("no fixture descriptions for class '" + req.class_name + "'");
  const auto& p = it->second.phrases;
  const auto& kind = it->second.kind;
  const std::string& name = req.class_name;
  const std::size_t n = p.size();
  if (n == 0) return {};
  auto at = [&](std::size_t i) { return p[i % n]; };
  std::vector<std::string> lines;

  if (req.style == "columbia") {
    // Descriptor lines, one attribute each; re-queries pair attributes up.
    if (req.attempt == 0) {
      lines = p;
    } else {
      for (std::size_t i = 0; i < n; ++i) lines.push_back(at(i) + " and " + at(i + static_cast<std::size_t>(req.attempt)));
    }
  } else {
    const std::string a = capitalize(article(name));
    const std::size_t off = static_cast<std::size_t>(req.attempt) * 3;
    const std::vector<std::string> templates = {
        "The {name} is {a_kind} that {0} and {1}.",
        "You can identify {a_name} because it {2}.",
        "{A_name} {3}, and it also {0}.",
        "In a photo of {a_name}, you would see that it {4} and {5}.",
        "The {name} typically {1}.",
        "{A_name} {6}, which makes it easy to recognize.",
        "It is {a_kind}: the {name} {5} and {2}.",
        "{A_name} is {a_kind} that {7}.",
        "Most pictures of the {name} show that it {3} and {6}.",
        "The {name} {0}.",
    };
    const int count = std::max(req.k, 1);
    for (int s = 0; s < count; ++s) {
      std::string t = templates[(static_cast<std::size_t>(s) + off) % templates.size()];
      std::map<std::string, std::string> values = {
          {"name", name},
          {"a_name", article(name) + " " + name},
          {"A_name", a + " " + name},
          {"a_kind", article(kind) + " " + kind},
      };
      for (int i = 0; i < 8; ++i) values[std::to_string(i)] = at(static_cast<std::size_t>(i) + off);
      lines.push_back(substitute(t, values));
    }
  }
  return join(lines, "\n");
}

std::string FixtureProvider::complete(const LlmRequest& req) {
  switch (req.task) {
    case LlmTask::kDescribe:
      return describe(req);
    case LlmTask::kRewrite: {
      // Emulates the rewriting pass: exact, case-insensitive full-name swap.
      std::string text = req.input;
      const std::string lname = to_lower(req.class_name);
      for (std::size_t pos = 0; (pos = to_lower(text).find(lname, pos)) != std::string::npos;) {
        text.replace(pos, req.class_name.size(), req.placeholder);
        pos += req.placeholder.size();
      }
      return text;
    }
    case LlmTask::kProbeAttributes: {
      auto it = probe_.find(to_lower(req.class_name));
      if (it == probe_.end()) return {};
      std::vector<std::string> lines;
      for (const auto& f : it->second) lines.push_back(f.kind + "|" + f.element + "|" + f.value);
      return join(lines, "\n");
    }
    case LlmTask::kProbeValidate: {
      auto it = probe_.find(to_lower(req.class_name));
      if (it == probe_.end()) return "no";
      for (const auto& f : it->second)
        if (f.kind + "|" + f.element + "|" + f.value == req.input) return f.valid ? "yes" : "no";
      return "no";
    }
  }
  return {};
}

}  // namespace realdesc
