#include "realdesc/descriptions.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <set>
#include <thread>

#include "realdesc/errors.hpp"
#include "realdesc/log.hpp"
#include "realdesc/name_filter.hpp"
#include "realdesc/util.hpp"

namespace realdesc {
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string to_string(DescriptionStyle style) { return style == DescriptionStyle::kOxford ? "oxford" : "columbia"; }

DescriptionStyle parse_style(const std::string& text) {
  const auto t = to_lower(trim(text));
  if (t == "oxford") return DescriptionStyle::kOxford;
  if (t == "columbia") return DescriptionStyle::kColumbia;
  throw ValidationError("unknown description style '" + text + "' (expected oxford or columbia)");
}

std::vector<std::string> DescriptionFile::class_names() const {
  std::vector<std::string> out;
  out.reserve(classes_.size());
  for (const auto& c : classes_) out.push_back(c.class_name);
  return out;
}

void DescriptionFile::put(ClassDescriptions c) {
  auto it = index_.find(c.class_name);
  if (it != index_.end()) {
    classes_[it->second] = std::move(c);
    return;
  }
  index_[c.class_name] = classes_.size();
  classes_.push_back(std::move(c));
}

const ClassDescriptions* DescriptionFile::find(const std::string& class_name) const {
  auto it = index_.find(class_name);
  return it == index_.end() ? nullptr : &classes_[it->second];
}

const ClassDescriptions& DescriptionFile::at(const std::string& class_name) const {
  if (const auto* c = find(class_name)) return *c;
  throw ValidationError("class '" + class_name + "' not in description file");
}

bool DescriptionFile::filtered() const {
  return std::all_of(classes_.begin(), classes_.end(), [](const auto& c) { return c.filtered(); });
}

ojson DescriptionFile::to_json() const {
  ojson classes = ojson::object();
  for (const auto& c : classes_) {
    classes[c.class_name] = {{"placeholder", c.placeholder},
                             {"sentences", c.sentences},
                             {"name_free_sentences", c.name_free_sentences}};
  }
  return {{"metadata",
           {{"dataset", metadata.dataset},
            {"style", to_string(metadata.style)},
            {"generator", metadata.generator},
            {"timestamp", metadata.timestamp},
            {"k", metadata.k}}},
          {"classes", std::move(classes)}};
}

DescriptionFile DescriptionFile::from_json(const ojson& j) {
  DescriptionFile f;
  try {
    const auto& m = j.at("metadata");
    f.metadata.dataset = m.value("dataset", "");
    f.metadata.style = parse_style(m.value("style", "oxford"));
    f.metadata.generator = m.value("generator", "");
    f.metadata.timestamp = m.value("timestamp", "");
    f.metadata.k = m.value("k", 0);
    for (const auto& [name, v] : j.at("classes").items()) {
      ClassDescriptions c;
      c.class_name = name;
      c.style = f.metadata.style;
      c.placeholder = v.at("placeholder").get<std::string>();
      c.sentences = v.at("sentences").get<std::vector<std::string>>();
      c.name_free_sentences = v.value("name_free_sentences", std::vector<std::string>{});
      if (!c.name_free_sentences.empty() && c.name_free_sentences.size() != c.sentences.size())
        throw DataError("class '" + name + "' has mismatched named and name-free sentence counts");
      f.put(std::move(c));
    }
  } catch (const ojson::exception& e) {
    throw DataError(std::string("malformed description file: ") + e.what());
  }
  return f;
}

void DescriptionFile::save(const fs::path& path) const { write_file(path, to_json().dump(2) + "\n"); }

DescriptionFile DescriptionFile::load(const fs::path& path) {
  try {
    return from_json(ojson::parse(read_file(path)));
  } catch (const ojson::parse_error& e) {
    throw DataError("cannot parse " + path.string() + ": " + e.what());
  }
}

std::string DescriptionFile::content_hash() const { return to_hex(fnv1a64(to_json().dump())); }

void DescriptionFile::check_class_set(const std::vector<std::string>& expected) const {
  std::set<std::string> want(expected.begin(), expected.end());
  std::vector<std::string> missing, unexpected;
  for (const auto& name : want)
    if (!find(name)) missing.push_back(name);
  for (const auto& c : classes_)
    if (!want.count(c.class_name)) unexpected.push_back(c.class_name);
  if (missing.empty() && unexpected.empty()) return;
  std::string msg = "description file class set does not match the benchmark";
  if (!missing.empty()) msg += "; missing: " + join(missing, ", ");
  if (!unexpected.empty()) msg += "; unexpected: " + join(unexpected, ", ");
  throw DataError(msg);
}

std::vector<std::string> parse_response_lines(const std::string& response) {
  std::vector<std::string> out;
  for (auto line : split(response, '\n')) {
    line = trim(line);
    std::size_t i = 0;
    while (i < line.size() && (line[i] == '-' || line[i] == '*' || line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i && j < line.size() && (line[j] == '.' || line[j] == ')')) i = j + 1;
    line = trim(line.substr(i));
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::string compose_columbia(const std::string& class_name, const std::string& descriptor) {
  std::string d = trim(descriptor);
  while (!d.empty() && (d.back() == '.' || d.back() == ' ')) d.pop_back();
  if (d.empty()) return {};
  if (NameMatcher(class_name).contains(d)) return d + ".";
  static const std::vector<std::string> verbs = {"is ",      "has ",   "are ",     "can ",      "often ",
                                                 "usually ", "may ",   "features ", "typically ", "shows "};
  const auto lower = to_lower(d);
  const bool verb_first =
      std::any_of(verbs.begin(), verbs.end(), [&](const std::string& v) { return lower.rfind(v, 0) == 0; });
  const char first = class_name.empty() ? 'x' : static_cast<char>(std::tolower(static_cast<unsigned char>(class_name[0])));
  const std::string article = std::string_view("aeiou").find(first) != std::string_view::npos ? "An" : "A";
  return article + " " + class_name + (verb_first ? " " : " with ") + d + ".";
}

namespace {

ClassDescriptions describe_class(const std::string& class_name, const std::string& placeholder, DescriptionStyle style,
                                 int k, TextGenerator& provider, const GenerationOptions& options) {
  ClassDescriptions c;
  c.class_name = class_name;
  c.placeholder = placeholder;
  c.style = style;
  const NameMatcher matcher(class_name);
  std::set<std::string> seen;
  for (int attempt = 0; attempt <= options.max_requeries && static_cast<int>(c.sentences.size()) < k; ++attempt) {
    LlmRequest req;
    req.task = LlmTask::kDescribe;
    req.class_name = class_name;
    req.placeholder = placeholder;
    req.style = to_string(style);
    req.k = k;
    req.attempt = attempt;
    req.prompt = describe_prompt(req.style, class_name, k);
    const std::string response = provider.complete(req);
    if (options.log) {
      options.log->append({{"task", "describe"},
                           {"class", class_name},
                           {"style", req.style},
                           {"attempt", attempt},
                           {"provider", provider.name()},
                           {"prompt", req.prompt},
                           {"response", response}});
    }
    for (const auto& line : parse_response_lines(response)) {
      std::string sentence = style == DescriptionStyle::kColumbia ? compose_columbia(class_name, line) : line;
      if (sentence.empty() || !matcher.contains(sentence)) continue;
      if (!seen.insert(to_lower(sentence)).second) continue;
      c.sentences.push_back(std::move(sentence));
      if (static_cast<int>(c.sentences.size()) == k) break;
    }
    if (static_cast<int>(c.sentences.size()) < k)
      log::warn("class '" + class_name + "' has " + std::to_string(c.sentences.size()) + " of " + std::to_string(k) +
                " usable sentences after attempt " + std::to_string(attempt + 1));
  }
  if (c.sentences.empty()) throw GenerationError("provider returned no usable sentences for class '" + class_name + "'");
  return c;
}

}  // namespace

DescriptionFile generate_descriptions(const std::vector<std::string>& classes, DescriptionStyle style, int k,
                                      TextGenerator& provider, const GenerationOptions& options) {
  if (k < 1) throw ValidationError("k must be at least 1");
  DescriptionFile file;
  if (options.checkpoint && fs::exists(*options.checkpoint)) {
    file = DescriptionFile::load(*options.checkpoint);
    log::info("resuming from " + options.checkpoint->string() + " with " + std::to_string(file.size()) + " classes");
  }
  file.metadata.dataset = options.dataset;
  file.metadata.style = style;
  file.metadata.generator = provider.name();
  file.metadata.timestamp = provider.deterministic() ? "1970-01-01T00:00:00Z" : utc_timestamp();
  file.metadata.k = k;

  std::vector<std::string> todo;
  for (const auto& name : classes)
    if (!file.find(name)) todo.push_back(name);

  std::vector<std::optional<ClassDescriptions>> results(todo.size());
  std::vector<std::exception_ptr> errors(todo.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < todo.size();) {
      const auto& name = todo[i];
      auto it = options.placeholders.find(name);
      const std::string& placeholder = it == options.placeholders.end() ? options.default_placeholder : it->second;
      try {
        results[i] = describe_class(name, placeholder, style, k, provider, options);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads =
      std::min<std::size_t>(todo.size(), static_cast<std::size_t>(std::max(1, options.max_concurrency)));
  if (threads <= 1 || provider.deterministic()) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  DescriptionFile out;
  out.metadata = file.metadata;
  std::exception_ptr first_error;
  std::size_t next_todo = 0;
  for (const auto& name : classes) {
    if (const auto* done = file.find(name)) {
      out.put(*done);
      continue;
    }
    const std::size_t i = next_todo++;
    if (results[i]) out.put(std::move(*results[i]));
    else if (!first_error) first_error = errors[i];
  }
  if (first_error) {
    if (options.checkpoint) out.save(*options.checkpoint);
    try {
      std::rethrow_exception(first_error);
    } catch (const Error& e) {
      std::string msg = e.what();
      if (options.checkpoint) msg += " (" + std::to_string(out.size()) + " classes saved to " + options.checkpoint->string() + ")";
      throw GenerationError(msg);
    } catch (const std::exception& e) {
      throw GenerationError(e.what());
    }
  }
  return out;
}

void strip_names(DescriptionFile& file, TextGenerator* rewriter) {
  for (auto& c : file.classes()) {
    c.name_free_sentences.clear();
    for (const auto& s : c.sentences) c.name_free_sentences.push_back(filter_name(c.class_name, s, c.placeholder, rewriter));
  }
}

ojson VerificationReport::to_json() const {
  auto hits = [](const std::vector<Hit>& v) {
    ojson a = ojson::array();
    for (const auto& h : v) {
      ojson o = {{"class", h.class_name}, {"sentence_index", h.sentence_index}, {"sentence", h.sentence}, {"variant", h.variant}};
      if (!h.other_class.empty()) o["other_class"] = h.other_class;
      a.push_back(std::move(o));
    }
    return a;
  };
  return {{"certified", certified()},
          {"sentences_checked", sentences_checked},
          {"residuals", hits(residuals)},
          {"cross_class", hits(cross_class)}};
}

VerificationReport verify_name_free(const DescriptionFile& file, bool cross_class) {
  if (!file.filtered()) throw PreconditionError("description file has not been name-filtered; run strip-names first");
  VerificationReport report;
  std::vector<NameMatcher> matchers;
  matchers.reserve(file.size());
  for (const auto& c : file.classes()) matchers.emplace_back(c.class_name, c.placeholder);
  const auto& classes = file.classes();
  for (std::size_t a = 0; a < classes.size(); ++a) {
    const auto& c = classes[a];
    for (std::size_t i = 0; i < c.name_free_sentences.size(); ++i) {
      const auto& s = c.name_free_sentences[i];
      ++report.sentences_checked;
      for (const auto& m : matchers[a].find_all(s)) report.residuals.push_back({c.class_name, i, s, m.variant, {}});
      if (!cross_class) continue;
      for (std::size_t b = 0; b < classes.size(); ++b) {
        if (b == a) continue;
        for (const auto& m : matchers[b].find_all(s))
          report.cross_class.push_back({c.class_name, i, s, m.variant, classes[b].class_name});
      }
    }
  }
  return report;
}

}  // namespace realdesc
