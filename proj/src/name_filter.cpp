#include "realdesc/name_filter.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "realdesc/log.hpp"

#include "realdesc/llm.hpp"
#include "realdesc/util.hpp"

namespace realdesc {
namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80 || c == '\''; }
bool is_boundary_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }
bool is_separator(unsigned char c) { return c == ' ' || c == '-' || c == '_' || c == '\t'; }

std::vector<std::string> name_words(const std::string& name) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : name) {
    if (is_separator(c)) {
      if (!cur.empty()) words.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(c));
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

std::string title_word(const std::string& w) {
  std::string out = to_lower(w);
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

std::vector<std::string> plural_forms(const std::string& w) {
  const std::string lw = to_lower(w);
  auto ends = [&](const char* s) {
    std::string_view sv(s);
    return lw.size() >= sv.size() && lw.compare(lw.size() - sv.size(), sv.size(), sv) == 0;
  };
  std::vector<std::string> out;
  if (ends("s") || ends("x") || ends("z") || ends("ch") || ends("sh")) {
    out.push_back(w + "es");
  } else {
    out.push_back(w + "s");
  }
  if (lw.size() > 1 && lw.back() == 'y' && std::string_view("aeiou").find(lw[lw.size() - 2]) == std::string_view::npos)
    out.push_back(w.substr(0, w.size() - 1) + "ies");
  return out;
}

std::string article_for(std::string_view word) {
  if (word.empty()) return "a";
  char c = static_cast<char>(std::tolower(static_cast<unsigned char>(word[0])));
  return std::string_view("aeiou").find(c) != std::string_view::npos ? "an" : "a";
}

bool equals_ci(std::string_view a, std::string_view b) {
  return a.size() == b.size() && starts_with_ci(a, b);
}

// Whole-word, case-insensitive occurrences of `word` in `text`.
std::vector<std::size_t> word_positions(const std::string& text, const std::string& word) {
  std::vector<std::size_t> out;
  if (word.empty()) return out;
  for (std::size_t i = 0; i + word.size() <= text.size(); ++i) {
    if (i > 0 && is_boundary_char(static_cast<unsigned char>(text[i - 1]))) continue;
    if (!starts_with_ci(std::string_view(text).substr(i), word)) continue;
    std::size_t end = i + word.size();
    if (end < text.size() && is_boundary_char(static_cast<unsigned char>(text[end]))) continue;
    out.push_back(i);
  }
  return out;
}

std::string collapse_duplicates(std::string text, const std::string& placeholder) {
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t pos : word_positions(text, placeholder)) {
      std::size_t j = pos + placeholder.size();
      std::size_t k = j;
      while (k < text.size() && is_separator(static_cast<unsigned char>(text[k]))) ++k;
      if (k == j || k + placeholder.size() > text.size()) continue;
      if (!starts_with_ci(std::string_view(text).substr(k), placeholder)) continue;
      std::size_t end = k + placeholder.size();
      if (end < text.size() && is_word_char(static_cast<unsigned char>(text[end]))) continue;
      text.erase(j, end - j);
      changed = true;
      break;
    }
  }
  return text;
}

std::string normalize_articles(std::string text, const std::string& placeholder) {
  const std::string wanted = article_for(placeholder);
  auto positions = word_positions(text, placeholder);
  // Walk right to left so earlier offsets stay valid after edits.
  for (auto it = positions.rbegin(); it != positions.rend(); ++it) {
    std::size_t pos = *it;
    std::size_t j = pos;
    while (j > 0 && (text[j - 1] == ' ' || text[j - 1] == '\t')) --j;
    if (j == pos) continue;
    std::size_t start = j;
    while (start > 0 && std::isalpha(static_cast<unsigned char>(text[start - 1]))) --start;
    if (start > 0 && is_boundary_char(static_cast<unsigned char>(text[start - 1]))) continue;
    std::string_view article(text.data() + start, j - start);
    if (!equals_ci(article, "a") && !equals_ci(article, "an")) continue;
    if (equals_ci(article, wanted)) continue;
    std::string replacement = wanted;
    if (std::isupper(static_cast<unsigned char>(article[0])))
      replacement[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(replacement[0])));
    text.replace(start, j - start, replacement);
  }
  return text;
}

}  // namespace

std::vector<std::string> base_name_variants(const std::string& class_name) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  auto add = [&](const std::string& v) {
    if (!v.empty() && seen.insert(v).second) out.push_back(v);
  };
  const auto words = name_words(class_name);
  if (words.empty()) return out;

  add(trim(class_name));

  std::vector<std::vector<std::string>> spans;
  const std::size_t n = words.size();
  if (n == 1) spans.push_back(words);
  for (std::size_t len = n; len >= 2; --len)
    for (std::size_t start = 0; start + len <= n; ++start)
      spans.emplace_back(words.begin() + static_cast<std::ptrdiff_t>(start),
                         words.begin() + static_cast<std::ptrdiff_t>(start + len));
  if (n > 1) spans.push_back({words.back()});

  for (const auto& span : spans) {
    std::vector<std::vector<std::string>> casings(3);
    for (const auto& w : span) {
      casings[0].push_back(w);
      casings[1].push_back(to_lower(w));
      casings[2].push_back(title_word(w));
    }
    std::vector<std::string> joined;
    for (const auto& c : casings) {
      if (c.size() == 1) {
        joined.push_back(c[0]);
        continue;
      }
      for (const char* sep : {" ", "-", "_", ""}) joined.push_back(join(c, sep));
    }
    for (const auto& j : joined) add(j);
    for (const auto& j : joined)
      for (const auto& p : plural_forms(j)) add(p);
  }
  return out;
}

NameMatcher::NameMatcher(const std::string& class_name, const std::string& placeholder) {
  const std::string ph = to_lower(trim(placeholder));
  std::set<std::string> excluded;
  if (!ph.empty()) {
    excluded.insert(ph);
    for (const auto& p : plural_forms(ph)) excluded.insert(p);
  }
  std::set<std::vector<std::string>> seen;
  for (const auto& v : base_name_variants(class_name)) {
    if (excluded.count(to_lower(v))) continue;
    variants_.push_back(v);
    auto words = name_words(to_lower(v));
    if (words.empty() || !seen.insert(words).second) continue;
    patterns_.push_back({words, v});
  }
  auto chars = [](const Pattern& p) {
    std::size_t n = 0;
    for (const auto& w : p.words) n += w.size();
    return n + p.words.size();
  };
  std::stable_sort(patterns_.begin(), patterns_.end(),
                   [&](const Pattern& a, const Pattern& b) { return chars(a) > chars(b); });
}

std::size_t NameMatcher::match_at(std::string_view text, std::size_t pos, const Pattern& p) const {
  std::size_t i = pos;
  for (std::size_t w = 0; w < p.words.size(); ++w) {
    if (w > 0) {
      std::size_t k = i;
      while (k < text.size() && is_separator(static_cast<unsigned char>(text[k]))) ++k;
      if (k == i) return 0;
      i = k;
    }
    const auto& word = p.words[w];
    if (i + word.size() > text.size() || !starts_with_ci(text.substr(i), word)) return 0;
    i += word.size();
  }
  if (i < text.size() && is_boundary_char(static_cast<unsigned char>(text[i]))) return 0;
  return i;
}

std::vector<NameMatcher::Match> NameMatcher::find_all(std::string_view text) const {
  std::vector<Match> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    if (pos > 0 && is_boundary_char(static_cast<unsigned char>(text[pos - 1]))) {
      ++pos;
      continue;
    }
    std::size_t best_end = 0;
    const Pattern* best = nullptr;
    for (const auto& p : patterns_) {
      std::size_t end = match_at(text, pos, p);
      if (end > best_end) {
        best_end = end;
        best = &p;
      }
    }
    if (best != nullptr) {
      out.push_back({pos, best_end, best->variant});
      pos = best_end;
    } else {
      ++pos;
    }
  }
  return out;
}

std::string filter_name(const std::string& class_name, const std::string& description, const std::string& placeholder,
                        TextGenerator* rewriter) {
  std::string text = description;
  if (rewriter != nullptr) {
    try {
      LlmRequest req;
      req.task = LlmTask::kRewrite;
      req.class_name = class_name;
      req.placeholder = placeholder;
      req.input = description;
      req.prompt = rewrite_prompt(class_name, description, placeholder);
      auto rewritten = trim(rewriter->complete(req));
      if (!rewritten.empty()) text = rewritten;
    } catch (const std::exception& e) {
      log::warn("rewriter failed for '" + class_name + "', using deterministic pass only: " + e.what());
    }
  }
  NameMatcher matcher(class_name, placeholder);
  auto matches = matcher.find_all(text);
  if (matches.empty()) return text;
  {
    std::string out;
    std::size_t last = 0;
    for (const auto& m : matches) {
      out.append(text, last, m.begin - last);
      out += placeholder;
      last = m.end;
    }
    out.append(text, last, std::string::npos);
    text = std::move(out);
  }
  text = collapse_duplicates(std::move(text), placeholder);
  return normalize_articles(std::move(text), placeholder);
}

}  // namespace realdesc
