#include "realdesc/tokenizer.hpp"

#include <cctype>
#include <limits>

#include "realdesc/log.hpp"

#include "json.hpp"
#include "realdesc/errors.hpp"
#include "realdesc/util.hpp"

namespace realdesc {
namespace {

void append_utf8(std::string& out, uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// GPT-2 style reversible byte -> printable unicode table.
std::vector<std::string> bytes_to_unicode() {
  std::vector<bool> direct(256, false);
  for (int b = '!'; b <= '~'; ++b) direct[b] = true;
  for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
  for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
  std::vector<std::string> table(256);
  uint32_t extra = 0;
  for (int b = 0; b < 256; ++b) {
    uint32_t cp = direct[b] ? static_cast<uint32_t>(b) : 256 + extra++;
    append_utf8(table[b], cp);
  }
  return table;
}

std::size_t utf8_len(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

enum class CharClass { kSpace, kLetter, kDigit, kOther };

CharClass classify(unsigned char c) {
  if (std::isspace(c)) return CharClass::kSpace;
  if (std::isalpha(c) || c >= 0x80) return CharClass::kLetter;
  if (std::isdigit(c)) return CharClass::kDigit;
  return CharClass::kOther;
}

}  // namespace

Tokenizer::Tokenizer(int context_length) : context_length_(context_length) {
  if (context_length < 2 || context_length > kMaxContextLength)
    throw ValidationError("context length must be in [2, 77], got " + std::to_string(context_length));
}

TextTokenSeq Tokenizer::encode(const std::string& text) const {
  TextTokenSeq seq;
  auto content = encode_content(text);
  const std::size_t budget = static_cast<std::size_t>(context_length_) - 2;
  if (content.size() > budget) {
    seq.truncated = true;
    log::warn("text truncated from " + std::to_string(content.size() + 2) + " to " + std::to_string(context_length_) +
              " tokens: \"" + text.substr(0, 40) + "...\"");
    content.resize(budget);
  }
  seq.ids.reserve(content.size() + 2);
  seq.ids.push_back(bos_id());
  seq.ids.insert(seq.ids.end(), content.begin(), content.end());
  seq.ids.push_back(eos_id());
  return seq;
}

BpeTokenizer::BpeTokenizer(std::unordered_map<std::string, int64_t> vocab,
                           std::vector<std::pair<std::string, std::string>> merges, int context_length)
    : Tokenizer(context_length), vocab_(std::move(vocab)), byte_encoder_(bytes_to_unicode()) {
  for (std::size_t i = 0; i < merges.size(); ++i) ranks_.emplace(merges[i], static_cast<int>(i));
  auto find = [&](const char* tok) {
    auto it = vocab_.find(tok);
    if (it == vocab_.end()) throw IntegrityError(std::string("tokenizer vocabulary lacks ") + tok);
    return it->second;
  };
  bos_ = find("<|startoftext|>");
  eos_ = find("<|endoftext|>");
}

std::unique_ptr<BpeTokenizer> BpeTokenizer::from_files(const std::filesystem::path& vocab_json,
                                                       const std::filesystem::path& merges_txt, int context_length) {
  std::unordered_map<std::string, int64_t> vocab;
  try {
    auto j = nlohmann::json::parse(read_file(vocab_json));
    for (const auto& [k, v] : j.items()) vocab.emplace(k, v.get<int64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(vocab_json.string() + ": " + e.what());
  }
  std::vector<std::pair<std::string, std::string>> merges;
  for (const auto& line : split(read_file(merges_txt), '\n')) {
    if (line.empty() || line.rfind("#version", 0) == 0) continue;
    auto sp = line.find(' ');
    if (sp == std::string::npos) continue;
    merges.emplace_back(line.substr(0, sp), trim(line.substr(sp + 1)));
  }
  return std::make_unique<BpeTokenizer>(std::move(vocab), std::move(merges), context_length);
}

std::vector<std::string> BpeTokenizer::pre_tokenize(const std::string& raw) {
  // whitespace_clean + lower
  std::string text;
  bool pending_space = false;
  for (unsigned char c : raw) {
    if (std::isspace(c)) {
      pending_space = !text.empty();
      continue;
    }
    if (pending_space) text.push_back(' ');
    pending_space = false;
    text.push_back(static_cast<char>(std::tolower(c)));
  }

  static const char* kSpecial[] = {"<|startoftext|>", "<|endoftext|>"};
  static const char* kContractions[] = {"'s", "'t", "'re", "'ve", "'m", "'ll", "'d"};
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    bool matched = false;
    for (const char* s : kSpecial) {
      std::string_view sv(s);
      if (text.compare(i, sv.size(), sv) == 0) {
        out.emplace_back(sv);
        i += sv.size();
        matched = true;
        break;
      }
    }
    if (matched) continue;
    for (const char* s : kContractions) {
      std::string_view sv(s);
      if (text.compare(i, sv.size(), sv) == 0) {
        out.emplace_back(sv);
        i += sv.size();
        matched = true;
        break;
      }
    }
    if (matched) continue;
    auto cls = classify(static_cast<unsigned char>(text[i]));
    if (cls == CharClass::kSpace) {
      ++i;
    } else if (cls == CharClass::kDigit) {
      out.emplace_back(1, text[i]);
      ++i;
    } else {
      std::size_t j = i;
      while (j < text.size() && classify(static_cast<unsigned char>(text[j])) == cls) {
        j += cls == CharClass::kLetter ? utf8_len(static_cast<unsigned char>(text[j])) : 1;
      }
      out.push_back(text.substr(i, j - i));
      i = j;
    }
  }
  return out;
}

std::vector<std::string> BpeTokenizer::bpe(const std::string& word) const {
  std::vector<std::string> parts;
  for (unsigned char c : word) parts.push_back(byte_encoder_[c]);
  if (parts.empty()) return parts;
  parts.back() += "</w>";
  while (parts.size() > 1) {
    int best_rank = std::numeric_limits<int>::max();
    std::size_t best = 0;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      auto it = ranks_.find({parts[i], parts[i + 1]});
      if (it != ranks_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = i;
      }
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    const std::string first = parts[best];
    const std::string second = parts[best + 1];
    std::vector<std::string> merged;
    for (std::size_t i = 0; i < parts.size();) {
      if (i + 1 < parts.size() && parts[i] == first && parts[i + 1] == second) {
        merged.push_back(first + second);
        i += 2;
      } else {
        merged.push_back(parts[i]);
        ++i;
      }
    }
    parts = std::move(merged);
  }
  return parts;
}

std::vector<int64_t> BpeTokenizer::encode_content(const std::string& text) const {
  std::vector<int64_t> ids;
  for (const auto& word : pre_tokenize(text)) {
    if (auto it = vocab_.find(word); it != vocab_.end() && (it->second == bos_ || it->second == eos_)) {
      ids.push_back(it->second);
      continue;
    }
    for (const auto& piece : bpe(word)) {
      auto it = vocab_.find(piece);
      if (it == vocab_.end()) throw IntegrityError("BPE piece missing from vocabulary: " + piece);
      ids.push_back(it->second);
    }
  }
  return ids;
}

HashTokenizer::HashTokenizer(int64_t vocab_size, int context_length)
    : Tokenizer(context_length), vocab_size_(vocab_size) {
  if (vocab_size < 16) throw ValidationError("hash tokenizer vocabulary too small");
}

std::vector<int64_t> HashTokenizer::encode_content(const std::string& text) const {
  std::vector<int64_t> ids;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    ids.push_back(static_cast<int64_t>(fnv1a64(word) % static_cast<std::uint64_t>(vocab_size_ - 2)));
    word.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      if (!std::isspace(c)) {
        word.push_back(static_cast<char>(c));
        flush();
      }
    }
  }
  flush();
  return ids;
}

}  // namespace realdesc
