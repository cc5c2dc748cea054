#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace realdesc {

inline constexpr int kMaxContextLength = 77;

/// Token ids of one sentence, begin/end sentinels included.
struct TextTokenSeq {
  std::vector<int64_t> ids;
  bool truncated = false;
};

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  /// Tokenizes and caps the result at context_length() tokens. Over-long
  /// input keeps its prefix and re-terminates with the end sentinel.
  TextTokenSeq encode(const std::string& text) const;

  /// Content tokens only, no sentinels, no truncation.
  virtual std::vector<int64_t> encode_content(const std::string& text) const = 0;

  virtual int64_t bos_id() const = 0;
  virtual int64_t eos_id() const = 0;
  virtual int64_t vocab_size() const = 0;
  virtual std::string name() const = 0;
  int context_length() const { return context_length_; }

 protected:
  explicit Tokenizer(int context_length);

 private:
  int context_length_;
};

/// Byte-level BPE as shipped with CLIP checkpoints (vocab.json + merges.txt).
class BpeTokenizer final : public Tokenizer {
 public:
  BpeTokenizer(std::unordered_map<std::string, int64_t> vocab, std::vector<std::pair<std::string, std::string>> merges,
               int context_length = kMaxContextLength);
  static std::unique_ptr<BpeTokenizer> from_files(const std::filesystem::path& vocab_json,
                                                  const std::filesystem::path& merges_txt,
                                                  int context_length = kMaxContextLength);

  std::vector<int64_t> encode_content(const std::string& text) const override;
  int64_t bos_id() const override { return bos_; }
  int64_t eos_id() const override { return eos_; }
  int64_t vocab_size() const override { return static_cast<int64_t>(vocab_.size()); }
  std::string name() const override { return "clip-bpe"; }

  /// Splits lowercased, whitespace-collapsed text the way CLIP's
  /// pre-tokenizer regex does: contractions, letter runs, single digits,
  /// and runs of other symbols.
  static std::vector<std::string> pre_tokenize(const std::string& text);

 private:
  std::vector<std::string> bpe(const std::string& word) const;

  std::unordered_map<std::string, int64_t> vocab_;
  std::map<std::pair<std::string, std::string>, int> ranks_;
  std::vector<std::string> byte_encoder_;
  int64_t bos_;
  int64_t eos_;
};

/// Word-level tokenizer that hashes lowercased words into a fixed vocabulary.
/// Used by the built-in desk-scale checkpoints that ship without BPE assets.
class HashTokenizer final : public Tokenizer {
 public:
  explicit HashTokenizer(int64_t vocab_size, int context_length = kMaxContextLength);

  std::vector<int64_t> encode_content(const std::string& text) const override;
  int64_t bos_id() const override { return vocab_size_ - 2; }
  int64_t eos_id() const override { return vocab_size_ - 1; }
  int64_t vocab_size() const override { return vocab_size_; }
  std::string name() const override { return "word-hash"; }

 private:
  int64_t vocab_size_;
};

}  // namespace realdesc
