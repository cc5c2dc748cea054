#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "realdesc/llm.hpp"

namespace realdesc {

enum class DescriptionStyle { kOxford, kColumbia };

std::string to_string(DescriptionStyle style);
/// Throws ValidationError for anything but "oxford" or "columbia".
DescriptionStyle parse_style(const std::string& text);

struct ClassDescriptions {
  std::string class_name;
  std::string placeholder;
  DescriptionStyle style = DescriptionStyle::kOxford;
  std::vector<std::string> sentences;
  /// Empty until strip_names has run.
  std::vector<std::string> name_free_sentences;

  bool filtered() const { return !name_free_sentences.empty() || sentences.empty(); }
};

struct DescriptionMetadata {
  std::string dataset;
  DescriptionStyle style = DescriptionStyle::kOxford;
  std::string generator;
  std::string timestamp;
  int k = 0;
};

/// Per-class description sets for one benchmark, in class-list order.
class DescriptionFile {
 public:
  DescriptionMetadata metadata;

  const std::vector<ClassDescriptions>& classes() const { return classes_; }
  std::vector<ClassDescriptions>& classes() { return classes_; }
  std::vector<std::string> class_names() const;
  std::size_t size() const { return classes_.size(); }
  bool empty() const { return classes_.empty(); }

  /// Inserts or replaces the entry for c.class_name.
  void put(ClassDescriptions c);
  const ClassDescriptions* find(const std::string& class_name) const;
  const ClassDescriptions& at(const std::string& class_name) const;

  /// True once every class carries name-free sentences.
  bool filtered() const;

  nlohmann::ordered_json to_json() const;
  static DescriptionFile from_json(const nlohmann::ordered_json& j);
  void save(const std::filesystem::path& path) const;
  static DescriptionFile load(const std::filesystem::path& path);
  /// Hash of the canonical serialization; keys prototype caches.
  std::string content_hash() const;

  /// DataError when the class set differs from `expected`, naming the
  /// missing and unexpected classes.
  void check_class_set(const std::vector<std::string>& expected) const;

 private:
  std::vector<ClassDescriptions> classes_;
  std::map<std::string, std::size_t> index_;
};

struct GenerationOptions {
  std::string dataset;
  /// Super-category per class; classes absent here use default_placeholder.
  std::map<std::string, std::string> placeholders;
  std::string default_placeholder = "object";
  int max_requeries = 3;
  int max_concurrency = 4;
  /// Where completed classes are written if the provider gives up midway.
  /// An existing file at this path is resumed from.
  std::optional<std::filesystem::path> checkpoint;
  std::shared_ptr<TranscriptLog> log;
};

/// Splits an LLM answer into candidate sentences, dropping list markers.
std::vector<std::string> parse_response_lines(const std::string& response);

/// Turns a Columbia-style descriptor ("has red wings") into a sentence that
/// names the class ("A Cardinal has red wings.").
std::string compose_columbia(const std::string& class_name, const std::string& descriptor);

/// Asks `provider` for k sentences per class in the given style. Sentences
/// that do not name the class are discarded and the class is re-queried.
DescriptionFile generate_descriptions(const std::vector<std::string>& classes, DescriptionStyle style, int k,
                                      TextGenerator& provider, const GenerationOptions& options = {});

/// Fills name_free_sentences for every class via filter_name.
void strip_names(DescriptionFile& file, TextGenerator* rewriter = nullptr);

struct VerificationReport {
  struct Hit {
    std::string class_name;
    std::size_t sentence_index = 0;
    std::string sentence;
    std::string variant;
    /// Set for cross-class flags: the class whose name appeared.
    std::string other_class;
  };

  std::vector<Hit> residuals;
  /// Informational; a sentence naming a different class does not fail certification.
  std::vector<Hit> cross_class;
  std::size_t sentences_checked = 0;

  bool certified() const { return residuals.empty(); }
  nlohmann::ordered_json to_json() const;
};

/// Scans every name-free sentence for variants of its own class name, and
/// for names of the other classes. PreconditionError on an unfiltered file.
VerificationReport verify_name_free(const DescriptionFile& file, bool cross_class = true);

}  // namespace realdesc
