#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "realdesc/llm.hpp"
#include "realdesc/scorer.hpp"

namespace realdesc {

enum class AttributeKind { kColor, kShape, kSize };

std::string to_string(AttributeKind kind);
AttributeKind parse_attribute_kind(const std::string& text);

inline constexpr std::size_t kProbeNegatives = 5;

struct ProbeRecord {
  std::string class_name;
  std::string element;
  AttributeKind kind = AttributeKind::kColor;
  std::string positive;
  std::vector<std::string> negatives;
  std::vector<std::string> image_set;

  /// Positive first, then the negatives.
  std::vector<std::string> candidates() const;
  nlohmann::json to_json() const;
  static ProbeRecord from_json(const nlohmann::json& j);
};

std::vector<ProbeRecord> load_probe_records(const std::filesystem::path& jsonl);
void save_probe_records(const std::filesystem::path& jsonl, const std::vector<ProbeRecord>& records);

struct ProbeCell {
  AttributeKind kind = AttributeKind::kColor;
  std::string element;
  int64_t n_trials = 0;
  int64_t n_correct = 0;

  double accuracy() const { return n_trials == 0 ? 0.0 : static_cast<double>(n_correct) / static_cast<double>(n_trials); }
};

struct ProbeReport {
  /// Ordered by kind, then by first appearance of the element.
  std::vector<ProbeCell> cells;

  /// Unweighted mean over the elements of one kind.
  double kind_average(AttributeKind kind) const;
  /// Unweighted mean over all cells.
  double overall() const;
  /// Type,Element,<label> rows with an Average row per type.
  std::string to_csv(const std::string& label = "accuracy") const;
  nlohmann::ordered_json to_json() const;
};

/// For every image of every record, the positive counts as recognized only
/// when it scores strictly above all five negatives.
ProbeReport probe_evaluate(const std::vector<ProbeRecord>& records, const ImageTextScorer& scorer);

struct ProbeGenerationOptions {
  std::string placeholder = "bird";
  std::uint64_t seed = 0;
  /// Images of each class, copied into the records.
  std::map<std::string, std::vector<std::string>> images;
  std::shared_ptr<TranscriptLog> log;
};

/// Contrast values per attribute kind, from assets/probe/values.json.
const std::vector<std::string>& probe_values(AttributeKind kind);
/// "A {placeholder} with {value} {element}".
std::string probe_sentence(const std::string& placeholder, const std::string& value, const std::string& element);

/// Asks `provider` for (kind, element, value) attributes of each class, keeps
/// those `validator` confirms, and pairs each with five negatives that swap
/// only the value.
std::vector<ProbeRecord> generate_probe_records(const std::vector<std::string>& classes, TextGenerator& provider,
                                                TextGenerator& validator, const ProbeGenerationOptions& options = {});

}  // namespace realdesc
