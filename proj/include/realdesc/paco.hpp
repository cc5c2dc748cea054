#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "realdesc/scorer.hpp"

namespace realdesc {

enum class AttributeType { kMaterial, kColor, kPatternMarking, kReflectance };

std::string to_string(AttributeType type);
AttributeType parse_attribute_type(const std::string& text);
/// Surface word used in prompts, read from assets/paco/attribute_phrases.json.
std::string attribute_type_phrase(AttributeType type);

struct PacoRecord {
  std::string image_ref;
  std::string object;
  std::string part;
  AttributeType attribute_type = AttributeType::kColor;
  std::vector<std::string> positive_values;
  std::vector<std::string> candidate_values;

  std::size_t k() const { return positive_values.size(); }
  nlohmann::json to_json() const;
  static PacoRecord from_json(const nlohmann::json& j);
};

/// "The {part} of the {object} has {value} {type phrase}".
std::string paco_prompt(const PacoRecord& record, const std::string& value);

/// Indices of the k best candidates for the given per-candidate scores,
/// best first; ties keep vocabulary order.
std::vector<std::size_t> top_k_indices(const std::vector<double>& scores, std::size_t k);
/// The |positive_values| best candidate values under the scorer.
std::vector<std::string> paco_predict(const std::string& image_ref, const PacoRecord& record,
                                      const ImageTextScorer& scorer);

enum class PacoProtocol { kFilterMultival, kTopkDecompose };

std::string to_string(PacoProtocol protocol);
PacoProtocol parse_protocol(const std::string& text);

struct PacoReport {
  PacoProtocol protocol = PacoProtocol::kFilterMultival;
  double mean_accuracy = 0.0;
  std::map<std::string, double> per_attribute_type;
  std::map<std::string, std::size_t> per_attribute_type_count;
  std::size_t n_instances = 0;
  std::size_t n_filtered = 0;

  nlohmann::ordered_json to_json() const;
  /// protocol,attribute_type,n_instances,accuracy rows plus an "all" row.
  std::string to_csv() const;
};

/// Per-instance score: exact top-1 match (filter_multival, multi-valued
/// records dropped) or |top-k ∩ positives| / k (topk_decompose).
PacoReport paco_evaluate(const std::vector<PacoRecord>& records, const ImageTextScorer& scorer, PacoProtocol protocol);

struct PacoIngestOptions {
  /// Parts with a mask area below this many pixels are dropped.
  double min_part_area = 32.0 * 32.0;
  /// Directory prefixed to image file names.
  std::filesystem::path image_root;
};

/// Reads PACO's COCO-style annotation JSON (images, annotations,
/// categories named "object:part", attributes with a type) into one record
/// per (image, part, attribute type). Comma-joined values are split into
/// separate positives.
std::vector<PacoRecord> load_paco_annotations(const std::filesystem::path& path, const PacoIngestOptions& options = {});

std::vector<PacoRecord> load_paco_records(const std::filesystem::path& jsonl);
void save_paco_records(const std::filesystem::path& jsonl, const std::vector<PacoRecord>& records);

}  // namespace realdesc
