#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace realdesc {

class TextGenerator;

/// Case and spacing variants of a class name: the original, lowercase and
/// titlecase forms; space/hyphen/underscore/concatenated joins; naive plurals;
/// every contiguous sub-span of two or more words; and the head (last) word.
/// Deduplicated, original order of generation preserved.
std::vector<std::string> base_name_variants(const std::string& class_name);

/// Finds class-name occurrences in free text.
///
/// Matching is case-insensitive, bounded by non-alphanumeric characters on
/// both sides ("cardinal" does not fire inside "cardinality"), and accepts any
/// run of spaces, hyphens or underscores between the words of a multi-word
/// variant. Overlaps resolve leftmost-longest. Variants equal to the
/// placeholder (or its plural) are never matched.
class NameMatcher {
 public:
  struct Match {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::string variant;
  };

  explicit NameMatcher(const std::string& class_name, const std::string& placeholder = {});

  std::vector<Match> find_all(std::string_view text) const;
  bool contains(std::string_view text) const { return !find_all(text).empty(); }
  const std::vector<std::string>& variants() const { return variants_; }

 private:
  struct Pattern {
    std::vector<std::string> words;  // lowercased
    std::string variant;
  };

  std::size_t match_at(std::string_view text, std::size_t pos, const Pattern& p) const;

  std::vector<std::string> variants_;
  std::vector<Pattern> patterns_;
};

/// Removes a class name from a description.
///
/// Pass 1 (only with a rewriter) asks a text generator to substitute the
/// placeholder for the object name. Pass 2 always runs: every variant
/// occurrence is replaced with the placeholder, longest first, then "a"/"an"
/// before the placeholder is made to agree with it and adjacent duplicate
/// placeholders collapse into one.
std::string filter_name(const std::string& class_name, const std::string& description, const std::string& placeholder,
                        TextGenerator* rewriter = nullptr);

}  // namespace realdesc
