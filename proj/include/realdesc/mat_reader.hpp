#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace realdesc::mat {

/// One MATLAB array from a level-5 MAT-file. Numeric data is widened to
/// double and kept in MATLAB's column-major order.
struct Value {
  enum class Kind { kEmpty, kNumeric, kChar, kCell, kStruct };

  Kind kind = Kind::kEmpty;
  std::vector<int64_t> dims;
  std::vector<double> numbers;
  /// Char arrays: rows joined with '\n' when there is more than one row.
  std::string text;
  std::vector<Value> cells;
  std::vector<std::string> field_names;
  /// Struct arrays: elements[i][field].
  std::vector<std::map<std::string, Value>> elements;

  std::size_t numel() const;
  const Value& field(const std::string& name, std::size_t element = 0) const;
  /// Scalar numeric value.
  double scalar() const;
  /// Cell array of strings (or a single char array) as strings.
  std::vector<std::string> strings() const;
};

/// Reads every top-level variable, inflating compressed elements. Sparse and
/// function-handle arrays are skipped. Throws DataError on malformed input.
std::map<std::string, Value> read(const std::filesystem::path& path);
std::map<std::string, Value> parse(const std::string& bytes);

}  // namespace realdesc::mat
