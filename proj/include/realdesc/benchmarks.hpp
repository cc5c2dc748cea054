#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "realdesc/zeroshot.hpp"

namespace realdesc {

enum class BenchmarkName { kCub, kFlowers102, kCars196, kFood101, kDogs120, kOxfordPets };

std::string to_string(BenchmarkName name);
/// ValidationError listing the six valid names on anything else.
BenchmarkName parse_benchmark(const std::string& text);
const std::vector<BenchmarkName>& all_benchmarks();
std::size_t expected_class_count(BenchmarkName name);

struct BenchmarkSpec {
  BenchmarkName name = BenchmarkName::kCub;
  std::filesystem::path root;
  std::string split = "test";
  std::vector<std::string> class_list;
  std::map<std::string, std::string> supercategory_map;

  const std::string& placeholder(const std::string& class_name) const;
};

/// Class list and supercategory map from the versioned assets.
BenchmarkSpec load_benchmark_spec(BenchmarkName name, const std::filesystem::path& root = {});

/// Union of the six class lists, used to exclude test classes from training.
std::vector<std::string> all_benchmark_classes();

struct ImageEntry {
  std::filesystem::path path;
  std::string label;
};

class ImageListSource final : public LabeledImageSource {
 public:
  explicit ImageListSource(std::vector<ImageEntry> entries) : entries_(std::move(entries)) {}
  std::size_t size() const override { return entries_.size(); }
  std::string label(std::size_t i) const override { return entries_[i].label; }
  std::string key(std::size_t i) const override { return entries_[i].path.string(); }
  ImageTensor load(std::size_t i, const Preprocessing& prep) const override;
  const std::vector<ImageEntry>& entries() const { return entries_; }

 private:
  std::vector<ImageEntry> entries_;
};

struct SplitOptions {
  /// Keep at most this many images per class (first in file order).
  std::optional<std::size_t> max_per_class;
};

/// Test split of a benchmark read from its published directory layout.
/// Missing files raise DataError naming the expected path.
ImageListSource load_test_split(const BenchmarkSpec& spec, const SplitOptions& options = {});

/// <root>/<class>/<images>, classes in sorted directory order.
ImageListSource load_image_folder(const std::filesystem::path& root, const SplitOptions& options = {});

}  // namespace realdesc
