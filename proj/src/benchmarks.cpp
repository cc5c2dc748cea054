#include "realdesc/benchmarks.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "realdesc/errors.hpp"
#include "realdesc/image_io.hpp"
#include "realdesc/mat_reader.hpp"
#include "realdesc/util.hpp"

namespace realdesc {

namespace fs = std::filesystem;

namespace {

const std::vector<std::pair<BenchmarkName, std::string>>& names() {
  static const std::vector<std::pair<BenchmarkName, std::string>> n = {
      {BenchmarkName::kCub, "cub"},         {BenchmarkName::kFlowers102, "flowers102"},
      {BenchmarkName::kCars196, "cars196"}, {BenchmarkName::kFood101, "food101"},
      {BenchmarkName::kDogs120, "dogs120"}, {BenchmarkName::kOxfordPets, "oxfordpets"}};
  return n;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing dataset file: " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string f;
  while (in >> f) out.push_back(f);
  return out;
}

const std::string& class_at(const BenchmarkSpec& spec, long one_based, const std::string& where) {
  if (one_based < 1 || static_cast<std::size_t>(one_based) > spec.class_list.size()) {
    throw DataError("class id " + std::to_string(one_based) + " out of range in " + where);
  }
  return spec.class_list[static_cast<std::size_t>(one_based - 1)];
}

std::map<std::string, mat::Value> read_mat(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("missing dataset file: " + path.string());
  return mat::read(path);
}

const mat::Value& mat_var(const std::map<std::string, mat::Value>& vars, const std::string& name, const fs::path& path) {
  auto it = vars.find(name);
  if (it == vars.end()) throw DataError("variable '" + name + "' not found in " + path.string());
  return it->second;
}

std::vector<ImageEntry> pets_split(const BenchmarkSpec& spec) {
  const auto list = spec.root / "annotations" / "test.txt";
  std::vector<ImageEntry> out;
  for (const auto& line : read_lines(list)) {
    if (line[0] == '#') continue;
    const auto f = fields(line);
    if (f.size() < 2) throw DataError("malformed line in " + list.string() + ": " + line);
    out.push_back({spec.root / "images" / (f[0] + ".jpg"), class_at(spec, std::stol(f[1]), list.string())});
  }
  return out;
}

std::vector<ImageEntry> cub_split(const BenchmarkSpec& spec) {
  std::map<long, std::string> paths;
  std::map<long, long> labels;
  std::set<long> test;
  for (const auto& line : read_lines(spec.root / "images.txt")) {
    const auto f = fields(line);
    if (f.size() >= 2) paths[std::stol(f[0])] = f[1];
  }
  for (const auto& line : read_lines(spec.root / "image_class_labels.txt")) {
    const auto f = fields(line);
    if (f.size() >= 2) labels[std::stol(f[0])] = std::stol(f[1]);
  }
  for (const auto& line : read_lines(spec.root / "train_test_split.txt")) {
    const auto f = fields(line);
    if (f.size() >= 2 && f[1] == "0") test.insert(std::stol(f[0]));
  }
  std::vector<ImageEntry> out;
  for (long id : test) {
    auto p = paths.find(id);
    auto l = labels.find(id);
    if (p == paths.end() || l == labels.end()) throw DataError("image id " + std::to_string(id) + " incomplete in CUB metadata");
    out.push_back({spec.root / "images" / p->second, class_at(spec, l->second, "image_class_labels.txt")});
  }
  return out;
}

std::vector<ImageEntry> food_split(const BenchmarkSpec& spec) {
  const auto classes = read_lines(spec.root / "meta" / "classes.txt");
  if (classes.size() != spec.class_list.size()) throw DataError("food101 meta/classes.txt has an unexpected class count");
  std::map<std::string, std::string> by_dir;
  for (std::size_t i = 0; i < classes.size(); ++i) by_dir[classes[i]] = spec.class_list[i];
  std::vector<ImageEntry> out;
  for (const auto& line : read_lines(spec.root / "meta" / "test.txt")) {
    const auto slash = line.find('/');
    auto it = by_dir.find(line.substr(0, slash));
    if (slash == std::string::npos || it == by_dir.end()) throw DataError("unknown food101 entry: " + line);
    out.push_back({spec.root / "images" / (line + ".jpg"), it->second});
  }
  return out;
}

std::vector<ImageEntry> dogs_split(const BenchmarkSpec& spec) {
  const auto path = spec.root / "test_list.mat";
  const auto vars = read_mat(path);
  const auto files = mat_var(vars, "file_list", path).strings();
  const auto& labels = mat_var(vars, "labels", path).numbers;
  if (files.size() != labels.size()) throw DataError("file_list and labels differ in length in " + path.string());
  std::vector<ImageEntry> out;
  for (std::size_t i = 0; i < files.size(); ++i) {
    out.push_back({spec.root / "Images" / files[i], class_at(spec, static_cast<long>(labels[i]), path.string())});
  }
  return out;
}

std::vector<ImageEntry> flowers_split(const BenchmarkSpec& spec) {
  const auto lpath = spec.root / "imagelabels.mat";
  const auto spath = spec.root / "setid.mat";
  const auto labels = mat_var(read_mat(lpath), "labels", lpath).numbers;
  const auto ids = mat_var(read_mat(spath), "tstid", spath).numbers;
  std::vector<ImageEntry> out;
  for (double d : ids) {
    const auto id = static_cast<long>(d);
    if (id < 1 || static_cast<std::size_t>(id) > labels.size()) throw DataError("tstid entry out of range: " + std::to_string(id));
    char name[32];
    std::snprintf(name, sizeof name, "image_%05ld.jpg", id);
    out.push_back({spec.root / "jpg" / name, class_at(spec, static_cast<long>(labels[static_cast<std::size_t>(id - 1)]), lpath.string())});
  }
  return out;
}

std::vector<ImageEntry> cars_split(const BenchmarkSpec& spec) {
  const auto path = spec.root / "cars_test_annos_withlabels.mat";
  const auto vars = read_mat(path);
  const auto& ann = mat_var(vars, "annotations", path);
  if (ann.kind != mat::Value::Kind::kStruct) throw DataError("annotations is not a struct array in " + path.string());
  std::vector<ImageEntry> out;
  for (std::size_t i = 0; i < ann.elements.size(); ++i) {
    const auto fname = ann.field("fname", i).text;
    const auto cls = static_cast<long>(ann.field("class", i).scalar());
    out.push_back({spec.root / "cars_test" / fname, class_at(spec, cls, path.string())});
  }
  return out;
}

std::vector<ImageEntry> cap_per_class(std::vector<ImageEntry> entries, const SplitOptions& options) {
  if (!options.max_per_class) return entries;
  std::map<std::string, std::size_t> seen;
  std::vector<ImageEntry> out;
  for (auto& e : entries) {
    if (seen[e.label]++ < *options.max_per_class) out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

std::string to_string(BenchmarkName name) {
  for (const auto& [n, s] : names()) {
    if (n == name) return s;
  }
  return "unknown";
}

BenchmarkName parse_benchmark(const std::string& text) {
  const auto key = to_lower(text);
  std::vector<std::string> valid;
  for (const auto& [n, s] : names()) {
    if (s == key) return n;
    valid.push_back(s);
  }
  throw ValidationError("unknown dataset '" + text + "'; valid names: " + join(valid, ", "));
}

const std::vector<BenchmarkName>& all_benchmarks() {
  static const std::vector<BenchmarkName> all = [] {
    std::vector<BenchmarkName> v;
    for (const auto& [n, s] : names()) v.push_back(n);
    return v;
  }();
  return all;
}

std::size_t expected_class_count(BenchmarkName name) {
  switch (name) {
    case BenchmarkName::kCub: return 200;
    case BenchmarkName::kFlowers102: return 102;
    case BenchmarkName::kCars196: return 196;
    case BenchmarkName::kFood101: return 101;
    case BenchmarkName::kDogs120: return 120;
    case BenchmarkName::kOxfordPets: return 37;
  }
  return 0;
}

const std::string& BenchmarkSpec::placeholder(const std::string& class_name) const {
  auto it = supercategory_map.find(class_name);
  if (it == supercategory_map.end()) throw ValidationError("no placeholder for class '" + class_name + "'");
  return it->second;
}

BenchmarkSpec load_benchmark_spec(BenchmarkName name, const fs::path& root) {
  BenchmarkSpec spec;
  spec.name = name;
  spec.root = root;
  const auto dir = asset_dir() / "benchmarks";
  spec.class_list = read_lines(dir / (to_string(name) + "_classes.txt"));
  if (spec.class_list.size() != expected_class_count(name)) {
    throw DataError("class list for " + to_string(name) + " has " + std::to_string(spec.class_list.size()) +
                    " entries, expected " + std::to_string(expected_class_count(name)));
  }
  const auto sup = nlohmann::json::parse(read_file(dir / "supercategories.json"));
  const auto& ph = sup.at("placeholders");
  if (!ph.contains(to_string(name))) throw DataError("no supercategory for " + to_string(name));
  const auto placeholder = ph.at(to_string(name)).get<std::string>();
  for (const auto& c : spec.class_list) spec.supercategory_map[c] = placeholder;
  return spec;
}

std::vector<std::string> all_benchmark_classes() {
  std::vector<std::string> out;
  for (auto b : all_benchmarks()) {
    const auto spec = load_benchmark_spec(b);
    out.insert(out.end(), spec.class_list.begin(), spec.class_list.end());
  }
  return out;
}

ImageTensor ImageListSource::load(std::size_t i, const Preprocessing& prep) const {
  return load_image(entries_.at(i).path, prep);
}

ImageListSource load_test_split(const BenchmarkSpec& spec, const SplitOptions& options) {
  if (spec.root.empty()) throw ConfigError("no dataset root configured for " + to_string(spec.name));
  if (!fs::exists(spec.root)) throw DataError("dataset root does not exist: " + spec.root.string());
  std::vector<ImageEntry> entries;
  switch (spec.name) {
    case BenchmarkName::kOxfordPets: entries = pets_split(spec); break;
    case BenchmarkName::kCub: entries = cub_split(spec); break;
    case BenchmarkName::kFood101: entries = food_split(spec); break;
    case BenchmarkName::kDogs120: entries = dogs_split(spec); break;
    case BenchmarkName::kFlowers102: entries = flowers_split(spec); break;
    case BenchmarkName::kCars196: entries = cars_split(spec); break;
  }
  return ImageListSource(cap_per_class(std::move(entries), options));
}

ImageListSource load_image_folder(const fs::path& root, const SplitOptions& options) {
  if (!fs::is_directory(root)) throw DataError("image folder does not exist: " + root.string());
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) classes.push_back(e.path());
  }
  std::sort(classes.begin(), classes.end());
  std::vector<ImageEntry> entries;
  for (const auto& dir : classes) {
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(dir)) {
      const auto ext = to_lower(f.path().extension().string());
      if (f.is_regular_file() && (ext == ".jpg" || ext == ".jpeg" || ext == ".png" || ext == ".bmp")) files.push_back(f.path());
    }
    std::sort(files.begin(), files.end());
    for (auto& f : files) entries.push_back({std::move(f), dir.filename().string()});
  }
  return ImageListSource(cap_per_class(std::move(entries), options));
}

}  // namespace realdesc
