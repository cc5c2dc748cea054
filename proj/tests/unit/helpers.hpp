#pragma once

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "realdesc/backbone.hpp"
#include "realdesc/util.hpp"

namespace testutil {

inline realdesc::Backbone& tiny() {
  static realdesc::Backbone backbone = realdesc::Backbone::load("tiny");
  return backbone;
}

/// Fresh copy, for tests that mutate parameters.
inline realdesc::Backbone fresh_tiny() { return realdesc::Backbone::load("tiny"); }

inline realdesc::ImageTensor random_image(int64_t side, std::uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return realdesc::ImageTensor(torch::randn({3, side, side}, gen));
}

inline torch::Tensor randn(std::vector<int64_t> shape, std::uint64_t seed, torch::Dtype dtype = torch::kFloat32) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::randn(shape, gen, torch::TensorOptions().dtype(dtype));
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("realdesc_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path data_dir() { return std::filesystem::path(REALDESC_TEST_DATA); }

/// Plain cosine similarity in double precision.
inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline std::vector<double> row(const torch::Tensor& t, int64_t i) {
  auto r = t[i].to(torch::kFloat64).contiguous();
  return std::vector<double>(r.data_ptr<double>(), r.data_ptr<double>() + r.numel());
}

inline double max_rel_diff(const torch::Tensor& a, const torch::Tensor& b) {
  auto da = a.to(torch::kFloat64);
  auto db = b.to(torch::kFloat64);
  return ((da - db).abs().max() / db.abs().max().clamp_min(1e-30)).item<double>();
}

}  // namespace testutil
