#include "realdesc/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "realdesc/errors.hpp"

namespace realdesc {
namespace {

ImageTensor from_mat(const cv::Mat& rgb, const Preprocessing& prep) {
  const int h = rgb.rows;
  const int w = rgb.cols;
  const double scale = static_cast<double>(prep.resize_side) / std::min(h, w);
  const int nh = std::max<int>(static_cast<int>(prep.resize_side), static_cast<int>(std::lround(h * scale)));
  const int nw = std::max<int>(static_cast<int>(prep.resize_side), static_cast<int>(std::lround(w * scale)));
  cv::Mat resized;
  cv::resize(rgb, resized, cv::Size(nw, nh), 0, 0, cv::INTER_CUBIC);
  const int crop = static_cast<int>(prep.crop_side);
  if (crop > nh || crop > nw) throw ShapeError("crop larger than resized image");
  const int top = (nh - crop) / 2;
  const int left = (nw - crop) / 2;
  cv::Mat cropped = resized(cv::Rect(left, top, crop, crop)).clone();

  auto t = torch::from_blob(cropped.data, {crop, crop, 3}, torch::kUInt8).clone();
  t = t.permute({2, 0, 1}).to(torch::kFloat32).div_(255.0);
  auto mean = torch::tensor({prep.mean[0], prep.mean[1], prep.mean[2]}).view({3, 1, 1});
  auto std = torch::tensor({prep.std[0], prep.std[1], prep.std[2]}).view({3, 1, 1});
  return ImageTensor((t - mean) / std);
}

}  // namespace

Preprocessing with_side(const Preprocessing& prep, int64_t side) {
  Preprocessing p = prep;
  p.resize_side = prep.resize_side * side / prep.crop_side;
  p.crop_side = side;
  return p;
}

ImageTensor load_image(const std::filesystem::path& path, const Preprocessing& prep) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("cannot decode image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return from_mat(rgb, prep);
}

ImageTensor preprocess_rgb(std::span<const std::uint8_t> rgb, int height, int width, const Preprocessing& prep) {
  if (rgb.size() != static_cast<std::size_t>(height) * width * 3) throw ShapeError("RGB buffer size mismatch");
  cv::Mat m(height, width, CV_8UC3, const_cast<std::uint8_t*>(rgb.data()));
  return from_mat(m, prep);
}

void save_rgb(const std::filesystem::path& path, std::span<const std::uint8_t> rgb, int height, int width) {
  if (rgb.size() != static_cast<std::size_t>(height) * width * 3) throw ShapeError("RGB buffer size mismatch");
  cv::Mat m(height, width, CV_8UC3, const_cast<std::uint8_t*>(rgb.data()));
  cv::Mat bgr;
  cv::cvtColor(m, bgr, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) throw DataError("cannot write image " + path.string());
}

}  // namespace realdesc
