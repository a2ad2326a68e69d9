#include "styleaug/data/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>

#include "styleaug/error.hpp"

namespace styleaug::data {

namespace fs = std::filesystem;

std::vector<fs::path> list_images(const fs::path& dir) {
  static const std::vector<std::string> exts = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".tif", ".tiff"};
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (std::find(exts.begin(), exts.end(), ext) != exts.end()) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<std::vector<std::uint8_t>> read_image_rgb(const fs::path& path, std::size_t res) {
  cv::Mat img;
  try {
    img = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception&) {
    return std::nullopt;
  }
  if (img.empty()) return std::nullopt;
  const double scale = static_cast<double>(res) / std::min(img.rows, img.cols);
  const int nh = std::max(static_cast<int>(res), static_cast<int>(std::lround(img.rows * scale)));
  const int nw = std::max(static_cast<int>(res), static_cast<int>(std::lround(img.cols * scale)));
  cv::Mat resized;
  if (nh != img.rows || nw != img.cols) {
    cv::resize(img, resized, cv::Size(nw, nh), 0, 0, scale < 1.0 ? cv::INTER_AREA : cv::INTER_LINEAR);
  } else {
    resized = img;
  }
  const int y0 = (nh - static_cast<int>(res)) / 2;
  const int x0 = (nw - static_cast<int>(res)) / 2;
  cv::Mat crop = resized(cv::Rect(x0, y0, static_cast<int>(res), static_cast<int>(res)));
  std::vector<std::uint8_t> chw(3 * res * res);
  for (std::size_t y = 0; y < res; ++y) {
    const auto* row = crop.ptr<cv::Vec3b>(static_cast<int>(y));
    for (std::size_t x = 0; x < res; ++x) {
      // OpenCV stores BGR.
      for (std::size_t c = 0; c < 3; ++c) chw[(c * res + y) * res + x] = row[x][2 - c];
    }
  }
  return chw;
}

std::vector<std::uint8_t> to_bytes(const Tensor& images01, std::size_t index) {
  auto s = images01.sample(index);
  std::vector<std::uint8_t> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const float v = std::clamp(s[i], 0.0f, 1.0f);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

void write_png(const fs::path& path, const std::vector<std::uint8_t>& chw, std::size_t h, std::size_t w) {
  if (chw.size() != 3 * h * w) throw ShapeError("write_png: buffer does not match " + std::to_string(h) + "x" + std::to_string(w));
  cv::Mat img(static_cast<int>(h), static_cast<int>(w), CV_8UC3);
  for (std::size_t y = 0; y < h; ++y) {
    auto* row = img.ptr<cv::Vec3b>(static_cast<int>(y));
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) row[x][2 - c] = chw[(c * h + y) * w + x];
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw Error("cannot write image " + path.string());
}

}  // namespace styleaug::data
