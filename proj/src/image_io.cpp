#include "s2ig/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <vector>

#include "s2ig/error.hpp"

namespace s2ig {

torch::Tensor read_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot decode image " + path.string());
  if (!bgr.isContinuous()) bgr = bgr.clone();
  auto hwc = torch::from_blob(bgr.data, {bgr.rows, bgr.cols, 3}, torch::kUInt8).clone();
  hwc = hwc.flip({2});  // BGR -> RGB
  return hwc.permute({2, 0, 1}).to(torch::kFloat32).div(127.5).sub(1.0).contiguous();
}

void write_png(const std::filesystem::path& path, const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) {
    throw ValidationError("write_png: expected a [3, H, W] tensor");
  }
  auto hwc = image.detach()
                 .to(torch::kFloat32)
                 .clamp(-1.0, 1.0)
                 .add(1.0)
                 .mul(127.5)
                 .round()
                 .to(torch::kUInt8)
                 .flip({0})  // RGB -> BGR
                 .permute({1, 2, 0})
                 .contiguous();
  cv::Mat mat(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr());
  const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6};
  if (!cv::imwrite(path.string(), mat, params)) throw IoError("cannot write " + path.string());
}

torch::Tensor resize_images(const torch::Tensor& batch, int64_t size) {
  namespace F = torch::nn::functional;
  const int64_t h = batch.size(-2);
  const int64_t w = batch.size(-1);
  if (h == size && w == size) return batch;
  if (h == w && h > size && h % size == 0) {
    const int64_t k = h / size;
    return F::avg_pool2d(batch, F::AvgPool2dFuncOptions(k).stride(k));
  }
  return F::interpolate(batch, F::InterpolateFuncOptions()
                                   .size(std::vector<int64_t>{size, size})
                                   .mode(torch::kBilinear)
                                   .align_corners(false));
}

torch::Tensor make_grid(const torch::Tensor& batch, int64_t columns) {
  const int64_t n = batch.size(0);
  const int64_t h = batch.size(2);
  const int64_t w = batch.size(3);
  const int64_t cols = std::max<int64_t>(1, std::min(columns, n));
  const int64_t rows = (n + cols - 1) / cols;
  auto grid = torch::full({3, rows * h, cols * w}, -1.0, batch.options());
  for (int64_t i = 0; i < n; ++i) {
    grid.narrow(1, (i / cols) * h, h).narrow(2, (i % cols) * w, w).copy_(batch[i]);
  }
  return grid;
}

}  // namespace s2ig
