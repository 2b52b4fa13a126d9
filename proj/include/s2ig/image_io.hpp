#pragma once

#include <torch/torch.h>

#include <filesystem>

namespace s2ig {

// Images are float tensors [3, H, W] (RGB, channels-first) with values in
// [-1, 1]; batches are [N, 3, H, W].

torch::Tensor read_image(const std::filesystem::path& path);

// Writes an 8-bit RGB PNG. Values are clamped to [-1, 1].
void write_png(const std::filesystem::path& path, const torch::Tensor& image);

// Resizes a batch to size x size. Integer downscaling uses box averaging so
// every scale is a view of the same source; other ratios are bilinear.
torch::Tensor resize_images(const torch::Tensor& batch, int64_t size);

// Tiles a batch into a grid with `columns` columns.
torch::Tensor make_grid(const torch::Tensor& batch, int64_t columns);

}  // namespace s2ig
