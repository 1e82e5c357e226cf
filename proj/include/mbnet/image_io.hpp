#pragma once

#include <torch/torch.h>

#include <filesystem>

namespace mbnet {

/// Read an 8- or 16-bit PNG as a [1,3,H,W] float tensor in [0,1] (RGB order).
/// Grayscale inputs are replicated, alpha is dropped.
torch::Tensor read_rgb(const std::filesystem::path& path);

/// Read an 8- or 16-bit PNG as a [1,1,H,W] float tensor in [0,1]. Colour
/// files contribute their first (red) channel.
torch::Tensor read_gray(const std::filesystem::path& path);

/// Write a [1,3,H,W] or [3,H,W] tensor as 8-bit RGB PNG. Values are clamped
/// to [0,1], scaled by 255 and rounded half away from zero.
void write_rgb8(const std::filesystem::path& path, const torch::Tensor& image);

/// Write a [1,1,H,W] tensor as 8- or 16-bit grayscale PNG.
void write_gray(const std::filesystem::path& path, const torch::Tensor& image, bool sixteen_bit);

/// Quantise [0,1] floats to 8-bit with round-half-away: floor(clamp(v)*255 + 0.5).
torch::Tensor quantize_u8(const torch::Tensor& image);

}  // namespace mbnet
