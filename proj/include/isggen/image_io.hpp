#pragma once

#include <filesystem>
#include <string>

#include "isggen/tensor.hpp"

namespace isg {

// Images are [3,H,W] tensors. Files hold 8-bit RGB; decoded values are in [0,1].
Tensor read_image(const std::filesystem::path& path);
std::string encode_png(const Tensor& rgb01);
void write_png(const std::filesystem::path& path, const Tensor& rgb01);

// Maps between the generator range [-1,1] and [0,1].
Tensor signed_to_unit(const Tensor& img);
Tensor unit_to_signed(const Tensor& img);

// Bilinear resample (half-pixel centers).
Tensor resize_bilinear(const Tensor& img, int height, int width);

// Raw float64 blob helpers for exact persistence of tensors.
void write_tensor_file(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor_file(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
// Writes through a temporary file and rename.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace isg
