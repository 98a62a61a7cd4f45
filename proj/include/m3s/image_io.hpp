#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "m3s/tensor.hpp"

namespace m3s {

// 8-bit value -> [-1, 1] and back (rounded, saturated).
double pixel_to_unit(std::uint8_t v);
std::uint8_t unit_to_pixel(double v);

// Reads a PNG (grayscale or colour) as a 1-channel luminance image in [-1, 1].
Tensor read_png_gray(const std::filesystem::path& path);

// Encodes a 1- or 3-channel image in [-1, 1] as an 8-bit PNG.
std::vector<std::uint8_t> encode_png(const Tensor& image);
Tensor decode_png_gray(const std::vector<std::uint8_t>& bytes);

// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
void write_png(const std::filesystem::path& path, const Tensor& image);

// Area-weighted resampling of every channel to height x width.
Tensor resize_image(const Tensor& image, int height, int width);

// Lays panels out left to right with `gap` pixels of white between them.
Tensor contact_sheet(const std::vector<Tensor>& panels, int gap = 2);

}  // namespace m3s
