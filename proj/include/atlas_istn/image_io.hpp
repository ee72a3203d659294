#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "atlas_istn/image.hpp"

namespace atlas_istn::io {

// 8-bit grayscale PNG.
void write_gray_png(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_gray_png(const std::filesystem::path& path);

// 8-bit indexed PNG with kLabelPalette. Reading returns raw palette indices;
// range validation is the caller's job.
void write_label_png(const std::filesystem::path& path, const LabelMap& labels);
// Same container without the class-id check; indices beyond the palette are
// written as-is (used to produce malformed fixtures).
void write_indexed_png_unchecked(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_label_png(const std::filesystem::path& path);

void write_rgb_png(const std::filesystem::path& path, const RgbImage& image);

std::uint32_t crc32_file(const std::filesystem::path& path);
std::uint32_t crc32_bytes(std::span<const std::uint8_t> bytes);

// Minimal NumPy .npy writer/reader for little-endian float32 C-order arrays.
void write_npy_f32(const std::filesystem::path& path, std::span<const float> values,
                   std::span<const std::int64_t> shape);
std::vector<float> read_npy_f32(const std::filesystem::path& path, std::vector<std::int64_t>* shape = nullptr);

}  // namespace atlas_istn::io
