#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "styleaug/tensor.hpp"

namespace styleaug::data {

// Image files in `dir` with a known raster extension, sorted by name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

// Decodes an image as 3 x res x res RGB bytes (shorter side resized to `res`,
// then center crop). Returns nullopt when the file cannot be decoded.
std::optional<std::vector<std::uint8_t>> read_image_rgb(const std::filesystem::path& path, std::size_t res);

// Quantizes sample `index` of a [0,1] N x 3 x H x W tensor to 8 bits.
std::vector<std::uint8_t> to_bytes(const Tensor& images01, std::size_t index);

// Writes 3 x h x w RGB bytes as PNG. Throws Error on failure.
void write_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& chw, std::size_t h,
               std::size_t w);

}  // namespace styleaug::data
