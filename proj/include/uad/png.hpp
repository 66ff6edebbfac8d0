#pragma once

// Minimal 8-bit grayscale PNG encoder for inspection images.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "uad/tensor.hpp"

namespace uad {

/// Encodes `pixels` (row-major, width * height bytes) as a grayscale PNG.
std::vector<std::uint8_t> encode_png_gray8(const std::vector<std::uint8_t>& pixels, std::int64_t width,
                                           std::int64_t height);

/// Maps an [H, W] or [H, W, 1] plane to bytes: clamp(v / scale, 0, 1) * 255, rounded.
std::vector<std::uint8_t> to_gray8(const Tensor& plane, double scale = 1.0);

void write_png(const Tensor& plane, const std::filesystem::path& path, double scale = 1.0);

} // namespace uad
