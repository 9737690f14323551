#pragma once

#include <cstdint>
#include <filesystem>

#include "fundus/image.hpp"

namespace fundus {

/// 8-bit value v maps to v / 255.
inline double from_u8(std::uint8_t v) { return static_cast<double>(v) / 255.0; }

/// Inverse of from_u8 with round-half-away-from-zero; input clamped to [0, 1].
std::uint8_t to_u8(double v);

/// Reads 8-bit PNG (gray, gray+alpha, RGB, RGBA, palette; alpha is dropped)
/// or binary PNM (P6 color, P5 gray). The format is detected from the file
/// signature, not the extension.
Image read_image(const std::filesystem::path& path);

/// Writes PNG or binary PNM depending on the extension (.png, .ppm/.pnm/.pgm).
/// One-channel images are written as grayscale (P5 for PNM).
void write_image(const Image& img, const std::filesystem::path& path);

}  // namespace fundus
