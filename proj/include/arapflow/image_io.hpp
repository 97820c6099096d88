#pragma once

#include "arapflow/model.hpp"

#include <cstdint>
#include <filesystem>

namespace arapflow {

/// Reads an 8- or 16-bit PNG of any color type into RGB or RGBA (when the
/// file carries alpha or a tRNS chunk).
Image read_png(const std::filesystem::path& path);

/// Writes 8-bit RGB or RGBA depending on the image's channel count.
void write_png(const std::filesystem::path& path, const Image& image);

/// Any nonzero channel value marks the pixel as true, so multi-label
/// segment files collapse to the union of their labels.
Mask read_mask_png(const std::filesystem::path& path);

/// Writes 0/255 grayscale.
void write_mask_png(const std::filesystem::path& path, const Mask& mask);

/// [0,1] -> [0,255], rounding half to even.
std::uint8_t to_byte(float value);

}  // namespace arapflow
