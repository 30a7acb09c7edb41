#pragma once

#include <string>

#include "splatlab/image.hpp"

namespace splatlab {

// 8-bit PNG, gray (1 channel) or RGB (3 channels). Values clamped to [0,1].
void write_png(const std::string& path, const ImageBuffer& image);
ImageBuffer read_png(const std::string& path);

// Grayscale PFM (float32, little-endian, bottom-up rows) for depth maps.
void write_pfm(const std::string& path, const ImageBuffer& image);
ImageBuffer read_pfm(const std::string& path);

// Box-filter downscale by an integer factor (averages factor x factor blocks).
ImageBuffer downscale(const ImageBuffer& image, int factor);

} // namespace splatlab
