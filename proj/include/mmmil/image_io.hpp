#pragma once

#include <filesystem>

#include "mmmil/image.hpp"

namespace mmmil {

/// Minimal PNG support: 8-bit grayscale or RGB, non-interlaced. DEFLATE is
/// delegated to zlib; the chunk and filter layers live here. Covers every
/// file the toolkit writes plus standard 8-bit gray/RGB PNGs from elsewhere.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);

/// Binary PGM (P5), 8-bit grayscale.
Image read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Image& img);

/// Dispatches on extension (.png / .pgm).
Image read_image(const std::filesystem::path& path);

}  // namespace mmmil
