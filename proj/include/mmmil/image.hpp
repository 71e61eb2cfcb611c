#pragma once

#include <cstdint>
#include <vector>

#include "mmmil/common.hpp"

namespace mmmil {

/// 8-bit raster, row-major, channel-interleaved. channels: 1 (OCT) or 3 (CFP).
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<uint8_t> pixels;

    Image() = default;
    Image(int w, int h, int c, uint8_t fill = 0)
        : width(w), height(h), channels(c),
          pixels(static_cast<size_t>(w) * h * c, fill) {}

    uint8_t& at(int x, int y, int c) {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    uint8_t at(int x, int y, int c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    bool valid() const {
        return width > 0 && height > 0 && (channels == 1 || channels == 3) &&
               pixels.size() == static_cast<size_t>(width) * height * channels;
    }
};

Image resize_bilinear(const Image& img, int new_w, int new_h);

/// Crop window must lie fully inside the image.
Image crop(const Image& img, int x0, int y0, int w, int h);

Image hflip(const Image& img);

/// Multiplies every pixel by `factor`, clamped to [0,255].
Image scale_brightness(const Image& img, double factor);

/// Rotation about the image center with bilinear sampling; samples outside
/// the source are clamped to the nearest edge pixel.
Image rotate_degrees(const Image& img, double degrees);

}  // namespace mmmil
