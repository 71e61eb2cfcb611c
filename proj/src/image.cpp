#include "mmmil/image.hpp"

#include <algorithm>
#include <cmath>

namespace mmmil {

namespace {
uint8_t to_byte(double v) {
    return static_cast<uint8_t>(std::clamp(std::lround(v), 0l, 255l));
}
}  // namespace

Image resize_bilinear(const Image& img, int new_w, int new_h) {
    if (!img.valid()) fail_runtime("resize: invalid source image");
    if (new_w <= 0 || new_h <= 0) fail_runtime("resize: target size must be positive");
    if (new_w == img.width && new_h == img.height) return img;
    Image out(new_w, new_h, img.channels);
    const double sx = static_cast<double>(img.width) / new_w;
    const double sy = static_cast<double>(img.height) / new_h;
    for (int y = 0; y < new_h; ++y) {
        // pixel-center alignment
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < new_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < img.channels; ++c) {
                const double top = img.at(x0, y0, c) * (1.0 - wx) + img.at(x1, y0, c) * wx;
                const double bot = img.at(x0, y1, c) * (1.0 - wx) + img.at(x1, y1, c) * wx;
                out.at(x, y, c) = to_byte(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    return out;
}

Image crop(const Image& img, int x0, int y0, int w, int h) {
    if (w <= 0 || h <= 0) fail_runtime("crop: window must be positive, got ", w, "x", h);
    if (x0 < 0 || y0 < 0 || x0 + w > img.width || y0 + h > img.height)
        fail_runtime("crop: window ", w, "x", h, " at (", x0, ",", y0, ") exceeds image ",
                     img.width, "x", img.height);
    Image out(w, h, img.channels);
    const size_t row_bytes = static_cast<size_t>(w) * img.channels;
    for (int y = 0; y < h; ++y) {
        const uint8_t* src =
            img.pixels.data() + ((static_cast<size_t>(y0 + y) * img.width) + x0) * img.channels;
        std::copy_n(src, row_bytes, out.pixels.data() + static_cast<size_t>(y) * row_bytes);
    }
    return out;
}

Image hflip(const Image& img) {
    Image out(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                out.at(x, y, c) = img.at(img.width - 1 - x, y, c);
    return out;
}

Image scale_brightness(const Image& img, double factor) {
    Image out = img;
    for (uint8_t& p : out.pixels) p = to_byte(p * factor);
    return out;
}

Image rotate_degrees(const Image& img, double degrees) {
    if (degrees == 0.0) return img;
    const double rad = degrees * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cx = (img.width - 1) * 0.5, cy = (img.height - 1) * 0.5;
    Image out(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            // inverse mapping into the source
            const double dx = x - cx, dy = y - cy;
            double fx = cs * dx + sn * dy + cx;
            double fy = -sn * dx + cs * dy + cy;
            fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
            fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
            const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const int y1 = std::min(y0 + 1, img.height - 1);
            const double wx = fx - x0, wy = fy - y0;
            for (int c = 0; c < img.channels; ++c) {
                const double top = img.at(x0, y0, c) * (1.0 - wx) + img.at(x1, y0, c) * wx;
                const double bot = img.at(x0, y1, c) * (1.0 - wx) + img.at(x1, y1, c) * wx;
                out.at(x, y, c) = to_byte(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    return out;
}

}  // namespace mmmil
