#include "mmmil/image_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace mmmil {

namespace {

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32_be(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& data) {
    put_u32_be(out, static_cast<uint32_t>(data.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uint32_t crc = crc32(0, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32_be(out, crc);
}

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_data("cannot open image file '", path.string(), "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::filesystem::path& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail_data("cannot write image file '", path.string(), "'");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) fail_data("short write to '", path.string(), "'");
}

constexpr uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& img) {
    if (!img.valid()) fail_runtime("write_png: invalid image");

    // filter 0 (None) on every scanline keeps output deterministic and simple
    const size_t stride = static_cast<size_t>(img.width) * img.channels;
    std::vector<uint8_t> raw;
    raw.reserve((stride + 1) * img.height);
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);
        const uint8_t* row = img.pixels.data() + static_cast<size_t>(y) * stride;
        raw.insert(raw.end(), row, row + stride);
    }

    uLongf comp_cap = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> comp(comp_cap);
    if (compress2(comp.data(), &comp_cap, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        fail_runtime("write_png: deflate failed");
    comp.resize(comp_cap);

    std::vector<uint8_t> ihdr;
    put_u32_be(ihdr, static_cast<uint32_t>(img.width));
    put_u32_be(ihdr, static_cast<uint32_t>(img.height));
    ihdr.push_back(8);                                    // bit depth
    ihdr.push_back(img.channels == 3 ? 2 : 0);            // color type
    ihdr.push_back(0);                                    // compression
    ihdr.push_back(0);                                    // filter method
    ihdr.push_back(0);                                    // no interlace

    std::vector<uint8_t> out(kPngSig, kPngSig + 8);
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", comp);
    append_chunk(out, "IEND", {});
    write_file(path, out);
}

Image read_png(const std::filesystem::path& path) {
    const std::vector<uint8_t> bytes = read_file(path);
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSig, 8) != 0)
        fail_data("'", path.string(), "' is not a PNG file");

    int width = 0, height = 0, channels = 0;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    bool saw_iend = false;
    while (pos + 8 <= bytes.size()) {
        const uint32_t len = get_u32_be(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) fail_data("truncated PNG '", path.string(), "'");
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const uint8_t* data = bytes.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) fail_data("bad IHDR in '", path.string(), "'");
            width = static_cast<int>(get_u32_be(data));
            height = static_cast<int>(get_u32_be(data + 4));
            const int depth = data[8], color = data[9], interlace = data[12];
            if (depth != 8) fail_data("unsupported PNG bit depth ", depth, " in '", path.string(), "'");
            if (color == 0) channels = 1;
            else if (color == 2) channels = 3;
            else fail_data("unsupported PNG color type ", color, " in '", path.string(), "'");
            if (interlace != 0) fail_data("interlaced PNG not supported: '", path.string(), "'");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
            break;
        }
        pos += 12 + len;
    }
    if (width <= 0 || height <= 0 || channels == 0 || !saw_iend || idat.empty())
        fail_data("malformed PNG '", path.string(), "'");

    const size_t stride = static_cast<size_t>(width) * channels;
    std::vector<uint8_t> raw((stride + 1) * height);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        fail_data("corrupt PNG data in '", path.string(), "'");

    Image img(width, height, channels);
    const int bpp = channels;  // bytes per pixel at depth 8
    std::vector<uint8_t> prev(stride, 0);
    for (int y = 0; y < height; ++y) {
        const uint8_t* in_row = raw.data() + static_cast<size_t>(y) * (stride + 1);
        const uint8_t filter = in_row[0];
        uint8_t* out_row = img.pixels.data() + static_cast<size_t>(y) * stride;
        for (size_t i = 0; i < stride; ++i) {
            const int x = in_row[1 + i];
            const int a = i >= static_cast<size_t>(bpp) ? out_row[i - bpp] : 0;
            const int b = prev[i];
            const int c = i >= static_cast<size_t>(bpp) ? prev[i - bpp] : 0;
            int v = 0;
            switch (filter) {
                case 0: v = x; break;
                case 1: v = x + a; break;
                case 2: v = x + b; break;
                case 3: v = x + (a + b) / 2; break;
                case 4: v = x + paeth(a, b, c); break;
                default: fail_data("bad PNG filter ", int(filter), " in '", path.string(), "'");
            }
            out_row[i] = static_cast<uint8_t>(v & 0xff);
        }
        std::copy_n(out_row, stride, prev.data());
    }
    return img;
}

void write_pgm(const std::filesystem::path& path, const Image& img) {
    if (!img.valid() || img.channels != 1) fail_runtime("write_pgm: expected a grayscale image");
    std::vector<uint8_t> out;
    const std::string header =
        cat("P5\n", img.width, " ", img.height, "\n255\n");
    out.insert(out.end(), header.begin(), header.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    write_file(path, out);
}

Image read_pgm(const std::filesystem::path& path) {
    const std::vector<uint8_t> bytes = read_file(path);
    size_t pos = 0;
    auto next_token = [&]() -> std::string {
        while (pos < bytes.size()) {
            if (std::isspace(bytes[pos])) {
                ++pos;
            } else if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
        std::string tok;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(bytes[pos++]);
        return tok;
    };
    if (next_token() != "P5") fail_data("'", path.string(), "' is not a binary PGM");
    const int w = std::stoi(next_token());
    const int h = std::stoi(next_token());
    const int maxv = std::stoi(next_token());
    if (maxv != 255) fail_data("unsupported PGM max value ", maxv, " in '", path.string(), "'");
    ++pos;  // single whitespace after header
    if (bytes.size() - pos < static_cast<size_t>(w) * h)
        fail_data("truncated PGM '", path.string(), "'");
    Image img(w, h, 1);
    std::copy_n(bytes.data() + pos, static_cast<size_t>(w) * h, img.pixels.data());
    return img;
}

Image read_image(const std::filesystem::path& path) {
    const std::string ext = path.extension().string();
    if (ext == ".png") return read_png(path);
    if (ext == ".pgm") return read_pgm(path);
    fail_data("unsupported image extension '", ext, "' for '", path.string(), "'");
}

}  // namespace mmmil
