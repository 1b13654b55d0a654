#pragma once

// Minimal PNG reader/writer for 8-bit RGB(A) images, backed by zlib. Writes
// non-interlaced RGB with unfiltered scanlines; reads any standard filter.

#include <zlib.h>

#include "svho/camera.hpp"

namespace svho {

namespace png_detail {

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n,
                              std::uint32_t seed = 0) {
    return static_cast<std::uint32_t>(
        ::crc32(seed, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                         const std::vector<std::uint8_t>& payload) {
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    put_u32(out, crc32_of(&out[crc_start], out.size() - crc_start));
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    return pb <= pc ? b : c;
}

}  // namespace png_detail

inline void write_png(const Image& img, const std::string& path) {
    if (img.channels != 3) throw std::runtime_error("png writer expects 3-channel images");
    if (img.width <= 0 || img.height <= 0) throw std::runtime_error("empty image");
    const int W = img.width, H = img.height;

    // Raw scanlines, each prefixed with filter byte 0.
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(H) * (1 + 3 * W));
    std::size_t p = 0;
    for (int y = 0; y < H; ++y) {
        raw[p++] = 0;
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = std::clamp(img.at(x, y, c), 0.0f, 1.0f);
                raw[p++] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
            }
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) !=
        Z_OK)
        throw std::runtime_error("png compression failed");
    compressed.resize(bound);

    std::vector<std::uint8_t> out;
    static const std::uint8_t kSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.insert(out.end(), kSig, kSig + 8);
    std::vector<std::uint8_t> ihdr;
    png_detail::put_u32(ihdr, static_cast<std::uint32_t>(W));
    png_detail::put_u32(ihdr, static_cast<std::uint32_t>(H));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter method
    ihdr.push_back(0);  // not interlaced
    png_detail::append_chunk(out, "IHDR", ihdr);
    png_detail::append_chunk(out, "IDAT", compressed);
    png_detail::append_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("short write: " + path);
}

inline Image read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    static const std::uint8_t kSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (bytes.size() < 8 || !std::equal(kSig, kSig + 8, bytes.begin()))
        throw std::runtime_error("not a png file: " + path);

    int width = 0, height = 0, bit_depth = 0, color_type = 0;
    std::vector<std::uint8_t> idat;
    std::size_t pos = 8;
    while (pos + 8 <= bytes.size()) {
        std::uint32_t len = png_detail::get_u32(&bytes[pos]);
        if (pos + 12 + len > bytes.size()) throw std::runtime_error("truncated png: " + path);
        std::string type(reinterpret_cast<const char*>(&bytes[pos + 4]), 4);
        const std::uint8_t* payload = &bytes[pos + 8];
        std::uint32_t expect = png_detail::get_u32(&bytes[pos + 8 + len]);
        if (png_detail::crc32_of(&bytes[pos + 4], 4 + len) != expect)
            throw std::runtime_error("png chunk crc mismatch: " + path);
        if (type == "IHDR") {
            width = static_cast<int>(png_detail::get_u32(payload));
            height = static_cast<int>(png_detail::get_u32(payload + 4));
            bit_depth = payload[8];
            color_type = payload[9];
            if (payload[12] != 0) throw std::runtime_error("interlaced png unsupported");
        } else if (type == "IDAT") {
            idat.insert(idat.end(), payload, payload + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (width <= 0 || height <= 0) throw std::runtime_error("png missing IHDR: " + path);
    if (bit_depth != 8 || (color_type != 2 && color_type != 6))
        throw std::runtime_error("unsupported png format (need 8-bit RGB or RGBA): " + path);
    const int ch = color_type == 2 ? 3 : 4;

    std::size_t stride = static_cast<std::size_t>(width) * ch;
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(height) * (stride + 1));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw std::runtime_error("png decompression failed: " + path);

    // Undo per-scanline filtering in place.
    std::vector<std::uint8_t> prev(stride, 0);
    Image img(width, height, 3);
    for (int y = 0; y < height; ++y) {
        std::uint8_t* line = &raw[static_cast<std::size_t>(y) * (stride + 1)];
        int filter = line[0];
        std::uint8_t* cur = line + 1;
        for (std::size_t i = 0; i < stride; ++i) {
            int a = i >= static_cast<std::size_t>(ch) ? cur[i - ch] : 0;
            int b = prev[i];
            int c = i >= static_cast<std::size_t>(ch) ? prev[i - ch] : 0;
            int add = 0;
            switch (filter) {
                case 0: break;
                case 1: add = a; break;
                case 2: add = b; break;
                case 3: add = (a + b) / 2; break;
                case 4: add = png_detail::paeth(a, b, c); break;
                default: throw std::runtime_error("bad png filter type: " + path);
            }
            cur[i] = static_cast<std::uint8_t>((cur[i] + add) & 0xff);
        }
        std::copy(cur, cur + stride, prev.begin());
        for (int x = 0; x < width; ++x)
            for (int c2 = 0; c2 < 3; ++c2)
                img.at(x, y, c2) = cur[static_cast<std::size_t>(x) * ch + c2] / 255.0f;
    }
    return img;
}

}  // namespace svho
