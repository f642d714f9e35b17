#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "ntl/common.hpp"

namespace ntl {

// Minimal 8-bit greyscale PNG writer, enough to eyeball profile channels.
inline void write_grey_png(const std::string& path, const std::vector<std::uint8_t>& pixels,
                           int width, int height) {
    if (static_cast<std::size_t>(width) * static_cast<std::size_t>(height) != pixels.size())
        throw io_error("png: pixel buffer does not match dimensions");

    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(height) * (static_cast<std::size_t>(width) + 1));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);  // filter type: none
        const std::uint8_t* row = pixels.data() + static_cast<std::size_t>(y) * width;
        raw.insert(raw.end(), row, row + width);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> z(bound);
    if (compress2(z.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw io_error("png: deflate failed");
    z.resize(bound);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open '" + path + "' for writing");

    auto be32 = [](std::uint32_t v) {
        std::uint8_t b[4] = {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
                             static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
        return std::string(reinterpret_cast<char*>(b), 4);
    };
    auto chunk = [&](const char type[4], const std::uint8_t* data, std::size_t n) {
        out << be32(static_cast<std::uint32_t>(n));
        out.write(type, 4);
        if (n) out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
        std::uint32_t crc = static_cast<std::uint32_t>(
            crc32(crc32(0, reinterpret_cast<const Bytef*>(type), 4),
                  reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
        out << be32(crc);
    };

    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    out.write(reinterpret_cast<const char*>(sig), 8);
    std::uint8_t ihdr[13];
    std::string w = be32(static_cast<std::uint32_t>(width)),
                h = be32(static_cast<std::uint32_t>(height));
    std::memcpy(ihdr, w.data(), 4);
    std::memcpy(ihdr + 4, h.data(), 4);
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 0;   // colour type: greyscale
    ihdr[10] = ihdr[11] = ihdr[12] = 0;
    chunk("IHDR", ihdr, 13);
    chunk("IDAT", z.data(), z.size());
    chunk("IEND", nullptr, 0);
    if (!out) throw io_error("write failed for '" + path + "'");
}

// Pixel value x 255, rounded.
inline void write_channel_png(const std::string& path, const std::vector<float>& channel,
                              int grid) {
    std::vector<std::uint8_t> px(channel.size());
    for (std::size_t i = 0; i < channel.size(); ++i)
        px[i] = static_cast<std::uint8_t>(std::lround(clamp01(channel[i]) * 255.0));
    write_grey_png(path, px, grid, grid);
}

}  // namespace ntl
