#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include <zlib.h>

#include "dubengine/common.hpp"

namespace dubengine {

// Minimal lossless PNG (8-bit RGB, filter 0, no interlace). Deterministic
// output: fixed zlib level, no ancillary chunks.

namespace png_detail {

inline void put_u32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(static_cast<uint8_t>(x >> 24));
    v.push_back(static_cast<uint8_t>(x >> 16));
    v.push_back(static_cast<uint8_t>(x >> 8));
    v.push_back(static_cast<uint8_t>(x));
}

inline void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
    put_u32(out, static_cast<uint32_t>(data.size()));
    size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uint32_t crc = static_cast<uint32_t>(
        ::crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
    put_u32(out, crc);
}

}  // namespace png_detail

inline std::vector<uint8_t> encode_png_rgb(const std::vector<uint8_t>& rgb, int width, int height) {
    check_data(static_cast<int>(rgb.size()) == width * height * 3, "rgb buffer size mismatch");
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(height) * (1 + width * 3));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);  // filter type 0
        raw.insert(raw.end(), rgb.begin() + static_cast<size_t>(y) * width * 3,
                   rgb.begin() + static_cast<size_t>(y + 1) * width * 3);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw DataError("png: zlib compression failed");
    comp.resize(comp_len);

    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<uint8_t> ihdr;
    png_detail::put_u32(ihdr, static_cast<uint32_t>(width));
    png_detail::put_u32(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // interlace
    png_detail::put_chunk(out, "IHDR", ihdr);
    png_detail::put_chunk(out, "IDAT", comp);
    png_detail::put_chunk(out, "IEND", {});
    return out;
}

inline void write_png_rgb(const std::filesystem::path& path, const std::vector<uint8_t>& rgb,
                          int width, int height) {
    std::vector<uint8_t> bytes = encode_png_rgb(rgb, width, height);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write png: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("png write failed: " + path.string());
}

// Decoder for the files this encoder produces (filter 0 rows only).
inline std::vector<uint8_t> decode_png_rgb(const std::vector<uint8_t>& bytes, int& width, int& height) {
    check_data(bytes.size() > 8 && bytes[1] == 'P' && bytes[2] == 'N' && bytes[3] == 'G',
               "not a png file");
    size_t pos = 8;
    std::vector<uint8_t> idat;
    width = height = 0;
    auto rd_u32 = [&](size_t p) {
        return (uint32_t(bytes[p]) << 24) | (uint32_t(bytes[p + 1]) << 16) |
               (uint32_t(bytes[p + 2]) << 8) | uint32_t(bytes[p + 3]);
    };
    while (pos + 8 <= bytes.size()) {
        uint32_t len = rd_u32(pos);
        std::string type(bytes.begin() + pos + 4, bytes.begin() + pos + 8);
        check_data(pos + 12 + len <= bytes.size(), "truncated png chunk");
        uint32_t crc = static_cast<uint32_t>(
            ::crc32(0L, bytes.data() + pos + 4, static_cast<uInt>(len + 4)));
        check_data(crc == rd_u32(pos + 8 + len), "png chunk crc mismatch");
        if (type == "IHDR") {
            width = static_cast<int>(rd_u32(pos + 8));
            height = static_cast<int>(rd_u32(pos + 12));
            check_data(bytes[pos + 16] == 8 && bytes[pos + 17] == 2, "unsupported png format");
        } else if (type == "IDAT") {
            idat.insert(idat.end(), bytes.begin() + pos + 8, bytes.begin() + pos + 8 + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    check_data(width > 0 && height > 0 && !idat.empty(), "png missing IHDR/IDAT");
    uLongf raw_len = static_cast<uLongf>(height) * (1 + width * 3);
    std::vector<uint8_t> raw(raw_len);
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK)
        throw DataError("png: zlib decompression failed");
    std::vector<uint8_t> rgb(static_cast<size_t>(width) * height * 3);
    for (int y = 0; y < height; ++y) {
        check_data(raw[static_cast<size_t>(y) * (1 + width * 3)] == 0, "unsupported png filter");
        std::memcpy(rgb.data() + static_cast<size_t>(y) * width * 3,
                    raw.data() + static_cast<size_t>(y) * (1 + width * 3) + 1,
                    static_cast<size_t>(width) * 3);
    }
    return rgb;
}

inline std::vector<uint8_t> read_png_rgb(const std::filesystem::path& path, int& width, int& height) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open png: " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_png_rgb(bytes, width, height);
}

}  // namespace dubengine
