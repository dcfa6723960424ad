#pragma once

// Minimal PNG codec for single-channel gray images, 8 or 16 bit.
// Chunk handling and row filters are implemented here; DEFLATE and CRC32
// come from zlib. Color, palette and interlaced files are rejected.

#include <zlib.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace texseg {

struct GrayPng {
    int width = 0;
    int height = 0;
    int bit_depth = 8;                    // 8 or 16
    std::vector<std::uint16_t> samples;   // row-major
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open file: " + path);
    std::fseek(f, 0, SEEK_END);
    const long n = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<unsigned char> bytes(n > 0 ? static_cast<size_t>(n) : 0);
    if (n > 0 && std::fread(bytes.data(), 1, bytes.size(), f) != bytes.size()) {
        std::fclose(f);
        throw std::runtime_error("short read: " + path);
    }
    std::fclose(f);
    return bytes;
}

inline void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot open file for writing: " + path);
    if (!bytes.empty() && std::fwrite(bytes.data(), 1, bytes.size(), f) != bytes.size()) {
        std::fclose(f);
        throw std::runtime_error("short write: " + path);
    }
    if (std::fclose(f) != 0) throw std::runtime_error("close failed: " + path);
}

inline std::uint32_t be32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
           std::uint32_t(p[3]);
}

inline void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

inline void append_chunk(std::vector<unsigned char>& out, const char type[4],
                         const unsigned char* data, size_t len) {
    put_be32(out, static_cast<std::uint32_t>(len));
    const size_t type_at = out.size();
    out.insert(out.end(), type, type + 4);
    if (len) out.insert(out.end(), data, data + len);
    std::uint32_t crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, out.data() + type_at, static_cast<uInt>(4 + len));
    put_be32(out, crc);
}

}  // namespace detail

inline GrayPng load_gray_png(const std::string& path) {
    using namespace detail;
    const auto bytes = read_file_bytes(path);
    static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw std::runtime_error("not a PNG file: " + path);

    GrayPng img;
    std::vector<unsigned char> idat;
    bool seen_ihdr = false, seen_iend = false;
    size_t pos = 8;
    while (pos + 12 <= bytes.size() && !seen_iend) {
        const std::uint32_t len = be32(&bytes[pos]);
        if (pos + 12 + len > bytes.size()) throw std::runtime_error("truncated PNG: " + path);
        const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
        const unsigned char* data = &bytes[pos + 8];
        const std::uint32_t crc_stored = be32(&bytes[pos + 8 + len]);
        std::uint32_t crc = crc32(0L, Z_NULL, 0);
        crc = crc32(crc, &bytes[pos + 4], 4 + len);
        if (crc != crc_stored) throw std::runtime_error("PNG chunk CRC mismatch: " + path);

        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw std::runtime_error("bad IHDR: " + path);
            img.width = static_cast<int>(be32(data));
            img.height = static_cast<int>(be32(data + 4));
            img.bit_depth = data[8];
            const int color_type = data[9];
            if (color_type != 0)
                throw std::runtime_error("multi-channel or non-gray PNG rejected (color type " +
                                         std::to_string(color_type) + "): " + path);
            if (img.bit_depth != 8 && img.bit_depth != 16)
                throw std::runtime_error("unsupported PNG bit depth " +
                                         std::to_string(img.bit_depth) + ": " + path);
            if (data[10] != 0 || data[11] != 0) throw std::runtime_error("bad PNG header: " + path);
            if (data[12] != 0) throw std::runtime_error("interlaced PNG not supported: " + path);
            if (img.width <= 0 || img.height <= 0) throw std::runtime_error("empty PNG: " + path);
            seen_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            seen_iend = true;
        }
        pos += 12 + len;
    }
    if (!seen_ihdr || !seen_iend) throw std::runtime_error("malformed PNG: " + path);

    const int bpp = img.bit_depth / 8;
    const size_t row_bytes = static_cast<size_t>(img.width) * bpp;
    const size_t raw_size = (row_bytes + 1) * img.height;
    std::vector<unsigned char> raw(raw_size);
    uLongf dest_len = raw_size;
    const int zrc = uncompress(raw.data(), &dest_len, idat.data(), static_cast<uLong>(idat.size()));
    if (zrc != Z_OK || dest_len != raw_size)
        throw std::runtime_error("PNG inflate failed: " + path);

    // undo row filters in place
    std::vector<unsigned char> prev(row_bytes, 0);
    img.samples.resize(static_cast<size_t>(img.width) * img.height);
    for (int r = 0; r < img.height; ++r) {
        unsigned char* row = &raw[static_cast<size_t>(r) * (row_bytes + 1)];
        const int filter = row[0];
        unsigned char* cur = row + 1;
        for (size_t i = 0; i < row_bytes; ++i) {
            const int a = i >= static_cast<size_t>(bpp) ? cur[i - bpp] : 0;
            const int b = prev[i];
            const int c = i >= static_cast<size_t>(bpp) ? prev[i - bpp] : 0;
            int x = cur[i];
            switch (filter) {
                case 0: break;
                case 1: x += a; break;
                case 2: x += b; break;
                case 3: x += (a + b) / 2; break;
                case 4: x += detail::paeth(a, b, c); break;
                default: throw std::runtime_error("bad PNG row filter: " + path);
            }
            cur[i] = static_cast<unsigned char>(x & 0xff);
        }
        std::memcpy(prev.data(), cur, row_bytes);
        for (int cidx = 0; cidx < img.width; ++cidx) {
            const size_t out_i = static_cast<size_t>(r) * img.width + cidx;
            if (bpp == 1)
                img.samples[out_i] = cur[cidx];
            else
                img.samples[out_i] = static_cast<std::uint16_t>((cur[2 * cidx] << 8) | cur[2 * cidx + 1]);
        }
    }
    return img;
}

inline void save_gray_png(const std::string& path, const GrayPng& img) {
    using namespace detail;
    if (img.bit_depth != 8 && img.bit_depth != 16)
        throw std::invalid_argument("PNG bit depth must be 8 or 16");
    if (img.width <= 0 || img.height <= 0 ||
        img.samples.size() != static_cast<size_t>(img.width) * img.height)
        throw std::invalid_argument("inconsistent PNG dimensions");

    const int bpp = img.bit_depth / 8;
    const size_t row_bytes = static_cast<size_t>(img.width) * bpp;
    std::vector<unsigned char> raw((row_bytes + 1) * img.height);
    for (int r = 0; r < img.height; ++r) {
        unsigned char* row = &raw[static_cast<size_t>(r) * (row_bytes + 1)];
        row[0] = 0;  // filter: none
        for (int c = 0; c < img.width; ++c) {
            const std::uint16_t v = img.samples[static_cast<size_t>(r) * img.width + c];
            if (bpp == 1) {
                row[1 + c] = static_cast<unsigned char>(v & 0xff);
            } else {
                row[1 + 2 * c] = static_cast<unsigned char>(v >> 8);
                row[2 + 2 * c] = static_cast<unsigned char>(v & 0xff);
            }
        }
    }

    uLongf comp_cap = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_cap);
    if (compress2(comp.data(), &comp_cap, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("PNG deflate failed: " + path);
    comp.resize(comp_cap);

    std::vector<unsigned char> out;
    static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.insert(out.end(), sig, sig + 8);
    unsigned char ihdr[13];
    ihdr[0] = static_cast<unsigned char>(img.width >> 24);
    ihdr[1] = static_cast<unsigned char>(img.width >> 16);
    ihdr[2] = static_cast<unsigned char>(img.width >> 8);
    ihdr[3] = static_cast<unsigned char>(img.width);
    ihdr[4] = static_cast<unsigned char>(img.height >> 24);
    ihdr[5] = static_cast<unsigned char>(img.height >> 16);
    ihdr[6] = static_cast<unsigned char>(img.height >> 8);
    ihdr[7] = static_cast<unsigned char>(img.height);
    ihdr[8] = static_cast<unsigned char>(img.bit_depth);
    ihdr[9] = 0;   // gray
    ihdr[10] = 0;  // deflate
    ihdr[11] = 0;  // adaptive filters
    ihdr[12] = 0;  // no interlace
    append_chunk(out, "IHDR", ihdr, 13);
    append_chunk(out, "IDAT", comp.data(), comp.size());
    append_chunk(out, "IEND", nullptr, 0);
    write_file_bytes(path, out);
}

}  // namespace texseg
