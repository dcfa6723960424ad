#pragma once

// Single-channel raster types and the pixel plumbing shared by every other
// module: PNG load/save, bilinear downscaling, patch cropping and seeded
// random patch sampling, plus a raw float32 map format for lossless export.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "texseg/png_io.hpp"
#include "texseg/rng.hpp"

namespace texseg {

// Gray image, row-major floats in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Image() = default;
    Image(int h, int w, float fill = 0.0f)
        : height(h), width(w), data(static_cast<size_t>(h) * w, fill) {}

    float& at(int r, int c) { return data[static_cast<size_t>(r) * width + c]; }
    float at(int r, int c) const { return data[static_cast<size_t>(r) * width + c]; }
    size_t pixels() const { return static_cast<size_t>(height) * width; }
    bool same_shape(const Image& o) const { return height == o.height && width == o.width; }

    void check() const {
        if (height <= 0 || width <= 0 || data.size() != pixels())
            throw std::invalid_argument("image dimensions inconsistent with data length");
        for (float v : data)
            if (!(v >= 0.0f && v <= 1.0f))
                throw std::invalid_argument("image value outside [0,1]");
    }
};

// Binary per-pixel defect annotation; nonzero = defect.
struct GroundTruthMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    GroundTruthMask() = default;
    GroundTruthMask(int h, int w, std::uint8_t fill = 0)
        : height(h), width(w), data(static_cast<size_t>(h) * w, fill) {}

    std::uint8_t& at(int r, int c) { return data[static_cast<size_t>(r) * width + c]; }
    std::uint8_t at(int r, int c) const { return data[static_cast<size_t>(r) * width + c]; }
    size_t pixels() const { return static_cast<size_t>(height) * width; }
    bool same_shape(const GroundTruthMask& o) const {
        return height == o.height && width == o.width;
    }
    size_t count() const {
        size_t n = 0;
        for (auto v : data) n += v ? 1 : 0;
        return n;
    }
};

// Per-pixel anomaly scores, >= 0. Higher means more anomalous.
struct ResidualMap {
    int height = 0;
    int width = 0;
    std::vector<float> scores;

    ResidualMap() = default;
    ResidualMap(int h, int w, float fill = 0.0f)
        : height(h), width(w), scores(static_cast<size_t>(h) * w, fill) {}

    float& at(int r, int c) { return scores[static_cast<size_t>(r) * width + c]; }
    float at(int r, int c) const { return scores[static_cast<size_t>(r) * width + c]; }
    size_t pixels() const { return static_cast<size_t>(height) * width; }
};

// --- PNG-backed I/O -------------------------------------------------------

inline Image load_image(const std::string& path) {
    const GrayPng png = load_gray_png(path);
    Image img(png.height, png.width);
    const float scale = 1.0f / ((1u << png.bit_depth) - 1);
    for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = png.samples[i] * scale;
    return img;
}

inline void save_image(const Image& img, const std::string& path, int depth = 8) {
    if (depth != 8 && depth != 16) throw std::invalid_argument("bit depth must be 8 or 16");
    img.check();
    GrayPng png;
    png.width = img.width;
    png.height = img.height;
    png.bit_depth = depth;
    png.samples.resize(img.pixels());
    const double maxv = (1u << depth) - 1;
    for (size_t i = 0; i < img.data.size(); ++i) {
        const double v = std::clamp(static_cast<double>(img.data[i]), 0.0, 1.0);
        png.samples[i] = static_cast<std::uint16_t>(std::lround(v * maxv));
    }
    save_gray_png(path, png);
}

inline GroundTruthMask load_mask(const std::string& path) {
    const GrayPng png = load_gray_png(path);
    GroundTruthMask mask(png.height, png.width);
    for (size_t i = 0; i < mask.data.size(); ++i) mask.data[i] = png.samples[i] ? 1 : 0;
    return mask;
}

inline void save_mask(const GroundTruthMask& mask, const std::string& path) {
    GrayPng png;
    png.width = mask.width;
    png.height = mask.height;
    png.bit_depth = 8;
    png.samples.resize(mask.pixels());
    for (size_t i = 0; i < mask.data.size(); ++i) png.samples[i] = mask.data[i] ? 255 : 0;
    save_gray_png(path, png);
}

// --- Geometry -------------------------------------------------------------

// Bilinear with half-pixel center alignment. Downscale only.
inline Image downscale_bilinear(const Image& img, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("output size must be positive");
    if (out_h > img.height || out_w > img.width)
        throw std::invalid_argument("upscaling is out of contract");
    Image out(out_h, out_w);
    const double sy = static_cast<double>(img.height) / out_h;
    const double sx = static_cast<double>(img.width) / out_w;
    for (int r = 0; r < out_h; ++r) {
        const double fy = (r + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        const double wy = fy - y0;
        const int y1 = std::min(std::max(y0 + 1, 0), img.height - 1);
        y0 = std::min(std::max(y0, 0), img.height - 1);
        for (int c = 0; c < out_w; ++c) {
            const double fx = (c + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            const double wx = fx - x0;
            const int x1 = std::min(std::max(x0 + 1, 0), img.width - 1);
            x0 = std::min(std::max(x0, 0), img.width - 1);
            const double top = img.at(y0, x0) * (1.0 - wx) + img.at(y0, x1) * wx;
            const double bot = img.at(y1, x0) * (1.0 - wx) + img.at(y1, x1) * wx;
            const double v = top * (1.0 - wy) + bot * wy;
            out.at(r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return out;
}

inline Image crop_patch(const Image& img, int top, int left, int size) {
    if (size <= 0) throw std::invalid_argument("patch size must be positive");
    if (top < 0 || left < 0 || top + size > img.height || left + size > img.width)
        throw std::invalid_argument("crop outside image bounds");
    Image out(size, size);
    for (int r = 0; r < size; ++r)
        std::memcpy(out.data.data() + static_cast<size_t>(r) * size,
                    img.data.data() + static_cast<size_t>(top + r) * img.width + left,
                    sizeof(float) * size);
    return out;
}

// Uniform positions and source images, with replacement; pure in (inputs, seed).
inline std::vector<Image> sample_patches(const std::vector<Image>& imgs, int count, int size,
                                         std::uint64_t seed) {
    if (count < 0) throw std::invalid_argument("negative patch count");
    if (count > 0 && imgs.empty()) throw std::invalid_argument("no source images");
    for (const auto& im : imgs)
        if (im.height < size || im.width < size)
            throw std::invalid_argument("source image smaller than patch size");
    std::vector<Image> patches;
    patches.reserve(count);
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        const auto& src = imgs[rng.uniform_below(imgs.size())];
        const int top = static_cast<int>(rng.uniform_below(src.height - size + 1));
        const int left = static_cast<int>(rng.uniform_below(src.width - size + 1));
        patches.push_back(crop_patch(src, top, left, size));
    }
    return patches;
}

// --- Raw float32 map format ------------------------------------------------
// 16-byte header: magic "TXSG", u32 height, u32 width, u32 reserved = 0,
// then little-endian float32 row-major scores.

inline void save_raw_map(const ResidualMap& map, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot open file for writing: " + path);
    const char magic[4] = {'T', 'X', 'S', 'G'};
    const std::uint32_t h = static_cast<std::uint32_t>(map.height);
    const std::uint32_t w = static_cast<std::uint32_t>(map.width);
    const std::uint32_t reserved = 0;
    bool ok = std::fwrite(magic, 1, 4, f) == 4 && std::fwrite(&h, 4, 1, f) == 1 &&
              std::fwrite(&w, 4, 1, f) == 1 && std::fwrite(&reserved, 4, 1, f) == 1 &&
              (map.scores.empty() ||
               std::fwrite(map.scores.data(), 4, map.scores.size(), f) == map.scores.size());
    ok = (std::fclose(f) == 0) && ok;
    if (!ok) throw std::runtime_error("write failed: " + path);
}

inline ResidualMap load_raw_map(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open file: " + path);
    char magic[4];
    std::uint32_t h = 0, w = 0, reserved = 0;
    if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, "TXSG", 4) != 0 ||
        std::fread(&h, 4, 1, f) != 1 || std::fread(&w, 4, 1, f) != 1 ||
        std::fread(&reserved, 4, 1, f) != 1) {
        std::fclose(f);
        throw std::runtime_error("not a TXSG raw map: " + path);
    }
    ResidualMap map(static_cast<int>(h), static_cast<int>(w));
    if (!map.scores.empty() && std::fread(map.scores.data(), 4, map.scores.size(), f) != map.scores.size()) {
        std::fclose(f);
        throw std::runtime_error("truncated TXSG raw map: " + path);
    }
    std::fclose(f);
    return map;
}

}  // namespace texseg
