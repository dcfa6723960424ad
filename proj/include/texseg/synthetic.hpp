#pragma once

// Seeded toy-data generator: rotated two-tone checkerboards of varying cell
// size, plus injected gray strokes and dots with pixel-accurate masks.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "texseg/image.hpp"
#include "texseg/manifest.hpp"
#include "texseg/rng.hpp"

namespace texseg {

struct CheckerSpec {
    int image_size = 128;
    int cell_min = 8;
    int cell_max = 24;
    double rot_min_deg = 0.0;
    double rot_max_deg = 45.0;
    float low = 0.0f;
    float high = 1.0f;
    bool antialias = true;    // 2x supersampling
    bool random_phase = true; // false pins the lattice to the image center
    std::uint64_t seed = 0;

    void check() const {
        if (image_size < 1) throw std::invalid_argument("image size must be positive");
        if (cell_min < 2 || cell_max < cell_min)
            throw std::invalid_argument("cell size range must satisfy 2 <= min <= max");
        if (!(low < high)) throw std::invalid_argument("low intensity must be below high");
        if (!(low >= 0.0f && high <= 1.0f)) throw std::invalid_argument("intensities must be in [0,1]");
        if (rot_max_deg < rot_min_deg) throw std::invalid_argument("bad rotation range");
    }
};

struct DefectSpec {
    int stroke_count_min = 2, stroke_count_max = 5;
    double stroke_width_min = 2.0, stroke_width_max = 4.0;
    double stroke_length_min = 12.0, stroke_length_max = 40.0;
    int dot_count_min = 2, dot_count_max = 5;
    double dot_radius_min = 2.0, dot_radius_max = 5.0;
    float intensity = 0.5f;
    std::uint64_t seed = 0;

    void check() const {
        if (stroke_count_min < 0 || stroke_count_max < stroke_count_min ||
            dot_count_min < 0 || dot_count_max < dot_count_min)
            throw std::invalid_argument("defect counts must be non-negative ranges");
        if (!(intensity >= 0.0f && intensity <= 1.0f))
            throw std::invalid_argument("defect intensity must be in [0,1]");
        if (stroke_width_min <= 0 || stroke_width_max < stroke_width_min ||
            stroke_length_min <= 0 || stroke_length_max < stroke_length_min ||
            dot_radius_min <= 0 || dot_radius_max < dot_radius_min)
            throw std::invalid_argument("defect geometry ranges must be positive");
    }
};

// Rotated two-tone checkerboard. Cell size, rotation and phase are drawn from
// the seeded generator; rotation is about the image center. With rotation 0
// the cell boundaries align with the pixel grid, so pixels are exactly
// low/high even with anti-aliasing on.
inline Image gen_checkerboard(const CheckerSpec& spec) {
    spec.check();
    Rng rng(spec.seed);
    const int cell = static_cast<int>(rng.uniform_int(spec.cell_min, spec.cell_max));
    const int phase_x = spec.random_phase ? static_cast<int>(rng.uniform_below(cell)) : 0;
    const int phase_y = spec.random_phase ? static_cast<int>(rng.uniform_below(cell)) : 0;
    const double theta = rng.uniform(spec.rot_min_deg, spec.rot_max_deg) * M_PI / 180.0;
    const double cos_t = std::cos(theta), sin_t = std::sin(theta);
    const double cx = spec.image_size / 2.0, cy = spec.image_size / 2.0;

    auto shade = [&](double px, double py) {
        // inverse-rotate into pattern space
        const double dx = px - cx, dy = py - cy;
        const double u = cos_t * dx + sin_t * dy + phase_x;
        const double v = -sin_t * dx + cos_t * dy + phase_y;
        const long long iu = static_cast<long long>(std::floor(u / cell));
        const long long iv = static_cast<long long>(std::floor(v / cell));
        return ((iu + iv) & 1) ? spec.high : spec.low;
    };

    Image img(spec.image_size, spec.image_size);
    for (int r = 0; r < spec.image_size; ++r)
        for (int c = 0; c < spec.image_size; ++c) {
            if (spec.antialias) {
                double acc = 0.0;
                for (double oy : {0.25, 0.75})
                    for (double ox : {0.25, 0.75}) acc += shade(c + ox, r + oy);
                img.at(r, c) = static_cast<float>(acc / 4.0);
            } else {
                img.at(r, c) = shade(c + 0.5, r + 0.5);
            }
        }
    return img;
}

// Paints constant-intensity rotated rectangles and filled circles; the mask
// marks exactly the painted pixels.
inline std::pair<Image, GroundTruthMask> inject_defects(const Image& img, const DefectSpec& spec) {
    spec.check();
    Rng rng(spec.seed);
    Image out = img;
    GroundTruthMask mask(img.height, img.width);

    auto paint = [&](int r, int c) {
        out.at(r, c) = spec.intensity;
        mask.at(r, c) = 1;
    };

    const int n_strokes = static_cast<int>(rng.uniform_int(spec.stroke_count_min, spec.stroke_count_max));
    for (int s = 0; s < n_strokes; ++s) {
        const double cx = rng.uniform(0.0, img.width);
        const double cy = rng.uniform(0.0, img.height);
        const double angle = rng.uniform(0.0, M_PI);
        const double len = rng.uniform(spec.stroke_length_min, spec.stroke_length_max);
        const double wid = rng.uniform(spec.stroke_width_min, spec.stroke_width_max);
        const double cos_a = std::cos(angle), sin_a = std::sin(angle);
        const double reach = 0.5 * std::hypot(len, wid) + 1.0;
        const int r0 = std::max(0, static_cast<int>(std::floor(cy - reach)));
        const int r1 = std::min(img.height - 1, static_cast<int>(std::ceil(cy + reach)));
        const int c0 = std::max(0, static_cast<int>(std::floor(cx - reach)));
        const int c1 = std::min(img.width - 1, static_cast<int>(std::ceil(cx + reach)));
        for (int r = r0; r <= r1; ++r)
            for (int c = c0; c <= c1; ++c) {
                const double dx = (c + 0.5) - cx, dy = (r + 0.5) - cy;
                const double u = cos_a * dx + sin_a * dy;
                const double v = -sin_a * dx + cos_a * dy;
                if (std::abs(u) <= len * 0.5 && std::abs(v) <= wid * 0.5) paint(r, c);
            }
    }

    const int n_dots = static_cast<int>(rng.uniform_int(spec.dot_count_min, spec.dot_count_max));
    for (int s = 0; s < n_dots; ++s) {
        const double cx = rng.uniform(0.0, img.width);
        const double cy = rng.uniform(0.0, img.height);
        const double rad = rng.uniform(spec.dot_radius_min, spec.dot_radius_max);
        const int r0 = std::max(0, static_cast<int>(std::floor(cy - rad - 1)));
        const int r1 = std::min(img.height - 1, static_cast<int>(std::ceil(cy + rad + 1)));
        const int c0 = std::max(0, static_cast<int>(std::floor(cx - rad - 1)));
        const int c1 = std::min(img.width - 1, static_cast<int>(std::ceil(cx + rad + 1)));
        for (int r = r0; r <= r1; ++r)
            for (int c = c0; c <= c1; ++c) {
                const double dx = (c + 0.5) - cx, dy = (r + 0.5) - cy;
                if (dx * dx + dy * dy <= rad * rad) paint(r, c);
            }
    }
    return {std::move(out), std::move(mask)};
}

// Writes n_train defect-free boards, n_test defect-injected boards with
// masks, and a manifest. Byte-identical for a fixed seed.
inline DatasetManifest make_toy_dataset(const std::string& out_dir, int n_train, int n_test,
                                        CheckerSpec checker, DefectSpec defects,
                                        std::uint64_t seed) {
    if (n_train < 1 || n_test < 0) throw std::invalid_argument("need at least one training image");
    checker.check();
    defects.check();
    std::filesystem::create_directories(out_dir);

    DatasetManifest manifest;
    char name[64];
    for (int i = 0; i < n_train; ++i) {
        checker.seed = derive_seed(seed, 2 * i);
        const Image img = gen_checkerboard(checker);
        std::snprintf(name, sizeof(name), "train_%04d.png", i);
        const std::string path = out_dir + "/" + name;
        save_image(img, path, 8);
        manifest.train_images.push_back(path);
    }
    for (int i = 0; i < n_test; ++i) {
        checker.seed = derive_seed(seed, 2 * (n_train + i));
        defects.seed = derive_seed(seed, 2 * (n_train + i) + 1);
        const Image clean = gen_checkerboard(checker);
        const auto [img, mask] = inject_defects(clean, defects);
        std::snprintf(name, sizeof(name), "test_%04d.png", i);
        const std::string img_path = out_dir + "/" + name;
        std::snprintf(name, sizeof(name), "test_%04d_mask.png", i);
        const std::string mask_path = out_dir + "/" + name;
        save_image(img, img_path, 8);
        save_mask(mask, mask_path);
        manifest.test_images.emplace_back(img_path, mask_path);
    }

    // manifest records paths relative to its own directory
    DatasetManifest rel;
    rel.validation_fraction = manifest.validation_fraction;
    for (const auto& p : manifest.train_images)
        rel.train_images.push_back(std::filesystem::path(p).filename().string());
    for (const auto& [img, mask] : manifest.test_images)
        rel.test_images.emplace_back(std::filesystem::path(img).filename().string(),
                                     std::filesystem::path(mask).filename().string());
    save_manifest(rel, out_dir + "/manifest.txt");
    return manifest;
}

}  // namespace texseg
