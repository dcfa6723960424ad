#pragma once

#include <filesystem>
#include <string>

#include "texseg/image.hpp"
#include "texseg/rng.hpp"

namespace testutil {

inline texseg::Image random_image(int h, int w, std::uint64_t seed, float lo = 0.0f,
                                  float hi = 1.0f) {
    texseg::Rng rng(seed);
    texseg::Image img(h, w);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform(lo, hi));
    return img;
}

inline texseg::GroundTruthMask random_mask(int h, int w, std::uint64_t seed, double p = 0.5) {
    texseg::Rng rng(seed);
    texseg::GroundTruthMask mask(h, w);
    for (auto& v : mask.data) v = rng.uniform() < p ? 1 : 0;
    return mask;
}

// Scratch directory under the current working directory, wiped on construction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& name) : path(std::filesystem::path("scratch") / name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }

    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace testutil
