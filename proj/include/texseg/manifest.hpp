#pragma once

// Plain-text dataset manifest. One record per line:
//   train <image-path>
//   test <image-path> <mask-path>
// `#` begins a comment. Relative paths resolve against the manifest directory.

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace texseg {

struct DatasetManifest {
    std::vector<std::string> train_images;
    std::vector<std::pair<std::string, std::string>> test_images;  // image, mask
    double validation_fraction = 0.1;
};

inline void check_manifest(const DatasetManifest& m) {
    std::set<std::string> train(m.train_images.begin(), m.train_images.end());
    for (const auto& [img, mask] : m.test_images)
        if (train.count(img))
            throw std::runtime_error("manifest train and test lists overlap: " + img);
    if (!(m.validation_fraction >= 0.0 && m.validation_fraction < 1.0))
        throw std::runtime_error("validation fraction must lie in [0,1)");
    for (const auto& p : m.train_images)
        if (!std::filesystem::exists(p)) throw std::runtime_error("missing train image: " + p);
    for (const auto& [img, mask] : m.test_images) {
        if (!std::filesystem::exists(img)) throw std::runtime_error("missing test image: " + img);
        if (!std::filesystem::exists(mask)) throw std::runtime_error("missing test mask: " + mask);
    }
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    const auto base = std::filesystem::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp.string() : (base / fp).string();
    };

    DatasetManifest m;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string kind;
        if (!(ls >> kind)) continue;
        if (kind == "train") {
            std::string img;
            if (!(ls >> img))
                throw std::runtime_error("manifest line " + std::to_string(lineno) + ": train needs a path");
            m.train_images.push_back(resolve(img));
        } else if (kind == "test") {
            std::string img, mask;
            if (!(ls >> img >> mask))
                throw std::runtime_error("manifest line " + std::to_string(lineno) +
                                         ": test needs image and mask paths");
            m.test_images.emplace_back(resolve(img), resolve(mask));
        } else {
            throw std::runtime_error("manifest line " + std::to_string(lineno) +
                                     ": unknown record '" + kind + "'");
        }
    }
    check_manifest(m);
    return m;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    for (const auto& p : m.train_images) out << "train " << p << "\n";
    for (const auto& [img, mask] : m.test_images) out << "test " << img << " " << mask << "\n";
    if (!out) throw std::runtime_error("manifest write failed: " + path);
}

}  // namespace texseg
