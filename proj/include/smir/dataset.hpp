#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "smir/image.hpp"
#include "smir/parallel.hpp"
#include "smir/png_io.hpp"

namespace smir {

// Manifest file: "key=value" header lines, a "---" separator, then one
// "image_path[,label_path]" line per example. Paths are relative to the
// manifest's directory. '#' starts a comment.
struct DatasetManifest {
    std::filesystem::path root;
    std::map<std::string, std::string> header;
    struct Entry {
        std::string image_path;
        std::string label_path;  // empty: unlabeled
    };
    std::vector<Entry> entries;

    std::string split() const {
        auto it = header.find("split");
        return it == header.end() ? "" : it->second;
    }
    int num_classes() const {
        auto it = header.find("num_classes");
        return it == header.end() ? 0 : std::stoi(it->second);
    }
};

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("manifest: cannot open " + path);
    }
    DatasetManifest m;
    m.root = std::filesystem::path(path).parent_path();
    bool in_header = true;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty() || line[0] == '#') {
            continue;
        }
        if (line == "---") {
            in_header = false;
            continue;
        }
        if (in_header) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw std::runtime_error("manifest: malformed header line '" + line + "' in " +
                                         path);
            }
            m.header[line.substr(0, eq)] = line.substr(eq + 1);
        } else {
            const auto comma = line.find(',');
            DatasetManifest::Entry e;
            e.image_path = line.substr(0, comma);
            if (comma != std::string::npos) {
                e.label_path = line.substr(comma + 1);
            }
            m.entries.push_back(std::move(e));
        }
    }
    return m;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("manifest: cannot write " + path);
    }
    for (const auto& [k, v] : m.header) {
        out << k << "=" << v << "\n";
    }
    out << "---\n";
    for (const auto& e : m.entries) {
        out << e.image_path;
        if (!e.label_path.empty()) {
            out << "," << e.label_path;
        }
        out << "\n";
    }
}

struct LoadedExample {
    std::string id;  // image path relative to the manifest
    Image image;
    std::optional<LabelMap> label;
};

// Decodes every entry, ordered deterministically by image path. Decoding is
// parallel across files; results land in per-index slots.
inline std::vector<LoadedExample> load_dataset(const DatasetManifest& manifest) {
    auto entries = manifest.entries;
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.image_path < b.image_path; });
    std::vector<LoadedExample> out(entries.size());
    parallel_for(entries.size(), [&](std::size_t i) {
        const auto& e = entries[i];
        LoadedExample ex;
        ex.id = e.image_path;
        const auto image_file = (manifest.root / e.image_path).string();
        ex.image = read_image_png(image_file);
        if (!e.label_path.empty()) {
            const auto label_file = (manifest.root / e.label_path).string();
            LabelMap lab = read_label_png(label_file);
            if (lab.height != ex.image.height || lab.width != ex.image.width) {
                throw std::runtime_error("dataset: label " + label_file + " is " +
                                         std::to_string(lab.width) + "x" +
                                         std::to_string(lab.height) + " but image " + image_file +
                                         " is " + std::to_string(ex.image.width) + "x" +
                                         std::to_string(ex.image.height));
            }
            ex.label = std::move(lab);
        }
        out[i] = std::move(ex);
    });
    return out;
}

// Tiles an H x W image yields with remainder-dropping tiling.
inline long long tile_count(long long h, long long w, long long tile) {
    if (tile < 1) {
        throw std::invalid_argument("tile_count: tile size must be >= 1");
    }
    return (h / tile) * (w / tile);
}

// Row-major non-overlapping tiles; trailing remainders smaller than the tile
// are dropped.
inline std::vector<Image> tile_image(const Image& big, int tile) {
    if (tile < 1) {
        throw std::invalid_argument("tile_image: tile size must be >= 1");
    }
    const int ty = big.height / tile;
    const int tx = big.width / tile;
    std::vector<Image> out;
    out.reserve(static_cast<std::size_t>(ty) * tx);
    for (int y = 0; y < ty; ++y) {
        for (int x = 0; x < tx; ++x) {
            out.push_back(crop(big, y * tile, x * tile, tile, tile));
        }
    }
    return out;
}

}  // namespace smir
