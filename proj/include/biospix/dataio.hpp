#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "biospix/image.hpp"
#include "biospix/tensor.hpp"

namespace biospix {

// One dataset row: an RGB image, its category label map, and which split it
// belongs to ("train", "val" or "test").
struct ManifestRow {
    std::string image;
    std::string labels;
    std::string split;
};

// CSV with three columns per row, no header. Relative paths are kept as-is;
// callers resolve them against the manifest's directory if they want to.
std::vector<ManifestRow> load_manifest(const std::string& path);
void save_manifest(const std::string& path, const std::vector<ManifestRow>& rows);

// Paths from a manifest row resolved against the directory the manifest sits in.
std::string resolve_against(const std::string& manifest_path, const std::string& rel);

struct SamplePair {
    Tensor<float> image;  // [1,3,H,W] in [0,1]
    LabelMap labels;      // same extents
};

// Loads an image/label pair and cross-checks it: unreadable file -> IoError,
// extent mismatch -> ShapeError, label id >= max_categories -> CategoryOverflowError.
SamplePair load_pair(const std::string& image_path, const std::string& label_path,
                     int max_categories);

// Identical random square crop + horizontal flip (p = 1/2) applied to image and
// labels. crop must be a positive multiple of 16 and fit inside the pair.
SamplePair random_crop_flip(const SamplePair& p, int crop, std::uint64_t seed);

}  // namespace biospix
