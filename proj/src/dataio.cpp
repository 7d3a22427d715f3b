#include "biospix/dataio.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "biospix/common.hpp"
#include "biospix/pngio.hpp"

namespace biospix {

std::vector<ManifestRow> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("manifest: cannot open " + path);
    std::vector<ManifestRow> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        ManifestRow r;
        std::string extra;
        if (!std::getline(ss, r.image, ',') || !std::getline(ss, r.labels, ',') ||
            !std::getline(ss, r.split, ','))
            throw IoError("manifest: line " + std::to_string(lineno) +
                          " needs image,labels,split");
        if (std::getline(ss, extra, ','))
            throw IoError("manifest: line " + std::to_string(lineno) + " has extra columns");
        if (r.split != "train" && r.split != "val" && r.split != "test")
            throw IoError("manifest: line " + std::to_string(lineno) + " bad split '" +
                          r.split + "' (want train|val|test)");
        rows.push_back(std::move(r));
    }
    return rows;
}

void save_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("manifest: cannot write " + path);
    for (const auto& r : rows) out << r.image << "," << r.labels << "," << r.split << "\n";
    if (!out) throw IoError("manifest: write failed for " + path);
}

std::string resolve_against(const std::string& manifest_path, const std::string& rel) {
    std::filesystem::path p(rel);
    if (p.is_absolute()) return rel;
    return (std::filesystem::path(manifest_path).parent_path() / p).string();
}

SamplePair load_pair(const std::string& image_path, const std::string& label_path,
                     int max_categories) {
    SamplePair out;
    out.image = load_image_rgb(image_path);
    out.labels = load_label_png(label_path);
    const int h = out.image.shape()[2], w = out.image.shape()[3];
    if (out.labels.h != h || out.labels.w != w)
        throw ShapeError("pair: image " + std::to_string(h) + "x" + std::to_string(w) +
                         " vs labels " + std::to_string(out.labels.h) + "x" +
                         std::to_string(out.labels.w) + " (" + label_path + ")");
    for (size_t i = 0; i < out.labels.v.size(); ++i)
        if (out.labels.v[i] < 0 || out.labels.v[i] >= max_categories)
            throw CategoryOverflowError("pair: label id " + std::to_string(out.labels.v[i]) +
                                        " at pixel " + std::to_string(i / out.labels.w) + "," +
                                        std::to_string(i % out.labels.w) + " outside [0," +
                                        std::to_string(max_categories) + ") in " + label_path);
    return out;
}

SamplePair random_crop_flip(const SamplePair& p, int crop, std::uint64_t seed) {
    const int h = p.image.shape()[2], w = p.image.shape()[3];
    if (crop < 16 || crop % 16 != 0)
        throw ParamError("crop: size must be a positive multiple of 16, got " +
                         std::to_string(crop));
    if (crop > h || crop > w)
        throw ParamError("crop: size " + std::to_string(crop) + " exceeds image " +
                         std::to_string(h) + "x" + std::to_string(w));
    if (p.labels.h != h || p.labels.w != w)
        throw ShapeError("crop: image/label extents differ");

    Rng rng(seed);
    const int oy = static_cast<int>(rng.uniform_int(h - crop + 1));
    const int ox = static_cast<int>(rng.uniform_int(w - crop + 1));
    const bool flip = rng.bernoulli(0.5);

    SamplePair out;
    out.image = Tensor<float>::zeros({1, 3, crop, crop});
    out.labels.h = crop;
    out.labels.w = crop;
    out.labels.v.resize(static_cast<size_t>(crop) * crop);
    const float* src = p.image.data();
    float* dst = out.image.data();
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < crop; ++y)
            for (int x = 0; x < crop; ++x) {
                const int sx = flip ? ox + crop - 1 - x : ox + x;
                dst[(static_cast<size_t>(c) * crop + y) * crop + x] =
                    src[(static_cast<size_t>(c) * h + oy + y) * w + sx];
            }
    for (int y = 0; y < crop; ++y)
        for (int x = 0; x < crop; ++x) {
            const int sx = flip ? ox + crop - 1 - x : ox + x;
            out.labels.v[static_cast<size_t>(y) * crop + x] =
                p.labels.v[static_cast<size_t>(oy + y) * w + sx];
        }
    return out;
}

}  // namespace biospix
