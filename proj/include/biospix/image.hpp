#pragma once

#include <string>
#include <vector>

#include "biospix/common.hpp"

namespace biospix {

// Per-pixel integer category ids, row-major.
struct LabelMap {
    int h = 0, w = 0;
    std::vector<int> v;

    LabelMap() = default;
    LabelMap(int h_, int w_, int fill = 0) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill) {}

    bool empty() const { return v.empty(); }
    std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
    int& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    int at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }

    int max_label() const {
        int m = 0;
        for (int x : v) m = std::max(m, x);
        return m;
    }
};

// Decoded superpixels: dense ids in [0, count).
struct SuperpixelMap {
    int h = 0, w = 0;
    std::vector<int> v;
    int count = 0;

    SuperpixelMap() = default;
    SuperpixelMap(int h_, int w_) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, 0) {}

    std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
    int& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    int at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }

    LabelMap as_labels() const {
        LabelMap m(h, w);
        m.v = v;
        return m;
    }
};

// Per-pixel scalar field (distances, sigmas, entropies), row-major doubles.
struct FieldMap {
    int h = 0, w = 0;
    std::vector<double> v;

    FieldMap() = default;
    FieldMap(int h_, int w_, double fill = 0.0) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill) {}

    double& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

}  // namespace biospix
