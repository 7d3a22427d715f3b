#include "biospix/distance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <vector>

namespace biospix {

namespace {

constexpr double kFar = 1e18;

// 1-d squared-distance lower envelope (two-pass exact transform).
void dt1d(const std::vector<double>& f, std::vector<double>& d, int n, std::vector<int>& v,
          std::vector<double>& z) {
    int k = 0;
    v[0] = 0;
    z[0] = -kFar;
    z[1] = kFar;
    for (int q = 1; q < n; ++q) {
        double s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * (q - v[k]));
        while (s <= z[k]) {
            --k;
            s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * (q - v[k]));
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kFar;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double dq = q - v[k];
        d[q] = dq * dq + f[v[k]];
    }
}

// Exact squared EDT to the site set (site[i] true), kFar where no site exists.
std::vector<double> edt_squared(const std::vector<char>& site, int h, int w) {
    std::vector<double> g(static_cast<std::size_t>(h) * w, kFar);
    // vertical pass: exact row distance to nearest site in each column
    for (int x = 0; x < w; ++x) {
        double dist = kFar;
        for (int y = 0; y < h; ++y) {
            dist = site[static_cast<std::size_t>(y) * w + x] ? 0.0 : (dist < kFar ? dist + 1.0 : kFar);
            g[static_cast<std::size_t>(y) * w + x] = dist;
        }
        dist = kFar;
        for (int y = h - 1; y >= 0; --y) {
            dist = site[static_cast<std::size_t>(y) * w + x] ? 0.0 : (dist < kFar ? dist + 1.0 : kFar);
            g[static_cast<std::size_t>(y) * w + x] = std::min(g[static_cast<std::size_t>(y) * w + x], dist);
        }
    }
    for (auto& e : g)
        if (e < kFar) e = e * e;
    // horizontal pass: parabola envelope per row
    std::vector<double> f(w), d(w), z(static_cast<std::size_t>(w) + 1);
    std::vector<int> v(w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) f[x] = g[static_cast<std::size_t>(y) * w + x];
        dt1d(f, d, w, v, z);
        for (int x = 0; x < w; ++x) g[static_cast<std::size_t>(y) * w + x] = d[x];
    }
    return g;
}

}  // namespace

FieldMap distance_field(const LabelMap& labels, int connectivity) {
    if (labels.empty()) throw UsageError("distance_field: empty label map");
    if (connectivity != 4 && connectivity != 8)
        throw ParamError("distance_field: connectivity must be 4 or 8");
    const int h = labels.h, w = labels.w;
    const double offset = connectivity == 4 ? 1.0 : std::sqrt(2.0);

    std::set<int> present(labels.v.begin(), labels.v.end());
    FieldMap out(h, w, std::numeric_limits<double>::infinity());
    if (present.size() < 2) return out;

    std::vector<char> site(static_cast<std::size_t>(h) * w);
    for (int lab : present) {
        for (std::int64_t i = 0; i < labels.size(); ++i) site[i] = labels.v[i] != lab;
        const std::vector<double> d2 = edt_squared(site, h, w);
        for (std::int64_t i = 0; i < labels.size(); ++i)
            if (labels.v[i] == lab) out.v[i] = std::max(std::sqrt(d2[i]) - offset, 0.0);
    }
    return out;
}

}  // namespace biospix
