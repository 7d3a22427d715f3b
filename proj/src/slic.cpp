#include "biospix/slic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "biospix/color.hpp"
#include "biospix/spix.hpp"

namespace biospix {

namespace {

struct Center {
    double l = 0, a = 0, b = 0, y = 0, x = 0;
};

double color_dist2(const Center& c, const double* lab, std::int64_t p) {
    const double dl = c.l - lab[p * 3], da = c.a - lab[p * 3 + 1], db = c.b - lab[p * 3 + 2];
    return dl * dl + da * da + db * db;
}

}  // namespace

SlicResult slic_run(const Tensor<float>& rgb, const SlicConfig& cfg) {
    cfg.validate();
    if (rgb.ndim() != 4 || rgb.dim(0) != 1 || rgb.dim(1) != 3)
        throw ShapeError("slic: expected [1, 3, H, W] image, got " + shape_str(rgb.shape()));
    const int h = rgb.dim(2), w = rgb.dim(3);
    const std::int64_t n = static_cast<std::int64_t>(h) * w;
    if (n == 0) throw UsageError("slic: empty image");
    if (cfg.k > n) throw ParamError("slic: K exceeds pixel count");

    const std::int64_t plane = n;
    std::vector<double> lab(static_cast<std::size_t>(n) * 3);
    for (std::int64_t p = 0; p < n; ++p)
        rgb_to_lab(rgb.data()[p], rgb.data()[plane + p], rgb.data()[2 * plane + p], lab[p * 3],
                   lab[p * 3 + 1], lab[p * 3 + 2]);

    // near-square seed grid with about K cells
    const int rows = std::max(1, static_cast<int>(std::lround(std::sqrt(double(cfg.k) * h / w))));
    const int cols = std::max(1, static_cast<int>(std::lround(double(cfg.k) / rows)));
    const double s = std::sqrt(double(n) / (double(rows) * cols));
    const double mos = cfg.compactness / s;

    auto grad = [&](int y, int x) {
        const int xl = std::max(x - 1, 0), xr = std::min(x + 1, w - 1);
        const int yu = std::max(y - 1, 0), yd = std::min(y + 1, h - 1);
        double g = 0;
        for (int c = 0; c < 3; ++c) {
            const double gx = lab[(static_cast<std::int64_t>(y) * w + xr) * 3 + c] -
                              lab[(static_cast<std::int64_t>(y) * w + xl) * 3 + c];
            const double gy = lab[(static_cast<std::int64_t>(yd) * w + x) * 3 + c] -
                              lab[(static_cast<std::int64_t>(yu) * w + x) * 3 + c];
            g += gx * gx + gy * gy;
        }
        return g;
    };

    std::vector<Center> centers;
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
            int cy = std::min(h - 1, static_cast<int>((i + 0.5) * h / rows));
            int cx = std::min(w - 1, static_cast<int>((j + 0.5) * w / cols));
            // perturb to the lowest-gradient spot in the 3x3 neighborhood
            double gb = std::numeric_limits<double>::infinity();
            int by = cy, bx = cx;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int y = cy + dy, x = cx + dx;
                    if (y < 0 || y >= h || x < 0 || x >= w) continue;
                    const double g = grad(y, x);
                    if (g < gb) {
                        gb = g;
                        by = y;
                        bx = x;
                    }
                }
            const std::int64_t p = static_cast<std::int64_t>(by) * w + bx;
            centers.push_back({lab[p * 3], lab[p * 3 + 1], lab[p * 3 + 2], double(by), double(bx)});
        }

    SlicResult res;
    std::vector<int> label(static_cast<std::size_t>(n), -1);
    std::vector<double> dist(static_cast<std::size_t>(n));
    const int win = std::max(1, static_cast<int>(std::lround(s)));
    for (int it = 0; it < cfg.iterations; ++it) {
        std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
        std::fill(label.begin(), label.end(), -1);
        for (std::size_t c = 0; c < centers.size(); ++c) {
            const Center& ct = centers[c];
            const int y0 = std::max(0, static_cast<int>(ct.y) - win);
            const int y1 = std::min(h - 1, static_cast<int>(ct.y) + win);
            const int x0 = std::max(0, static_cast<int>(ct.x) - win);
            const int x1 = std::min(w - 1, static_cast<int>(ct.x) + win);
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    const std::int64_t p = static_cast<std::int64_t>(y) * w + x;
                    const double dy = ct.y - y, dx = ct.x - x;
                    const double d2 = color_dist2(ct, lab.data(), p) + (dy * dy + dx * dx) * mos * mos;
                    if (d2 < dist[static_cast<std::size_t>(p)]) {
                        dist[static_cast<std::size_t>(p)] = d2;
                        label[static_cast<std::size_t>(p)] = static_cast<int>(c);
                    }
                }
        }
        // window misses are assigned by a full scan (rare, keeps coverage)
        for (std::int64_t p = 0; p < n; ++p) {
            if (label[static_cast<std::size_t>(p)] >= 0) continue;
            const int y = static_cast<int>(p / w), x = static_cast<int>(p % w);
            for (std::size_t c = 0; c < centers.size(); ++c) {
                const double dy = centers[c].y - y, dx = centers[c].x - x;
                const double d2 = color_dist2(centers[c], lab.data(), p) + (dy * dy + dx * dx) * mos * mos;
                if (d2 < dist[static_cast<std::size_t>(p)]) {
                    dist[static_cast<std::size_t>(p)] = d2;
                    label[static_cast<std::size_t>(p)] = static_cast<int>(c);
                }
            }
        }
        // center update and residual displacement
        std::vector<Center> acc(centers.size());
        std::vector<std::int64_t> cnt(centers.size(), 0);
        for (std::int64_t p = 0; p < n; ++p) {
            const int c = label[static_cast<std::size_t>(p)];
            acc[static_cast<std::size_t>(c)].l += lab[p * 3];
            acc[static_cast<std::size_t>(c)].a += lab[p * 3 + 1];
            acc[static_cast<std::size_t>(c)].b += lab[p * 3 + 2];
            acc[static_cast<std::size_t>(c)].y += static_cast<double>(p / w);
            acc[static_cast<std::size_t>(c)].x += static_cast<double>(p % w);
            ++cnt[static_cast<std::size_t>(c)];
        }
        double moved = 0.0;
        for (std::size_t c = 0; c < centers.size(); ++c) {
            if (cnt[c] == 0) continue;
            Center nc{acc[c].l / cnt[c], acc[c].a / cnt[c], acc[c].b / cnt[c], acc[c].y / cnt[c],
                      acc[c].x / cnt[c]};
            const double dy = nc.y - centers[c].y, dx = nc.x - centers[c].x;
            moved += std::sqrt(dy * dy + dx * dx);
            centers[c] = nc;
        }
        res.residuals.push_back(moved);
    }

    LabelMap raw(h, w);
    raw.v = label;
    res.map = enforce_connectivity(raw, static_cast<int>(s * s / 16.0));
    return res;
}

SuperpixelMap slic(const Tensor<float>& rgb, const SlicConfig& cfg) { return slic_run(rgb, cfg).map; }

}  // namespace biospix
