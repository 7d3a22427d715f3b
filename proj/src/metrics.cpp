#include "biospix/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "biospix/spix.hpp"

namespace biospix {

namespace {

void check_extents(const LabelMap& a, const LabelMap& b, const char* op) {
    if (a.empty() || b.empty()) throw UsageError(std::string(op) + ": empty map");
    if (a.h != b.h || a.w != b.w) throw UsageError(std::string(op) + ": extent mismatch");
}

std::vector<char> boundary_mask(const LabelMap& m) {
    std::vector<char> b(static_cast<std::size_t>(m.h) * m.w, 0);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            const bool right = x + 1 < m.w && m.at(y, x) != m.at(y, x + 1);
            const bool down = y + 1 < m.h && m.at(y, x) != m.at(y + 1, x);
            if (right || down) b[static_cast<std::size_t>(y) * m.w + x] = 1;
        }
    return b;
}

// fraction of set pixels in `ref` with a set pixel of `near` within
// Chebyshev distance tol; 1.0 when ref is empty
double coverage(const std::vector<char>& ref, const std::vector<char>& near, int h, int w, int tol) {
    std::int64_t total = 0, hit = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!ref[static_cast<std::size_t>(y) * w + x]) continue;
            ++total;
            bool found = false;
            for (int dy = -tol; dy <= tol && !found; ++dy)
                for (int dx = -tol; dx <= tol && !found; ++dx) {
                    const int ny = y + dy, nx = x + dx;
                    if (ny >= 0 && ny < h && nx >= 0 && nx < w &&
                        near[static_cast<std::size_t>(ny) * w + nx])
                        found = true;
                }
            if (found) ++hit;
        }
    return total == 0 ? 1.0 : static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace

double asa(const LabelMap& sp, const LabelMap& gt) {
    check_extents(sp, gt, "asa");
    // overlap counts per (superpixel, gt region) pair
    std::unordered_map<std::int64_t, std::int64_t> overlap;
    std::unordered_map<int, int> gt_dense;
    for (std::int64_t i = 0; i < sp.size(); ++i) {
        auto [it, fresh] = gt_dense.try_emplace(gt.v[static_cast<std::size_t>(i)],
                                                static_cast<int>(gt_dense.size()));
        (void)fresh;
        const std::int64_t key =
            static_cast<std::int64_t>(sp.v[static_cast<std::size_t>(i)]) * (gt.size() + 1) + it->second;
        ++overlap[key];
    }
    std::unordered_map<int, std::int64_t> best;
    for (const auto& [key, cnt] : overlap) {
        const int s = static_cast<int>(key / (gt.size() + 1));
        auto [it, fresh] = best.try_emplace(s, cnt);
        if (!fresh) it->second = std::max(it->second, cnt);
    }
    std::int64_t covered = 0;
    for (const auto& [s, cnt] : best) covered += cnt;
    return static_cast<double>(covered) / static_cast<double>(sp.size());
}

double asa(const SuperpixelMap& sp, const LabelMap& gt) { return asa(sp.as_labels(), gt); }

std::pair<double, double> boundary_recall_precision(const LabelMap& sp, const LabelMap& gt, int tol) {
    check_extents(sp, gt, "boundary_recall_precision");
    if (tol < 0) throw ParamError("boundary_recall_precision: tol must be >= 0");
    const std::vector<char> bs = boundary_mask(sp), bg = boundary_mask(gt);
    return {coverage(bg, bs, gt.h, gt.w, tol), coverage(bs, bg, gt.h, gt.w, tol)};
}

std::pair<double, double> boundary_recall_precision(const SuperpixelMap& sp, const LabelMap& gt, int tol) {
    return boundary_recall_precision(sp.as_labels(), gt, tol);
}

double compactness(const LabelMap& sp) {
    if (sp.empty()) throw UsageError("compactness: empty map");
    std::unordered_map<int, std::int64_t> area, perim;
    for (int y = 0; y < sp.h; ++y)
        for (int x = 0; x < sp.w; ++x) {
            const int id = sp.at(y, x);
            ++area[id];
            const int dy[4] = {-1, 0, 0, 1}, dx[4] = {0, -1, 1, 0};
            for (int d = 0; d < 4; ++d) {
                const int ny = y + dy[d], nx = x + dx[d];
                if (ny < 0 || ny >= sp.h || nx < 0 || nx >= sp.w || sp.at(ny, nx) != id) ++perim[id];
            }
        }
    const double n = static_cast<double>(sp.size());
    // deterministic order: accumulate over sorted ids
    std::vector<int> ids;
    ids.reserve(area.size());
    for (const auto& [id, a] : area) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    double co = 0.0;
    for (int id : ids) {
        const double a = static_cast<double>(area[id]);
        const double p = static_cast<double>(perim[id]);
        co += (a / n) * std::min(1.0, 4.0 * M_PI * a / (p * p));
    }
    return co;
}

double compactness(const SuperpixelMap& sp) { return compactness(sp.as_labels()); }

MetricsReport evaluate_superpixels(const SuperpixelMap& sp, const LabelMap& gt, int tol) {
    MetricsReport r;
    r.asa = asa(sp, gt);
    std::tie(r.br, r.bp) = boundary_recall_precision(sp, gt, tol);
    r.co = compactness(sp);
    r.superpixel_count = sp.count;
    r.boundary_tolerance = tol;
    return r;
}

std::vector<MetricsReport> metrics_sweep(const Tensor<float>& assoc, const std::vector<int>& intervals,
                                         const LabelMap& gt, int tol) {
    std::vector<MetricsReport> rows;
    for (int s : intervals) {
        const GridSpec grid = init_grid(gt.h, gt.w, s);
        rows.push_back(evaluate_superpixels(decode_hard(assoc, grid), gt, tol));
    }
    return rows;
}

}  // namespace biospix
