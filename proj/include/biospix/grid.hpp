#pragma once

#include <algorithm>
#include <string>

#include "biospix/common.hpp"

namespace biospix {

// Regular superpixel grid over an H x W image with sampling interval S.
// Cells tile the image in row-major order; border cells may be ragged. The
// 9 association channels of a pixel address the 3x3 block of cells around
// its owner, channel k = (dr+1)*3 + (dc+1) for dr, dc in {-1, 0, 1}.
struct GridSpec {
    int h = 0, w = 0, s = 0;
    int rows = 0, cols = 0;

    int cells() const { return rows * cols; }
    int owner_row(int y) const { return y / s; }
    int owner_col(int x) const { return x / s; }
    int cell_of(int y, int x) const { return owner_row(y) * cols + owner_col(x); }

    // Cell addressed by association channel k at pixel (y, x); -1 when that
    // neighbor falls outside the grid.
    int neighbor_cell(int y, int x, int k) const {
        const int r = owner_row(y) + k / 3 - 1;
        const int c = owner_col(x) + k % 3 - 1;
        if (r < 0 || r >= rows || c < 0 || c >= cols) return -1;
        return r * cols + c;
    }

    int cell_y0(int r) const { return r * s; }
    int cell_x0(int c) const { return c * s; }
    int cell_y1(int r) const { return std::min(h, (r + 1) * s); }  // exclusive
    int cell_x1(int c) const { return std::min(w, (c + 1) * s); }

    // Center of a cell in pixel coordinates (used for seeding and tests).
    double cell_center_y(int r) const { return 0.5 * (cell_y0(r) + cell_y1(r) - 1); }
    double cell_center_x(int c) const { return 0.5 * (cell_x0(c) + cell_x1(c) - 1); }
};

inline GridSpec init_grid(int h, int w, int s) {
    if (h < 1 || w < 1 || s < 1) throw ParamError("init_grid: extents and interval must be >= 1");
    if (s > std::min(h, w))
        throw ParamError("init_grid: interval " + std::to_string(s) + " exceeds min extent " +
                         std::to_string(std::min(h, w)));
    GridSpec g;
    g.h = h;
    g.w = w;
    g.s = s;
    g.rows = (h + s - 1) / s;
    g.cols = (w + s - 1) / s;
    return g;
}

}  // namespace biospix
