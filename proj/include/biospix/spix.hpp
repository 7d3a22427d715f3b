#pragma once

#include <cmath>

#include "biospix/grid.hpp"
#include "biospix/image.hpp"
#include "biospix/ops.hpp"

namespace biospix {

namespace detail {

template <typename S>
void check_assoc(const Tensor<S>& q, const GridSpec& grid, const char* op) {
    check_4d(q, op);
    if (q.dim(1) != 9) throw ShapeError(std::string(op) + ": association map needs 9 channels");
    if (q.dim(2) != grid.h || q.dim(3) != grid.w)
        throw ShapeError(std::string(op) + ": association extents " + shape_str(q.shape()) +
                         " do not match grid " + std::to_string(grid.h) + "x" + std::to_string(grid.w));
}

}  // namespace detail

// Renormalizes the 9 association channels over the grid cells that actually
// exist at each pixel; channels pointing off the grid become exactly 0.
// Interior pixels keep all nine. Differentiable.
template <typename S>
Tensor<S> normalize_border(const Tensor<S>& q, const GridSpec& grid) {
    detail::check_assoc(q, grid, "normalize_border");
    const int n = q.dim(0), h = grid.h, w = grid.w;
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const S floor = S(1e-8);
    Tensor<S> out = Tensor<S>::zeros(q.shape());
    for (int b = 0; b < n; ++b) {
        const std::int64_t base = static_cast<std::int64_t>(b) * 9 * plane;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const std::int64_t p = static_cast<std::int64_t>(y) * w + x;
                S t = S(0);
                for (int k = 0; k < 9; ++k)
                    if (grid.neighbor_cell(y, x, k) >= 0) t += q.data()[base + k * plane + p];
                const S tc = std::max(t, floor);
                for (int k = 0; k < 9; ++k)
                    if (grid.neighbor_cell(y, x, k) >= 0)
                        out.data()[base + k * plane + p] = q.data()[base + k * plane + p] / tc;
            }
    }
    if (recording<S>({&q})) {
        auto xd = q.node(), od = out.node();
        Tape<S>::current()->record(out, [xd, od, grid, n, plane, floor] {
            if (od->grad.size() == 0) return;
            if (!xd->requires_grad) return;
            auto& gx = detail::grad_buf(xd);
            const int h = grid.h, w = grid.w;
            for (int b = 0; b < n; ++b) {
                const std::int64_t base = static_cast<std::int64_t>(b) * 9 * plane;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        const std::int64_t p = static_cast<std::int64_t>(y) * w + x;
                        S t = S(0), dot = S(0);
                        for (int k = 0; k < 9; ++k)
                            if (grid.neighbor_cell(y, x, k) >= 0) {
                                t += xd->values[base + k * plane + p];
                                dot += od->grad[base + k * plane + p] * od->values[base + k * plane + p];
                            }
                        const S tc = std::max(t, floor);
                        for (int k = 0; k < 9; ++k)
                            if (grid.neighbor_cell(y, x, k) >= 0) {
                                const std::int64_t i = base + k * plane + p;
                                gx[i] += t > floor ? (od->grad[i] - dot) / tc : od->grad[i] / tc;
                            }
                    }
            }
        });
    }
    return out;
}

// Soft centers: center(s) = sum_p q_s(p) f(p) / sum_p q_s(p) over the pixels
// whose 9-neighborhood contains cell s. Output [N, C, rows, cols]; the
// denominator is floored at 1e-8. Differentiable in q and feats.
template <typename S>
Tensor<S> spix_aggregate(const Tensor<S>& q, const Tensor<S>& feats, const GridSpec& grid) {
    detail::check_assoc(q, grid, "spix_aggregate");
    detail::check_4d(feats, "spix_aggregate");
    if (feats.dim(0) != q.dim(0) || feats.dim(2) != grid.h || feats.dim(3) != grid.w)
        throw ShapeError("spix_aggregate: feature extents do not match association map");
    const int n = q.dim(0), c = feats.dim(1), h = grid.h, w = grid.w, cells = grid.cells();
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const S floor = S(1e-8);

    ArrayX<S> num = ArrayX<S>::Zero(static_cast<std::int64_t>(n) * c * cells);
    ArrayX<S> den = ArrayX<S>::Zero(static_cast<std::int64_t>(n) * cells);
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const std::int64_t p = static_cast<std::int64_t>(y) * w + x;
                for (int k = 0; k < 9; ++k) {
                    const int cell = grid.neighbor_cell(y, x, k);
                    if (cell < 0) continue;
                    const S qv = q.data()[(static_cast<std::int64_t>(b) * 9 + k) * plane + p];
                    den[static_cast<std::int64_t>(b) * cells + cell] += qv;
                    for (int j = 0; j < c; ++j)
                        num[(static_cast<std::int64_t>(b) * c + j) * cells + cell] +=
                            qv * feats.data()[(static_cast<std::int64_t>(b) * c + j) * plane + p];
                }
            }

    Tensor<S> out = Tensor<S>::zeros({n, c, grid.rows, grid.cols});
    for (int b = 0; b < n; ++b)
        for (int j = 0; j < c; ++j)
            for (int cell = 0; cell < cells; ++cell)
                out.data()[(static_cast<std::int64_t>(b) * c + j) * cells + cell] =
                    num[(static_cast<std::int64_t>(b) * c + j) * cells + cell] /
                    std::max(den[static_cast<std::int64_t>(b) * cells + cell], floor);

    if (recording<S>({&q, &feats})) {
        auto qd = q.node(), fd = feats.node(), od = out.node();
        Tape<S>::current()->record(out, [qd, fd, od, num, den, grid, n, c, plane, cells, floor] {
            if (od->grad.size() == 0) return;
            const int h = grid.h, w = grid.w;
            // gradients w.r.t. the numerator and denominator accumulators
            ArrayX<S> dnum = ArrayX<S>::Zero(num.size());
            ArrayX<S> dden = ArrayX<S>::Zero(den.size());
            for (int b = 0; b < n; ++b)
                for (int j = 0; j < c; ++j)
                    for (int cell = 0; cell < cells; ++cell) {
                        const std::int64_t ci = (static_cast<std::int64_t>(b) * c + j) * cells + cell;
                        const std::int64_t di = static_cast<std::int64_t>(b) * cells + cell;
                        const S dc = std::max(den[di], floor);
                        const S g = od->grad[ci];
                        dnum[ci] = g / dc;
                        if (den[di] > floor) dden[di] -= g * num[ci] / (dc * dc);
                    }
            const bool want_q = qd->requires_grad, want_f = fd->requires_grad;
            if (want_q) detail::grad_buf(qd);
            if (want_f) detail::grad_buf(fd);
            for (int b = 0; b < n; ++b)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        const std::int64_t p = static_cast<std::int64_t>(y) * w + x;
                        for (int k = 0; k < 9; ++k) {
                            const int cell = grid.neighbor_cell(y, x, k);
                            if (cell < 0) continue;
                            const std::int64_t qi = (static_cast<std::int64_t>(b) * 9 + k) * plane + p;
                            const std::int64_t di = static_cast<std::int64_t>(b) * cells + cell;
                            if (want_q) {
                                S acc = dden[di];
                                for (int j = 0; j < c; ++j)
                                    acc += dnum[(static_cast<std::int64_t>(b) * c + j) * cells + cell] *
                                           fd->values[(static_cast<std::int64_t>(b) * c + j) * plane + p];
                                qd->grad[qi] += acc;
                            }
                            if (want_f) {
                                const S qv = qd->values[qi];
                                for (int j = 0; j < c; ++j)
                                    fd->grad[(static_cast<std::int64_t>(b) * c + j) * plane + p] +=
                                        qv * dnum[(static_cast<std::int64_t>(b) * c + j) * cells + cell];
                            }
                        }
                    }
        });
    }
    return out;
}

// Per-pixel reconstruction f'(p) = sum_{s in N9(p)} q_s(p) * center_s: a
// convex combination of the neighboring cell centers when q is normalized.
template <typename S>
Tensor<S> spix_reconstruct(const Tensor<S>& q, const Tensor<S>& centers, const GridSpec& grid) {
    detail::check_assoc(q, grid, "spix_reconstruct");
    detail::check_4d(centers, "spix_reconstruct");
    if (centers.dim(0) != q.dim(0) || centers.dim(2) != grid.rows || centers.dim(3) != grid.cols)
        throw ShapeError("spix_reconstruct: centers do not match the cell grid");
    const int n = q.dim(0), c = centers.dim(1), h = grid.h, w = grid.w, cells = grid.cells();
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;

    Tensor<S> out = Tensor<S>::zeros({n, c, h, w});
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const std::int64_t p = static_cast<std::int64_t>(y) * w + x;
                for (int k = 0; k < 9; ++k) {
                    const int cell = grid.neighbor_cell(y, x, k);
                    if (cell < 0) continue;
                    const S qv = q.data()[(static_cast<std::int64_t>(b) * 9 + k) * plane + p];
                    for (int j = 0; j < c; ++j)
                        out.data()[(static_cast<std::int64_t>(b) * c + j) * plane + p] +=
                            qv * centers.data()[(static_cast<std::int64_t>(b) * c + j) * cells + cell];
                }
            }

    if (recording<S>({&q, &centers})) {
        auto qd = q.node(), cd = centers.node(), od = out.node();
        Tape<S>::current()->record(out, [qd, cd, od, grid, n, c, plane, cells] {
            if (od->grad.size() == 0) return;
            const int h = grid.h, w = grid.w;
            const bool want_q = qd->requires_grad, want_c = cd->requires_grad;
            if (want_q) detail::grad_buf(qd);
            if (want_c) detail::grad_buf(cd);
            for (int b = 0; b < n; ++b)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        const std::int64_t p = static_cast<std::int64_t>(y) * w + x;
                        for (int k = 0; k < 9; ++k) {
                            const int cell = grid.neighbor_cell(y, x, k);
                            if (cell < 0) continue;
                            const std::int64_t qi = (static_cast<std::int64_t>(b) * 9 + k) * plane + p;
                            if (want_q) {
                                S acc = S(0);
                                for (int j = 0; j < c; ++j)
                                    acc += od->grad[(static_cast<std::int64_t>(b) * c + j) * plane + p] *
                                           cd->values[(static_cast<std::int64_t>(b) * c + j) * cells + cell];
                                qd->grad[qi] += acc;
                            }
                            if (want_c) {
                                const S qv = qd->values[qi];
                                for (int j = 0; j < c; ++j)
                                    cd->grad[(static_cast<std::int64_t>(b) * c + j) * cells + cell] +=
                                        qv * od->grad[(static_cast<std::int64_t>(b) * c + j) * plane + p];
                            }
                        }
                    }
        });
    }
    return out;
}

// Components failing the size or largest-of-label test are absorbed into the
// most adjacent surviving region; ids come out dense in row-major first-
// appearance order and every output superpixel is 4-connected.
SuperpixelMap enforce_connectivity(const LabelMap& m, int min_size);
inline SuperpixelMap enforce_connectivity(const SuperpixelMap& m, int min_size) {
    return enforce_connectivity(m.as_labels(), min_size);
}

// Hard decode: per-pixel argmax over the valid association channels, ties
// broken toward the owner cell then the lowest cell id, followed by
// connectivity enforcement. min_size < 0 selects the default S*S/16.
template <typename S>
SuperpixelMap decode_hard(const Tensor<S>& q, const GridSpec& grid, int min_size = -1) {
    detail::check_assoc(q, grid, "decode_hard");
    if (q.dim(0) != 1) throw ShapeError("decode_hard: expected a single-image association map");
    if (min_size < 0) min_size = grid.s * grid.s / 16;
    const int h = grid.h, w = grid.w;
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    LabelMap raw(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::int64_t p = static_cast<std::int64_t>(y) * w + x;
            S best = S(0);
            bool any = false;
            for (int k = 0; k < 9; ++k) {
                if (grid.neighbor_cell(y, x, k) < 0) continue;
                const S v = q.data()[k * plane + p];
                if (!any || v > best) {
                    best = v;
                    any = true;
                }
            }
            int pick = -1;
            if (q.data()[4 * plane + p] == best)
                pick = 4;  // owner cell wins ties
            else
                for (int k = 0; k < 9; ++k)
                    if (grid.neighbor_cell(y, x, k) >= 0 && q.data()[k * plane + p] == best) {
                        pick = k;
                        break;
                    }
            raw.at(y, x) = grid.neighbor_cell(y, x, pick);
        }
    return enforce_connectivity(raw, min_size);
}

}  // namespace biospix
