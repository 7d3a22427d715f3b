#pragma once

#include <cmath>

#include "biospix/spix.hpp"

namespace biospix {

// Objective weights and the training protocol constants.
struct LossConfig {
    double m = 0.003;          // position-term weight
    int s = 16;                // sampling interval
    double eps_log = 1e-12;
    double lr = 8e-5;
    double lr_decay_factor = 0.5;
    std::int64_t lr_decay_at = 8000;  // iterations before the step
    int batch = 8;
    int crop = 208;

    void validate() const {
        if (m < 0.0) throw ParamError("loss: m must be >= 0");
        if (s < 1) throw ParamError("loss: sampling interval must be >= 1");
        if (!(lr > 0.0)) throw ParamError("loss: lr must be positive");
        if (!(eps_log > 0.0)) throw ParamError("loss: eps_log must be positive");
        if (!(lr_decay_factor > 0.0)) throw ParamError("loss: decay factor must be positive");
        if (batch < 1) throw ParamError("loss: batch must be >= 1");
        if (crop < 16 || crop % 16 != 0) throw ParamError("loss: crop must be a positive multiple of 16");
    }
};

// Iterations [0, lr_decay_at) run at the base rate, everything after at the
// decayed rate.
inline double schedule_lr(const LossConfig& cfg, std::int64_t iter) {
    return iter < cfg.lr_decay_at ? cfg.lr : cfg.lr * cfg.lr_decay_factor;
}

template <typename S>
struct LossResult {
    Tensor<S> total;  // scalar, recorded on the active tape
    double value = 0, ce = 0, pos = 0;
};

// total = mean-per-pixel cross-entropy between the soft targets and their
// reconstruction through the association map, plus (m/S) times the summed
// position reconstruction error (both averaged over the batch dimension).
template <typename S>
LossResult<S> superpixel_loss(const Tensor<S>& assoc, const Tensor<S>& targets, const Tensor<S>& pos,
                              const GridSpec& grid, const LossConfig& cfg) {
    cfg.validate();
    detail::check_assoc(assoc, grid, "superpixel_loss");
    detail::check_4d(targets, "superpixel_loss");
    detail::check_4d(pos, "superpixel_loss");
    const int n = assoc.dim(0), h = grid.h, w = grid.w;
    if (targets.dim(0) != n || targets.dim(2) != h || targets.dim(3) != w)
        throw ShapeError("superpixel_loss: target extents do not match association map");
    if (pos.dim(0) != n || pos.dim(1) != 2 || pos.dim(2) != h || pos.dim(3) != w)
        throw ShapeError("superpixel_loss: position features must be [N, 2, H, W]");

    Tensor<S> qn = normalize_border(assoc, grid);

    Tensor<S> recon_y = spix_reconstruct(qn, spix_aggregate(qn, targets, grid), grid);
    Tensor<S> ce_map = scale(channel_sum(mul(targets, log_floor(recon_y, static_cast<S>(cfg.eps_log)))),
                             S(-1));
    Tensor<S> ce = scale(sum_all(ce_map), S(1) / static_cast<S>(static_cast<double>(n) * h * w));

    Tensor<S> recon_p = spix_reconstruct(qn, spix_aggregate(qn, pos, grid), grid);
    Tensor<S> dist = channel_l2norm(sub(pos, recon_p));
    Tensor<S> pos_term = scale(sum_all(dist), static_cast<S>(cfg.m / cfg.s / n));

    LossResult<S> r;
    r.total = add(ce, pos_term);
    r.ce = static_cast<double>(ce.item());
    r.pos = static_cast<double>(pos_term.item());
    r.value = static_cast<double>(r.total.item());
    if (!std::isfinite(r.value)) {
        const std::int64_t plane = static_cast<std::int64_t>(h) * w;
        for (std::int64_t i = 0; i < ce_map.size(); ++i)
            if (!std::isfinite(static_cast<double>(ce_map[i])) ||
                !std::isfinite(static_cast<double>(dist[i]))) {
                const std::int64_t p = i % plane;
                const int y = static_cast<int>(p / w), x = static_cast<int>(p % w);
                throw NumericError("superpixel_loss: non-finite value at pixel y=" + std::to_string(y) +
                                   " x=" + std::to_string(x) + " cell=" + std::to_string(grid.cell_of(y, x)));
            }
        throw NumericError("superpixel_loss: non-finite total");
    }
    return r;
}

}  // namespace biospix
