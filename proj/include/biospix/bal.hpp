#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "biospix/image.hpp"
#include "biospix/tensor.hpp"

namespace biospix {

// Boundary-aware label parameters. Soft targets are discretized Gaussians on
// an integer channel grid: category c has its mean at channel delta_mu * c,
// width sigma_d shrinks away from region boundaries, and the support is
// truncated at +-support_radius channels and L1-normalized.
struct BalConfig {
    int c = 50;                // max categories per image
    int delta_mu = 10;         // inter-class mean spacing (channels)
    double beta = 1.2;         // sigma scale at the boundary
    double alpha = 0.5;        // distance decay exponent
    double sigma_min = 0.3;    // clamp floor
    double sigma_max = 1.2;    // clamp cap
    int support_radius = 4;    // truncation radius (channels)
    double eps_log = 1e-12;    // log floor for cross-entropy

    int k_full() const { return delta_mu * (c - 1) + 1; }

    void validate() const {
        if (c < 1) throw ParamError("bal: C must be >= 1");
        if (!(sigma_min > 0.0) || !(sigma_min <= sigma_max))
            throw ParamError("bal: need 0 < sigma_min <= sigma_max");
        if (!(alpha > 0.0) || !(beta > 0.0)) throw ParamError("bal: alpha and beta must be positive");
        if (2 * support_radius >= delta_mu)
            throw ParamError("bal: support_radius must be < delta_mu/2 for disjoint class supports");
        if (!(eps_log > 0.0)) throw ParamError("bal: eps_log must be positive");
    }
};

// sigma_d = clamp(beta * exp(-d^alpha), sigma_min, sigma_max); d = +inf maps
// to the floor.
double sigma_of_distance(double d, const BalConfig& cfg);
FieldMap sigma_field(const FieldMap& dist, const BalConfig& cfg);

// Normalized Gaussian weights exp(-j^2 / (2 sigma^2)) over integer offsets
// j in [lo, hi] (inclusive), L1-normalized over that range.
std::vector<double> gauss_weights(double sigma, int lo, int hi);

// -sum_k y_k ln(max(y_k, eps)) in nats.
double entropy_nats(const std::vector<double>& y, double eps);

// One cell of the cross-entropy distance table between two discretized
// Gaussians whose means differ by mu_gap channels and whose sigmas are
// (sigma_a, sigma_a + sigma_gap).
struct CeRow {
    double mu_gap = 0;
    double sigma_gap = 0;
    double sigma_a = 0;
    double sigma_b = 0;
    double ce = 0;
};

// Cross-entropy distances between discretized Gaussian targets for every
// (mu_gap, sigma_gap) combination, with sigma_a fixed at cfg.sigma_min.
// Beyond support overlap the distance saturates at -ln(eps_log); at
// mu_gap = 0 it sweeps near-linearly with the sigma gap.
std::vector<CeRow> bal_distance_analysis(const BalConfig& cfg, const std::vector<double>& mu_gaps,
                                         const std::vector<double>& sigma_gaps);

// Per-pixel soft targets. Only channels [0, k_stored) are materialized:
// k_stored covers every category present in the map plus its full support,
// and all higher channels of the nominal k_full layout are identically zero.
template <typename S>
struct BalTarget {
    Tensor<S> y;  // [1, k_stored, H, W]
    int k_full = 0;
    int k_stored = 0;
    FieldMap sigma;
    BalConfig cfg;
};

template <typename S>
BalTarget<S> bal_encode(const LabelMap& labels, const FieldMap& field, const BalConfig& cfg) {
    cfg.validate();
    if (labels.empty()) throw UsageError("bal_encode: empty label map");
    if (field.h != labels.h || field.w != labels.w)
        throw ShapeError("bal_encode: distance field extents do not match labels");
    const int h = labels.h, w = labels.w, r = cfg.support_radius;
    int cmax = 0;
    for (int lab : labels.v) {
        if (lab < 0 || lab >= cfg.c)
            throw CategoryOverflowError("bal_encode: label " + std::to_string(lab) + " outside [0, " +
                                        std::to_string(cfg.c) + ")");
        cmax = std::max(cmax, lab);
    }

    BalTarget<S> t;
    t.k_full = cfg.k_full();
    t.k_stored = std::min(t.k_full, cfg.delta_mu * cmax + r + 1);
    t.cfg = cfg;
    t.sigma = FieldMap(h, w);
    t.y = Tensor<S>::zeros({1, t.k_stored, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) {
            const int c = labels.at(yy, xx);
            const int mean = cfg.delta_mu * c;
            const double sd = sigma_of_distance(field.at(yy, xx), cfg);
            t.sigma.at(yy, xx) = sd;
            const int lo = -std::min(mean, r);
            const int hi = std::min(t.k_full - 1 - mean, r);
            const std::vector<double> wgt = gauss_weights(sd, lo, hi);
            for (int j = lo; j <= hi; ++j)
                t.y.data()[static_cast<std::int64_t>(mean + j) * plane + yy * w + xx] =
                    static_cast<S>(wgt[static_cast<std::size_t>(j - lo)]);
        }
    return t;
}

template <typename S>
FieldMap bal_entropy_map(const BalTarget<S>& t) {
    const int h = t.sigma.h, w = t.sigma.w;
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    FieldMap ent(h, w);
    for (std::int64_t p = 0; p < plane; ++p) {
        double acc = 0.0;
        for (int k = 0; k < t.k_stored; ++k) {
            const double v = static_cast<double>(t.y.data()[k * plane + p]);
            if (v > 0.0) acc -= v * std::log(std::max(v, t.cfg.eps_log));
        }
        ent.v[static_cast<std::size_t>(p)] = acc;
    }
    return ent;
}

}  // namespace biospix
