#pragma once

#include <utility>
#include <vector>

#include "biospix/grid.hpp"
#include "biospix/image.hpp"
#include "biospix/tensor.hpp"

namespace biospix {

struct MetricsReport {
    double asa = 0, br = 0, bp = 0, co = 0;
    int superpixel_count = 0;
    int boundary_tolerance = 2;
};

// Achievable segmentation accuracy: each superpixel votes for its majority
// ground-truth region; ASA = covered pixels / total pixels.
double asa(const LabelMap& sp, const LabelMap& gt);
double asa(const SuperpixelMap& sp, const LabelMap& gt);

// Boundary pixels are down/right label transitions (so a straight edge
// produces a 1-pixel-thick boundary and the image border is not a boundary).
// BR = fraction of gt-boundary pixels with a predicted boundary pixel within
// Chebyshev distance tol, BP the converse. Empty reference sets score 1.
std::pair<double, double> boundary_recall_precision(const LabelMap& sp, const LabelMap& gt, int tol = 2);
std::pair<double, double> boundary_recall_precision(const SuperpixelMap& sp, const LabelMap& gt,
                                                    int tol = 2);

// Size-weighted isoperimetric quotient, each superpixel's 4*pi*A/P^2 clipped
// at 1; P counts pixel sides facing another label or the image border.
double compactness(const LabelMap& sp);
double compactness(const SuperpixelMap& sp);

MetricsReport evaluate_superpixels(const SuperpixelMap& sp, const LabelMap& gt, int tol = 2);

// Decodes one association map at several sampling intervals and reports the
// metric set at each granularity.
std::vector<MetricsReport> metrics_sweep(const Tensor<float>& assoc, const std::vector<int>& intervals,
                                         const LabelMap& gt, int tol = 2);

}  // namespace biospix
