#pragma once

#include <vector>

#include "biospix/image.hpp"
#include "biospix/tensor.hpp"

namespace biospix {

struct SlicConfig {
    int k = 100;               // target superpixel count
    double compactness = 10.0;
    int iterations = 10;

    void validate() const {
        if (k < 1) throw ParamError("slic: K must be >= 1");
        if (iterations < 1) throw ParamError("slic: iterations must be >= 1");
        if (!(compactness > 0.0)) throw ParamError("slic: compactness must be positive");
    }
};

struct SlicResult {
    SuperpixelMap map;
    std::vector<double> residuals;  // summed center displacement per iteration
};

// Classic grid-seeded Lab clustering: seeds perturbed to the lowest-gradient
// position in their 3x3 neighborhood, assignment within 2S x 2S windows under
// D = sqrt(d_lab^2 + (d_xy * m / S)^2), center updates, then connectivity
// enforcement. Fully deterministic.
SlicResult slic_run(const Tensor<float>& rgb, const SlicConfig& cfg);
SuperpixelMap slic(const Tensor<float>& rgb, const SlicConfig& cfg);

}  // namespace biospix
