#pragma once

#include <cstdint>

#include "biospix/image.hpp"
#include "biospix/tensor.hpp"

namespace biospix {

// Seeded generator for desk-scale segmentation scenes: a background plus a
// handful of star-convex polygons and rotated ellipses, painted in order so
// later shapes occlude earlier ones.  Colors are flat per category, with
// optional per-category jitter and per-pixel additive noise.
struct SynthConfig {
    int h = 64;
    int w = 64;
    int regions_min = 3;   // categories including background
    int regions_max = 6;
    double jitter = 0.02;  // stddev of the per-category color offset
    double noise = 0.01;   // stddev of per-pixel additive noise
    int count = 8;         // corpus size when generating a batch of scenes
    std::uint64_t seed = 1;

    void validate() const;
};

struct SynthScene {
    Tensor<float> image;  // [1,3,h,w], values in [0,1]
    LabelMap labels;      // category ids 0..n_categories-1, each covering >= 16 px
    int n_categories = 0;
};

// Deterministic in cfg (including cfg.seed).  Scenes where occlusion starves a
// category below 16 pixels are redrawn from fresh draws of the same stream.
SynthScene make_scene(const SynthConfig& cfg);

}  // namespace biospix
