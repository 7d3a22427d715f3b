#pragma once

#include <string>

#include "biospix/image.hpp"
#include "biospix/tensor.hpp"

namespace biospix {

// 8-bit RGB PNG -> [1, 3, H, W] floats in [0,1]. Grayscale, palette and
// alpha variants are expanded/stripped on load.
Tensor<float> load_image_rgb(const std::string& path);

// Clamps to [0,1] and writes an 8-bit RGB PNG.
void save_image_rgb(const std::string& path, const Tensor<float>& img);

// Category/superpixel ids as 16-bit grayscale PNG; round trips bit-exactly.
LabelMap load_label_png(const std::string& path);
void save_label_png(const std::string& path, const LabelMap& m);
void save_label_png(const std::string& path, const SuperpixelMap& m);

// Scalar field rendered to 8-bit grayscale over [lo, hi].
void save_gray_png(const std::string& path, const FieldMap& f, double lo, double hi);

}  // namespace biospix
