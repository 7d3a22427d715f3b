#pragma once

#include "biospix/color.hpp"
#include "biospix/tensor.hpp"

namespace biospix {

// Normalized pixel coordinates: channel 0 = y/(H-1), channel 1 = x/(W-1),
// both in [0,1] (0 when the extent is 1). Shape [1, 2, H, W].
template <typename S>
Tensor<S> coord_features(int h, int w) {
    if (h < 1 || w < 1) throw ParamError("coord_features: extents must be >= 1");
    Tensor<S> t = Tensor<S>::zeros({1, 2, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::int64_t p = static_cast<std::int64_t>(y) * w + x;
            t.data()[p] = h > 1 ? static_cast<S>(double(y) / (h - 1)) : S(0);
            t.data()[plane + p] = w > 1 ? static_cast<S>(double(x) / (w - 1)) : S(0);
        }
    return t;
}

// Network input from an sRGB image tensor [1, 3, H, W] in [0,1]: Lab color
// scaled to roughly unit range (L/100, a/110, b/110), plus the normalized
// coordinate channels when in_channels is 5.
template <typename S>
Tensor<S> input_features(const Tensor<S>& rgb, int in_channels) {
    if (rgb.ndim() != 4 || rgb.dim(0) != 1 || rgb.dim(1) != 3)
        throw ShapeError("input_features: expected [1, 3, H, W] image, got " + shape_str(rgb.shape()));
    if (in_channels != 3 && in_channels != 5) throw ParamError("input_features: in_channels must be 3 or 5");
    const int h = rgb.dim(2), w = rgb.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    Tensor<S> out = Tensor<S>::zeros({1, in_channels, h, w});
    for (std::int64_t p = 0; p < plane; ++p) {
        double l, a, b;
        rgb_to_lab(static_cast<double>(rgb.data()[p]), static_cast<double>(rgb.data()[plane + p]),
                   static_cast<double>(rgb.data()[2 * plane + p]), l, a, b);
        out.data()[p] = static_cast<S>(l / 100.0);
        out.data()[plane + p] = static_cast<S>(a / 110.0);
        out.data()[2 * plane + p] = static_cast<S>(b / 110.0);
    }
    if (in_channels == 5) {
        Tensor<S> xy = coord_features<S>(h, w);
        for (std::int64_t i = 0; i < 2 * plane; ++i) out.data()[3 * plane + i] = xy.data()[i];
    }
    return out;
}

}  // namespace biospix
