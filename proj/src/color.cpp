#include "biospix/color.hpp"

#include <cmath>

namespace biospix {

namespace {

double srgb_linear(double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); }

double lab_f(double t) {
    constexpr double d = 6.0 / 29.0;
    return t > d * d * d ? std::cbrt(t) : t / (3.0 * d * d) + 4.0 / 29.0;
}

}  // namespace

void rgb_to_lab(double r, double g, double b, double& l_out, double& a_out, double& b_out) {
    const double rl = srgb_linear(r), gl = srgb_linear(g), bl = srgb_linear(b);
    const double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
    const double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
    const double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
    const double fx = lab_f(x / 0.95047), fy = lab_f(y), fz = lab_f(z / 1.08883);
    l_out = 116.0 * fy - 16.0;
    a_out = 500.0 * (fx - fy);
    b_out = 200.0 * (fy - fz);
}

}  // namespace biospix
