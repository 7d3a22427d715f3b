#pragma once

#include <utility>
#include <vector>

#include "biospix/common.hpp"

namespace biospix {

// Contrast sensitivity H(f) = 2.6 * (0.192 + 0.114 f) * exp(-(0.114 f)^1.1),
// evaluated in 64-bit. f is the radial spatial frequency in cycles/degree.
double csf_eval(double f);
double csf_eval_xy(double fx, double fy);

// Grid-search argmax of H over (0, max_f] with the given step.
double csf_peak(double max_f = 60.0, double step = 0.01);

// (f, H(f)) table over [0, max_f] inclusive.
std::vector<std::pair<double, double>> csf_table(double max_f, double step);

}  // namespace biospix
