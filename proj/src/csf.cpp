#include "biospix/csf.hpp"

#include <cmath>

namespace biospix {

double csf_eval(double f) {
    if (!std::isfinite(f) || f < 0.0) throw ParamError("csf_eval: frequency must be finite and >= 0");
    const double u = 0.114 * f;
    return 2.6 * (0.192 + u) * std::exp(-std::pow(u, 1.1));
}

double csf_eval_xy(double fx, double fy) {
    if (!std::isfinite(fx) || !std::isfinite(fy)) throw ParamError("csf_eval: frequency must be finite");
    return csf_eval(std::sqrt(fx * fx + fy * fy));
}

double csf_peak(double max_f, double step) {
    if (!(max_f > 0.0) || !(step > 0.0)) throw ParamError("csf_peak: max_f and step must be positive");
    double best_f = step, best_h = csf_eval(step);
    for (double f = 2 * step; f <= max_f + 1e-12; f += step) {
        const double h = csf_eval(f);
        if (h > best_h) {
            best_h = h;
            best_f = f;
        }
    }
    return best_f;
}

std::vector<std::pair<double, double>> csf_table(double max_f, double step) {
    if (!(max_f >= 0.0) || !(step > 0.0)) throw ParamError("csf_table: bad range");
    std::vector<std::pair<double, double>> rows;
    const std::int64_t n = static_cast<std::int64_t>(std::floor(max_f / step + 0.5));
    for (std::int64_t i = 0; i <= n; ++i) {
        const double f = i * step;
        rows.emplace_back(f, csf_eval(f));
    }
    return rows;
}

}  // namespace biospix
