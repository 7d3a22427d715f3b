#include "biospix/bal.hpp"

#include <algorithm>
#include <cmath>

namespace biospix {

double sigma_of_distance(double d, const BalConfig& cfg) {
    if (std::isnan(d) || d < 0.0) throw ParamError("sigma_of_distance: distance must be >= 0");
    const double raw = cfg.beta * std::exp(-std::pow(d, cfg.alpha));
    return std::clamp(raw, cfg.sigma_min, cfg.sigma_max);
}

FieldMap sigma_field(const FieldMap& dist, const BalConfig& cfg) {
    FieldMap s(dist.h, dist.w);
    for (std::size_t i = 0; i < dist.v.size(); ++i) s.v[i] = sigma_of_distance(dist.v[i], cfg);
    return s;
}

std::vector<double> gauss_weights(double sigma, int lo, int hi) {
    if (!(sigma > 0.0)) throw ParamError("gauss_weights: sigma must be positive");
    if (lo > hi) throw ParamError("gauss_weights: empty support");
    std::vector<double> w(static_cast<std::size_t>(hi - lo + 1));
    double sum = 0.0;
    for (int j = lo; j <= hi; ++j) {
        const double v = std::exp(-double(j) * j / (2.0 * sigma * sigma));
        w[static_cast<std::size_t>(j - lo)] = v;
        sum += v;
    }
    for (auto& v : w) v /= sum;
    return w;
}

double entropy_nats(const std::vector<double>& y, double eps) {
    double acc = 0.0;
    for (double v : y)
        if (v > 0.0) acc -= v * std::log(std::max(v, eps));
    return acc;
}

std::vector<CeRow> bal_distance_analysis(const BalConfig& cfg, const std::vector<double>& mu_gaps,
                                         const std::vector<double>& sigma_gaps) {
    cfg.validate();
    for (double m : mu_gaps)
        if (!(m >= 0.0)) throw ParamError("bal_distance_analysis: mean gaps must be >= 0");
    for (double s : sigma_gaps)
        if (!(s >= 0.0)) throw ParamError("bal_distance_analysis: sigma gaps must be >= 0");

    const int r = cfg.support_radius;
    std::vector<CeRow> rows;
    for (double m : mu_gaps) {
        for (double ds : sigma_gaps) {
            CeRow row;
            row.mu_gap = m;
            row.sigma_gap = ds;
            row.sigma_a = cfg.sigma_min;
            row.sigma_b = cfg.sigma_min + ds;
            // Shared integer grid wide enough for both full supports.
            const int len = static_cast<int>(std::ceil(m)) + 2 * r + 1;
            const double mean_p = r, mean_q = r + m;
            std::vector<double> p(static_cast<std::size_t>(len), 0.0), q(p);
            double sp = 0.0, sq = 0.0;
            for (int k = 0; k < len; ++k) {
                const double dp = k - mean_p, dq = k - mean_q;
                if (std::abs(dp) <= r + 1e-12) {
                    p[static_cast<std::size_t>(k)] = std::exp(-dp * dp / (2.0 * row.sigma_a * row.sigma_a));
                    sp += p[static_cast<std::size_t>(k)];
                }
                if (std::abs(dq) <= r + 1e-12) {
                    q[static_cast<std::size_t>(k)] = std::exp(-dq * dq / (2.0 * row.sigma_b * row.sigma_b));
                    sq += q[static_cast<std::size_t>(k)];
                }
            }
            double ce = 0.0;
            for (int k = 0; k < len; ++k) {
                const double pk = p[static_cast<std::size_t>(k)] / sp;
                if (pk > 0.0) ce -= pk * std::log(std::max(q[static_cast<std::size_t>(k)] / sq, cfg.eps_log));
            }
            row.ce = ce;
            rows.push_back(row);
        }
    }
    return rows;
}

}  // namespace biospix
